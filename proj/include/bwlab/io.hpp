#pragma once

// Output plumbing: CSV tables, SVG line plots, JSON manifests and the
// sequence / parameter / posterior / trajectory file formats. Every file is
// written to a temporary sibling and renamed into place.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bwlab/baum_welch.hpp"
#include "bwlab/config.hpp"
#include "bwlab/errors.hpp"
#include "bwlab/hmm_core.hpp"
#include "bwlab/inference.hpp"
#include "bwlab/numeric.hpp"

namespace bwlab {

using Json = nlohmann::ordered_json;

inline std::string format_number(double v) { return detail::format_real(v); }

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory for '" + path.string() + "': " + ec.message());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into '" + path.string() + "'");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string checksum_hex(const std::string& bytes) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

/// A rectangular table of preformatted cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) {
    if (row.size() != header.size()) throw IoError("CSV row width does not match header");
    rows.push_back(std::move(row));
  }
};

inline std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char ch : cell) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string render_csv(const CsvTable& t) {
  if (t.header.empty()) throw IoError("CSV table has no columns");
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += "\r\n";
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

inline void emit_csv(const std::filesystem::path& path, const CsvTable& t) { write_file_atomic(path, render_csv(t)); }

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  auto end_row = [&] {
    row.push_back(cell);
    cell.clear();
    if (t.header.empty()) t.header = row;
    else if (row.size() != t.header.size()) throw IoError("CSV row width does not match header");
    else t.rows.push_back(row);
    row.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') cell += '"', ++i;
      else if (ch == '"') quoted = false;
      else cell += ch;
      continue;
    }
    if (ch == '"') quoted = true, any = true;
    else if (ch == ',') row.push_back(cell), cell.clear(), any = true;
    else if (ch == '\r') continue;
    else if (ch == '\n') end_row();
    else cell += ch, any = true;
  }
  if (any || !cell.empty()) end_row();
  if (t.header.empty()) throw IoError("CSV is empty");
  return t;
}

inline double parse_cell(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (const auto v = parse_real(s)) return *v;
  throw IoError("not a number in CSV: '" + s + "'");
}

// ---------------------------------------------------------------------------
// SVG line plots

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotAxes {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

struct AxisMap {
  double lo, hi;
  bool log;
  double px0, px1;
  double operator()(double v) const {
    const double a = log ? std::log10(v) : v;
    return px0 + (a - lo) / (hi - lo) * (px1 - px0);
  }
};

inline std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

}  // namespace detail

/// Standalone SVG; points that cannot be drawn on a log axis break the line.
inline std::string render_svg_lineplot(const std::vector<PlotSeries>& series, const PlotAxes& axes) {
  if (series.empty()) throw IoError("plot needs at least one series");
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const PlotSeries& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) throw IoError("series '" + s.label + "' is empty or ragged");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double x = s.x[i], y = s.y[i];
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if ((axes.log_x && x <= 0.0) || (axes.log_y && y <= 0.0)) continue;
      const double ax = axes.log_x ? std::log10(x) : x, ay = axes.log_y ? std::log10(y) : y;
      xlo = std::min(xlo, ax), xhi = std::max(xhi, ax), ylo = std::min(ylo, ay), yhi = std::max(yhi, ay);
    }
  }
  if (!std::isfinite(xlo) || !std::isfinite(ylo)) throw IoError("no drawable points");
  if (xhi - xlo < 1e-12) xlo -= 0.5, xhi += 0.5;
  if (yhi - ylo < 1e-12) ylo -= 0.5, yhi += 0.5;
  if (axes.log_y) ylo = std::floor(ylo), yhi = std::ceil(yhi);
  else {
    const double pad = 0.05 * (yhi - ylo);
    ylo -= pad, yhi += pad;
  }
  if (axes.log_x) xlo = std::floor(xlo), xhi = std::ceil(xhi);

  const double W = 640, H = 420, L = 80, R = 190, Tm = 40, B = 60;
  const detail::AxisMap mx{xlo, xhi, axes.log_x, L, W - R};
  const detail::AxisMap my{ylo, yhi, axes.log_y, H - B, Tm};
  using detail::fmt;
  std::string o;
  o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  o += "<text x=\"" + fmt("%.1f", (L + W - R) / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::svg_escape(axes.title) + "</text>\n";
  o += "<rect x=\"" + fmt("%.1f", L) + "\" y=\"" + fmt("%.1f", Tm) + "\" width=\"" + fmt("%.1f", W - R - L) +
       "\" height=\"" + fmt("%.1f", H - B - Tm) + "\" fill=\"none\" stroke=\"black\"/>\n";

  auto tick_values = [](double lo, double hi, bool log) {
    if (!log) return detail::nice_ticks(lo, hi);
    std::vector<double> t;
    const int step = std::max(1, static_cast<int>(std::ceil((hi - lo) / 8.0)));
    for (int e = static_cast<int>(lo); e <= static_cast<int>(hi); e += step) t.push_back(e);
    return t;
  };
  auto tick_label = [](double v, bool log) { return log ? "1e" + fmt("%.0f", v) : fmt("%g", v); };
  for (double t : tick_values(xlo, xhi, axes.log_x)) {
    const double px = L + (t - xlo) / (xhi - xlo) * (W - R - L);
    o += "<line x1=\"" + fmt("%.1f", px) + "\" y1=\"" + fmt("%.1f", H - B) + "\" x2=\"" + fmt("%.1f", px) + "\" y2=\"" +
         fmt("%.1f", H - B + 5) + "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + fmt("%.1f", px) + "\" y=\"" + fmt("%.1f", H - B + 18) + "\" text-anchor=\"middle\">" +
         tick_label(t, axes.log_x) + "</text>\n";
  }
  for (double t : tick_values(ylo, yhi, axes.log_y)) {
    const double py = (H - B) - (t - ylo) / (yhi - ylo) * (H - B - Tm);
    o += "<line x1=\"" + fmt("%.1f", L - 5) + "\" y1=\"" + fmt("%.1f", py) + "\" x2=\"" + fmt("%.1f", L) + "\" y2=\"" +
         fmt("%.1f", py) + "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + fmt("%.1f", L - 8) + "\" y=\"" + fmt("%.1f", py + 4) + "\" text-anchor=\"end\">" +
         tick_label(t, axes.log_y) + "</text>\n";
  }
  o += "<text x=\"" + fmt("%.1f", (L + W - R) / 2) + "\" y=\"" + fmt("%.1f", H - 15) + "\" text-anchor=\"middle\">" +
       detail::svg_escape(axes.x_label) + "</text>\n";
  o += "<text x=\"18\" y=\"" + fmt("%.1f", (Tm + H - B) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       fmt("%.1f", (Tm + H - B) / 2) + ")\">" + detail::svg_escape(axes.y_label) + "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    std::string pts;
    auto flush = [&] {
      if (!pts.empty())
        o += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(si)) + "\" stroke-width=\"1.5\" points=\"" +
             pts + "\"/>\n";
      pts.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double x = s.x[i], y = s.y[i];
      const bool ok = std::isfinite(x) && std::isfinite(y) && !(axes.log_x && x <= 0.0) && !(axes.log_y && y <= 0.0);
      if (!ok) {
        flush();
        continue;
      }
      if (!pts.empty()) pts += ' ';
      pts += fmt("%.2f", mx(x)) + "," + fmt("%.2f", my(y));
    }
    flush();
    const double ly = Tm + 10 + 18.0 * static_cast<double>(si);
    o += "<line x1=\"" + fmt("%.1f", W - R + 12) + "\" y1=\"" + fmt("%.1f", ly) + "\" x2=\"" + fmt("%.1f", W - R + 36) +
         "\" y2=\"" + fmt("%.1f", ly) + "\" stroke=\"" + detail::palette(si) + "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + fmt("%.1f", W - R + 42) + "\" y=\"" + fmt("%.1f", ly + 4) + "\">" + detail::svg_escape(s.label) +
         "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

inline void emit_svg_lineplot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, const PlotAxes& axes) {
  write_file_atomic(path, render_svg_lineplot(series, axes));
}

/// Long-format table `series,x,y` holding exactly the plotted points.
inline CsvTable series_table(const std::vector<PlotSeries>& series) {
  if (series.empty()) throw IoError("no series to write");
  CsvTable t{{"series", "x", "y"}, {}};
  for (const PlotSeries& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) throw IoError("series '" + s.label + "' is empty or ragged");
  }
  for (const PlotSeries& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) t.add_row({s.label, format_number(s.x[i]), format_number(s.y[i])});
  return t;
}

/// Inverse of series_table; also accepts a wide table (first column is x).
inline std::vector<PlotSeries> series_from_table(const CsvTable& t) {
  std::vector<PlotSeries> out;
  if (t.header == std::vector<std::string>{"series", "x", "y"}) {
    std::map<std::string, std::size_t> index;
    for (const auto& r : t.rows) {
      auto [it, fresh] = index.emplace(r[0], out.size());
      if (fresh) out.push_back({r[0], {}, {}});
      out[it->second].x.push_back(parse_cell(r[1]));
      out[it->second].y.push_back(parse_cell(r[2]));
    }
  } else {
    if (t.header.size() < 2) throw IoError("plot CSV needs an x column and at least one series");
    for (std::size_t c = 1; c < t.header.size(); ++c) {
      PlotSeries s{t.header[c], {}, {}};
      for (const auto& r : t.rows) {
        s.x.push_back(parse_cell(r[0]));
        s.y.push_back(parse_cell(r[c]));
      }
      out.push_back(std::move(s));
    }
  }
  if (out.empty()) throw IoError("plot CSV has no rows");
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct Manifest {
  std::string version = BWLAB_VERSION;
  ExperimentConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> files;  // relative path, checksum
  Json summary = Json::object();
  Json assertions = Json::array();
  double wall_clock_s = 0.0;

  Json to_json() const {
    Json j;
    j["tool"] = "bwlab";
    j["version"] = version;
    j["kind"] = kind_name(config.kind);
    Json cfg = Json::object();
    for (const auto& [k, v] : config_entries(config)) cfg[k] = v;
    j["config"] = cfg;
    j["config_hash"] = checksum_hex(config_text(config));
    j["seeds"] = seeds;
    Json fl = Json::array();
    for (const auto& [p, c] : files) fl.push_back({{"path", p}, {"fnv1a64", c}});
    j["files"] = fl;
    j["summary"] = summary;
    j["assertions"] = assertions;
    j["wall_clock_s"] = wall_clock_s;
    return j;
  }
};

/// Rebuilds the config echoed in a manifest.
inline ExperimentConfig config_from_manifest(const Json& j) {
  if (!j.contains("config") || !j["config"].is_object()) throw IoError("manifest has no config object");
  std::string text;
  for (const auto& [k, v] : j["config"].items()) text += k + " = " + v.get<std::string>() + "\n";
  return parse_config_text(text);
}

/// Re-reads every listed file and compares checksums.
inline bool verify_manifest_checksums(const std::filesystem::path& dir, const Json& j) {
  for (const auto& f : j.at("files")) {
    if (checksum_hex(read_file(dir / f.at("path").get<std::string>())) != f.at("fnv1a64").get<std::string>()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Data formats

/// `i,z,x_1..x_d`; extension rows keep their out-of-range indices.
inline CsvTable sequence_table(const SampledPath& p) {
  CsvTable t;
  t.header = {"i", "z"};
  for (int c = 1; c <= p.observed.dim(); ++c) t.header.push_back("x_" + std::to_string(c));
  for (int i = p.observed.first_index(); i <= p.observed.last_index(); ++i) {
    std::vector<std::string> row{std::to_string(i), std::to_string(p.hidden.at(i))};
    for (int c = 0; c < p.observed.dim(); ++c) row.push_back(format_number(p.observed.at(i)(c)));
    t.add_row(std::move(row));
  }
  return t;
}

inline SampledPath sequence_from_table(const CsvTable& t, int n) {
  if (t.header.size() < 3 || t.header[0] != "i" || t.header[1] != "z") throw IoError("sequence CSV needs i,z,x_1..x_d");
  const int d = static_cast<int>(t.header.size()) - 2;
  const int total = static_cast<int>(t.rows.size());
  if (total < n || (total - n) % 2 != 0) throw IoError("sequence CSV length does not match n");
  const int ext = (total - n) / 2;
  Matrix x(total, d);
  std::vector<int> z(static_cast<std::size_t>(total));
  for (int r = 0; r < total; ++r) {
    if (static_cast<int>(parse_cell(t.rows[static_cast<std::size_t>(r)][0])) != r + 1 - ext) throw IoError("sequence CSV indices are not contiguous");
    z[static_cast<std::size_t>(r)] = static_cast<int>(parse_cell(t.rows[static_cast<std::size_t>(r)][1]));
    for (int c = 0; c < d; ++c) x(r, c) = parse_cell(t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c + 2)]);
  }
  SampledPath p;
  p.observed = ObservedSequence{std::move(x), n, ext};
  p.hidden = HiddenSequence{std::move(z), n, ext};
  return p;
}

/// Parameter file: `beta`, `mu` (comma list), `sigma`, `b_bound`.
inline std::string parameter_text(const ThetaParams& th, double b_bound) {
  std::vector<double> mu(th.mu.data(), th.mu.data() + th.mu.size());
  return "beta = " + format_number(th.beta) + "\nmu = " + detail::join(mu, format_number) +
         "\nsigma = " + format_number(th.sigma) + "\nb_bound = " + format_number(b_bound) + "\n";
}

struct ParameterFile {
  ThetaParams theta;
  double b_bound = 0.0;
};

inline ParameterFile parse_parameter_text(const std::string& text) {
  ParameterFile out;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  std::map<std::string, bool> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "", "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const detail::ConfigReader r(line_no, key);
    if (!seen.emplace(key, true).second) r.fail("duplicate key");
    if (key == "beta") out.theta.beta = r.real(value);
    else if (key == "sigma") out.theta.sigma = r.real(value);
    else if (key == "b_bound") out.b_bound = r.real(value);
    else if (key == "mu") {
      const std::vector<double> mu = r.list<double>(value, [&](const std::string& v) { return r.real(v); });
      out.theta.mu = Eigen::Map<const Vector>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    } else r.fail("unknown key");
  }
  for (const char* k : {"beta", "mu", "sigma", "b_bound"})
    if (!seen.count(k)) throw ParseError(0, k, "missing key");
  return out;
}

/// `i,z,gamma` (one row per index and state) for the core x_1^n.
inline CsvTable gamma_table(const Matrix& gamma) {
  CsvTable t{{"i", "z", "gamma"}, {}};
  for (Eigen::Index r = 0; r < gamma.rows(); ++r)
    for (Eigen::Index z = 0; z < gamma.cols(); ++z)
      t.add_row({std::to_string(r + 1), std::to_string(z), format_number(gamma(r, z))});
  return t;
}

/// `i,a,b,xi` with xi = p(z_{i-1} = a, z_i = b | x), i = 1..n.
inline CsvTable xi_table(const PosteriorMarginals& post) {
  CsvTable t{{"i", "a", "b", "xi"}, {}};
  auto emit = [&](int i, const Matrix& m) {
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b)
        t.add_row({std::to_string(i), std::to_string(a), std::to_string(b), format_number(m(a, b))});
  };
  emit(1, post.xi0);
  for (std::size_t i = 0; i < post.xi.size(); ++i) emit(static_cast<int>(i) + 2, post.xi[i]);
  return t;
}

/// `t,loglik,stat_err,opt_err,beta,mu_norm`.
inline CsvTable trajectory_table(const EmTrajectory& tr) {
  CsvTable t{{"t", "loglik", "stat_err", "opt_err", "beta", "mu_norm"}, {}};
  for (std::size_t i = 0; i < tr.size(); ++i)
    t.add_row({std::to_string(i), format_number(tr.log_liks[i]), format_number(tr.stat_err[i]), format_number(tr.opt_err[i]),
               format_number(tr.iterates[i].beta), format_number(tr.iterates[i].mu.norm())});
  return t;
}

}  // namespace bwlab
