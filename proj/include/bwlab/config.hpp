#pragma once

// Experiment configuration: flat `key = value` text, `#` comments, comma
// separated lists. Unknown or repeated keys are errors.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bwlab/baum_welch.hpp"
#include "bwlab/errors.hpp"
#include "bwlab/numeric.hpp"

namespace bwlab {

enum class ExperimentKind { kConvergence, kSnrSweep, kNScaling, kContraction, kTruncation, kMixingChecks };

inline const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kConvergence: return "convergence";
    case ExperimentKind::kSnrSweep: return "snr_sweep";
    case ExperimentKind::kNScaling: return "n_scaling";
    case ExperimentKind::kContraction: return "contraction";
    case ExperimentKind::kTruncation: return "truncation";
    case ExperimentKind::kMixingChecks: return "mixing_checks";
  }
  return "?";
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kConvergence;
  int d = 10;
  int n = 1000;
  std::vector<int> n_grid{500, 1000, 2000, 4000, 8000};
  int T = 0;  // 0 until defaulted to 4 ceil(log n)
  double rho_mix = 0.6;
  std::vector<double> snr{1.5};
  bool snr_is_squared = false;
  double sigma = 1.0;
  double b_bound = 0.6;
  double init_radius_frac = 0.25;
  int n_inits = 5;
  std::vector<std::uint64_t> seeds{1};
  int k = 16;
  std::vector<int> k_grid{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  int mc_sequences = 32;
  int seq_len = 200;
  int probes = 40;
  int trials = 50;
  int instances = 200;
  int l_max = 8;
  std::string output_dir = "out";

  /// ||mu*|| / sigma for a grid entry under the configured SNR convention.
  double eta(double snr_value) const { return snr_is_squared ? std::sqrt(snr_value) : snr_value; }
  double zeta_star() const { return 0.5 * (1.0 - rho_mix); }
  FeasibleSet feasible() const { return FeasibleSet{b_bound}; }

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

class ConfigReader {
 public:
  ConfigReader(int line, std::string key) : line_(line), key_(std::move(key)) {}

  double real(const std::string& v) const {
    const auto out = parse_real(v);
    if (!out || !std::isfinite(*out)) fail("not a finite number: '" + v + "'");
    return *out;
  }

  long long integer(const std::string& v) const {
    try {
      std::size_t pos = 0;
      const long long out = std::stoll(v, &pos);
      if (pos != v.size()) fail("trailing characters in integer '" + v + "'");
      return out;
    } catch (const std::logic_error&) {
      fail("not an integer: '" + v + "'");
    }
  }

  int int32(const std::string& v) const {
    const long long x = integer(v);
    if (x < -2147483647LL || x > 2147483647LL) fail("integer out of range: " + v);
    return static_cast<int>(x);
  }

  bool boolean(const std::string& v) const {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("expected true/false, got '" + v + "'");
  }

  template <class T, class F>
  std::vector<T> list(const std::string& v, F&& parse) const {
    std::vector<T> out;
    for (const std::string& item : split_list(v)) {
      if (item.empty()) fail("empty list entry");
      out.push_back(parse(item));
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, key_, what); }

 private:
  int line_;
  std::string key_;
};

}  // namespace detail

inline ExperimentKind parse_kind(const std::string& v) {
  for (ExperimentKind k : {ExperimentKind::kConvergence, ExperimentKind::kSnrSweep, ExperimentKind::kNScaling,
                           ExperimentKind::kContraction, ExperimentKind::kTruncation, ExperimentKind::kMixingChecks})
    if (v == kind_name(k)) return k;
  throw ValidationError("kind: unknown experiment kind '" + v + "'");
}

inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
  };
  need(c.d >= 1, "d: must be >= 1");
  need(c.n >= 1, "n: must be >= 1");
  need(c.T >= 1, "T: must be >= 1");
  need(!c.n_grid.empty(), "n_grid: must be nonempty");
  for (int v : c.n_grid) need(v >= 1, "n_grid: entries must be >= 1");
  need(c.rho_mix >= 0.0 && c.rho_mix < 1.0, "rho_mix: must lie in [0,1)");
  need(c.b_bound >= 0.0 && c.b_bound < 1.0, "b_bound: must lie in [0,1)");
  need(c.rho_mix <= c.b_bound, "rho_mix: must not exceed b_bound (theta* must be feasible)");
  need(!c.snr.empty(), "snr: must be nonempty");
  for (double v : c.snr) need(v > 0.0 && std::isfinite(v), "snr: entries must be positive");
  need(c.sigma > 0.0 && std::isfinite(c.sigma), "sigma: must be positive");
  need(c.init_radius_frac > 0.0 && c.init_radius_frac <= 1.0, "init_radius_frac: must lie in (0,1]");
  need(c.n_inits >= 1, "n_inits: must be >= 1");
  need(!c.seeds.empty(), "seeds: must be nonempty");
  need(c.k >= 0, "k: must be >= 0");
  need(!c.k_grid.empty(), "k_grid: must be nonempty");
  for (int v : c.k_grid) need(v >= 0, "k_grid: entries must be >= 0");
  need(c.mc_sequences >= 2, "mc_sequences: must be >= 2");
  need(c.seq_len >= 1, "seq_len: must be >= 1");
  need(c.probes >= 1, "probes: must be >= 1");
  need(c.trials >= 1, "trials: must be >= 1");
  need(c.instances >= 1, "instances: must be >= 1");
  need(c.l_max >= 0, "l_max: must be >= 0");
  need(!c.output_dir.empty(), "output_dir: must be nonempty");
}

/// Parses config text; `T` defaults to 4 ceil(log n) when absent.
inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  bool have_T = false;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "", "expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "rho") key = "rho_mix";
    if (key == "seed") key = "seeds";
    const detail::ConfigReader r(line_no, key);
    if (key.empty()) r.fail("missing key");
    if (value.empty()) r.fail("missing value");
    if (!seen.emplace(key, line_no).second) r.fail("duplicate key");
    auto to_int = [&](const std::string& v) { return r.int32(v); };
    auto to_real = [&](const std::string& v) { return r.real(v); };

    if (key == "kind") c.kind = parse_kind(value);
    else if (key == "d") c.d = r.int32(value);
    else if (key == "n") c.n = r.int32(value);
    else if (key == "n_grid") c.n_grid = r.list<int>(value, to_int);
    else if (key == "T") c.T = r.int32(value), have_T = true;
    else if (key == "rho_mix") c.rho_mix = r.real(value);
    else if (key == "snr") c.snr = r.list<double>(value, to_real);
    else if (key == "snr_is_squared") c.snr_is_squared = r.boolean(value);
    else if (key == "sigma") c.sigma = r.real(value);
    else if (key == "b_bound") c.b_bound = r.real(value);
    else if (key == "init_radius_frac") c.init_radius_frac = r.real(value);
    else if (key == "n_inits") c.n_inits = r.int32(value);
    else if (key == "seeds")
      c.seeds = r.list<std::uint64_t>(value, [&](const std::string& v) {
        const auto s = parse_u64(v);
        if (!s) r.fail("seeds must be integers in [0, 2^64)");
        return *s;
      });
    else if (key == "k") c.k = r.int32(value);
    else if (key == "k_grid") c.k_grid = r.list<int>(value, to_int);
    else if (key == "mc_sequences") c.mc_sequences = r.int32(value);
    else if (key == "seq_len") c.seq_len = r.int32(value);
    else if (key == "probes") c.probes = r.int32(value);
    else if (key == "trials") c.trials = r.int32(value);
    else if (key == "instances") c.instances = r.int32(value);
    else if (key == "l_max") c.l_max = r.int32(value);
    else if (key == "output_dir") c.output_dir = value;
    else r.fail("unknown key");
  }
  if (!have_T) c.T = c.n >= 1 ? default_iterations(std::max(c.n, 2)) : 1;
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace detail {

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace detail

/// Every field as an ordered (key, value) list; values reparse losslessly.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  auto i2s = [](int v) { return std::to_string(v); };
  auto u2s = [](std::uint64_t v) { return std::to_string(v); };
  auto r2s = [](double v) { return detail::format_real(v); };
  return {
      {"kind", kind_name(c.kind)},
      {"d", i2s(c.d)},
      {"n", i2s(c.n)},
      {"n_grid", detail::join(c.n_grid, i2s)},
      {"T", i2s(c.T)},
      {"rho_mix", r2s(c.rho_mix)},
      {"snr", detail::join(c.snr, r2s)},
      {"snr_is_squared", c.snr_is_squared ? "true" : "false"},
      {"sigma", r2s(c.sigma)},
      {"b_bound", r2s(c.b_bound)},
      {"init_radius_frac", r2s(c.init_radius_frac)},
      {"n_inits", i2s(c.n_inits)},
      {"seeds", detail::join(c.seeds, u2s)},
      {"k", i2s(c.k)},
      {"k_grid", detail::join(c.k_grid, i2s)},
      {"mc_sequences", i2s(c.mc_sequences)},
      {"seq_len", i2s(c.seq_len)},
      {"probes", i2s(c.probes)},
      {"trials", i2s(c.trials)},
      {"instances", i2s(c.instances)},
      {"l_max", i2s(c.l_max)},
      {"output_dir", c.output_dir},
  };
}

inline std::string config_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(config_text(c)); }

}  // namespace bwlab
