#pragma once

// Declarative experiments. Each kind computes a RunOutput (record + tables +
// plots) from an ExperimentConfig; write_run() puts it on disk with a
// manifest. Runs inside an experiment execute in parallel and are gathered
// by run index, so payloads do not depend on the thread count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bwlab/baum_welch.hpp"
#include "bwlab/config.hpp"
#include "bwlab/hmm_core.hpp"
#include "bwlab/io.hpp"
#include "bwlab/numeric.hpp"
#include "bwlab/parallel.hpp"
#include "bwlab/rng.hpp"
#include "bwlab/theory.hpp"

namespace bwlab {

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Per-EM-run summary echoed into the record.
struct RunSummary {
  int run = 0;
  std::uint64_t seed = 0;
  double snr = 0.0;
  int n = 0;
  int iterations = 0;
  double initial_stat_err = 0.0;
  double final_stat_err = 0.0;
  double plateau = 0.0;
  bool plateaued = false;
  double rate = kNaN;
  bool rate_fit_failed = false;
};

struct RunRecord {
  ExperimentConfig config;
  std::vector<RunSummary> runs;
  Json summary = Json::object();
  std::vector<Assertion> assertions;
  std::vector<std::string> files;
  double wall_clock_s = 0.0;

  bool all_passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
  }
};

struct NamedTable {
  std::string name;
  CsvTable table;
};

struct NamedPlot {
  std::string name;
  std::vector<PlotSeries> series;
  PlotAxes axes;
};

struct RunOutput {
  RunRecord record;
  std::vector<NamedTable> tables;
  std::vector<NamedPlot> plots;
};

// ---------------------------------------------------------------------------
// Shared pieces

/// theta*: zeta* = (1 - rho)/2 and mu* uniform on the sphere of radius eta sigma.
inline ThetaParams draw_theta_star(const ExperimentConfig& c, double eta, std::uint64_t seed, std::uint64_t run) {
  Rng rng = make_rng(seed, run, Purpose::kTruth);
  return ThetaParams::from_zeta(c.zeta_star(), eta * c.sigma * random_direction(c.d, rng), c.sigma);
}

/// theta^0: mu^0 uniform in the ball of radius init_radius_frac ||mu*|| and zeta^0 = 1/2.
inline ThetaParams draw_init(const ExperimentConfig& c, const ThetaParams& star, std::uint64_t seed, std::uint64_t run) {
  Rng rng = make_rng(seed, run, Purpose::kInit);
  return ThetaParams{0.0, random_in_ball(star.mu, c.init_radius_frac * star.mu.norm(), rng), star.sigma};
}

inline std::size_t tail_start(std::size_t len) {
  const std::size_t tail = std::max<std::size_t>(1, (len + 3) / 4);
  return len - tail;
}

/// Median of the last 25% of the curve.
inline double plateau_value(const std::vector<double>& err) {
  return median(std::vector<double>(err.begin() + static_cast<std::ptrdiff_t>(tail_start(err.size())), err.end()));
}

/// Relative spread (max - min)/median over the last 25% below 5%.
inline bool is_plateaued(const std::vector<double>& err, double tol = 0.05) {
  const std::vector<double> tail(err.begin() + static_cast<std::ptrdiff_t>(tail_start(err.size())), err.end());
  if (tail.size() < 2) return false;
  const auto [lo, hi] = std::minmax_element(tail.begin(), tail.end());
  const double m = median(tail);
  return m > 0.0 ? (*hi - *lo) / m < tol : *hi - *lo == 0.0;
}

struct RateFit {
  double rate = kNaN;
  int points = 0;
  bool fit_failed = false;
};

/// Geometric rate exp(slope) of log error over iterations 0..t_hit, where
/// t_hit is the first iteration within 1.5x of the final error. With fewer
/// than three points the fit fails (reported) and the rate falls back to
/// (e_hit / e_0)^{1/t_hit}.
inline RateFit pre_plateau_rate(const std::vector<double>& err) {
  RateFit out;
  const double final = err.back();
  std::size_t hit = err.size() - 1;
  for (std::size_t t = 0; t < err.size(); ++t)
    if (err[t] <= 1.5 * final) {
      hit = t;
      break;
    }
  out.points = static_cast<int>(hit) + 1;
  if (out.points >= 3) {
    std::vector<double> xs, ys;
    for (std::size_t t = 0; t <= hit; ++t) {
      if (!(err[t] > 0.0)) break;
      xs.push_back(static_cast<double>(t));
      ys.push_back(std::log(err[t]));
    }
    if (xs.size() >= 3) {
      out.rate = std::exp(fit_line(xs, ys).slope);
      return out;
    }
  }
  out.fit_failed = true;
  if (hit > 0 && err[0] > 0.0) out.rate = std::pow(std::max(err[hit], 0.0) / err[0], 1.0 / static_cast<double>(hit));
  return out;
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline std::vector<double> doubles(const std::vector<int>& v) { return {v.begin(), v.end()}; }

inline std::string suffix(const char* tag, std::uint64_t v) { return std::string(tag) + std::to_string(v); }

inline Assertion make_assertion(std::string name, bool passed, std::string detail) {
  return Assertion{std::move(name), passed, std::move(detail)};
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// convergence

/// Final iterates closer than this fraction of the plateau are the same
/// fixed point up to rounding.
inline constexpr double kDistinctFixedPointTol = 1e-10;

struct EmRunResult {
  EmTrajectory trajectory;
  RunSummary summary;
};

inline EmRunResult run_single_em(const ExperimentConfig& c, const ObservedSequence& x, const ThetaParams& star,
                                 const ThetaParams& init, int T) {
  EmRunResult r;
  r.trajectory = run_em(x, init, T, EmVariant::full(), star, {c.feasible()});
  const EmTrajectory& tr = r.trajectory;
  r.summary.n = x.n;
  r.summary.iterations = T;
  r.summary.initial_stat_err = tr.stat_err.front();
  r.summary.final_stat_err = tr.stat_err.back();
  r.summary.plateau = plateau_value(tr.stat_err);
  r.summary.plateaued = is_plateaued(tr.stat_err);
  const RateFit fit = pre_plateau_rate(tr.stat_err);
  r.summary.rate = fit.rate;
  r.summary.rate_fit_failed = fit.fit_failed;
  return r;
}

inline RunOutput convergence_experiment(const ExperimentConfig& c) {
  RunOutput out;
  out.record.config = c;
  const double eta = c.eta(c.snr.front());
  const int S = static_cast<int>(c.seeds.size());
  const int I = c.n_inits;
  std::vector<EmRunResult> results(static_cast<std::size_t>(S * I));
  std::vector<ThetaParams> stars(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) stars[static_cast<std::size_t>(s)] = draw_theta_star(c, eta, c.seeds[static_cast<std::size_t>(s)], 0);
  std::vector<ObservedSequence> data(static_cast<std::size_t>(S));
  parallel_for(S, [&](int s) {
    data[static_cast<std::size_t>(s)] =
        sample_sequence(stars[static_cast<std::size_t>(s)], c.n, 0, stream_seed(c.seeds[static_cast<std::size_t>(s)], 0, Purpose::kData)).observed;
  });
  parallel_for(S * I, [&](int job) {
    const int s = job / I, i = job % I;
    const std::uint64_t seed = c.seeds[static_cast<std::size_t>(s)];
    const ThetaParams init = draw_init(c, stars[static_cast<std::size_t>(s)], seed, static_cast<std::uint64_t>(i));
    EmRunResult r = run_single_em(c, data[static_cast<std::size_t>(s)], stars[static_cast<std::size_t>(s)], init, c.T);
    r.summary.run = job;
    r.summary.seed = seed;
    r.summary.snr = c.snr.front();
    results[static_cast<std::size_t>(job)] = std::move(r);
  });

  const double floor_scale = std::sqrt(static_cast<double>(c.d) / c.n) * c.sigma;
  std::vector<double> seed_plateau, seed_cross_max, seed_cross_min, seed_all_plateaued;
  CsvTable summary{{"seed", "init", "initial_stat_err", "final_stat_err", "plateau", "plateaued", "dist_to_first_final"}, {}};
  for (int s = 0; s < S; ++s) {
    const std::uint64_t seed = c.seeds[static_cast<std::size_t>(s)];
    std::vector<PlotSeries> series;
    CsvTable ref1{{"t", "init", "opt_err_to_first"}, {}};
    std::vector<double> plateaus;
    bool all_plateaued = true;
    const ThetaParams& first_final = results[static_cast<std::size_t>(s * I)].trajectory.final_iterate();
    for (int i = 0; i < I; ++i) {
      const EmRunResult& r = results[static_cast<std::size_t>(s * I + i)];
      const EmTrajectory& tr = r.trajectory;
      out.tables.push_back({"convergence_" + suffix("seed", seed) + "_" + suffix("init", static_cast<std::uint64_t>(i)) + "_trajectory",
                            trajectory_table(tr)});
      std::vector<double> ts;
      for (std::size_t t = 0; t < tr.size(); ++t) {
        ts.push_back(static_cast<double>(t));
        ref1.add_row({std::to_string(t), std::to_string(i), format_number(oplus_distance(tr.iterates[t], first_final))});
      }
      series.push_back({"optimization error " + std::to_string(i + 1), ts, tr.opt_err});
      series.push_back({"statistical error " + std::to_string(i + 1), ts, tr.stat_err});
      plateaus.push_back(r.summary.plateau);
      all_plateaued = all_plateaued && r.summary.plateaued;
      summary.add_row({std::to_string(seed), std::to_string(i), format_number(r.summary.initial_stat_err),
                       format_number(r.summary.final_stat_err), format_number(r.summary.plateau), r.summary.plateaued ? "1" : "0",
                       format_number(label_swap_distance(tr.final_iterate(), first_final))});
      out.record.runs.push_back(r.summary);
    }
    out.tables.push_back({"convergence_" + suffix("seed", seed) + "_opt_err_to_first", std::move(ref1)});
    out.plots.push_back({"convergence_" + suffix("seed", seed),
                         std::move(series),
                         {"EM error curves (seed " + std::to_string(seed) + ")", "iteration", "error", false, true}});
    double cmax = 0.0, cmin = INFINITY;
    for (int a = 0; a < I; ++a)
      for (int b = a + 1; b < I; ++b) {
        const double dist = label_swap_distance(results[static_cast<std::size_t>(s * I + a)].trajectory.final_iterate(),
                                                results[static_cast<std::size_t>(s * I + b)].trajectory.final_iterate());
        cmax = std::max(cmax, dist);
        cmin = std::min(cmin, dist);
      }
    seed_plateau.push_back(median(plateaus));
    seed_cross_max.push_back(cmax);
    seed_cross_min.push_back(I > 1 ? cmin : kNaN);
    seed_all_plateaued.push_back(all_plateaued ? 1.0 : 0.0);
  }
  out.tables.push_back({"convergence_summary", std::move(summary)});

  const double plateau = median(seed_plateau);
  const double cross_max = median(seed_cross_max);
  const double cross_min = median(seed_cross_min);
  const double plateaued_frac = median(seed_all_plateaued);
  Json& sm = out.record.summary;
  sm["median_plateau"] = plateau;
  sm["floor_scale_sqrt_d_over_n"] = floor_scale;
  sm["plateau_over_floor"] = plateau / floor_scale;
  sm["median_cross_run_max_distance"] = cross_max;
  sm["median_cross_run_min_distance"] = number_or_null(cross_min);
  sm["median_all_runs_plateaued"] = plateaued_frac;
  out.record.assertions.push_back(make_assertion("all_runs_plateau", plateaued_frac >= 1.0,
                                                 "median over seeds of all-runs-plateaued = " + fixed(plateaued_frac)));
  out.record.assertions.push_back(make_assertion(
      "plateau_within_10x_of_sqrt_d_over_n", plateau <= 10.0 * floor_scale && plateau >= 0.1 * floor_scale,
      "plateau " + fixed(plateau) + " vs sqrt(d/n) sigma = " + fixed(floor_scale)));
  if (I > 1)
    out.record.assertions.push_back(make_assertion(
        "cross_run_distances_nonzero_within_3x_plateau", cross_min > kDistinctFixedPointTol * plateau && cross_max <= 3.0 * plateau,
        "min " + fixed(cross_min) + ", max " + fixed(cross_max) + ", 3x plateau " + fixed(3.0 * plateau)));
  return out;
}

// ---------------------------------------------------------------------------
// snr_sweep

inline RunOutput snr_sweep(const ExperimentConfig& c) {
  RunOutput out;
  out.record.config = c;
  const int G = static_cast<int>(c.snr.size());
  const int S = static_cast<int>(c.seeds.size());
  const int I = c.n_inits;
  std::vector<RunSummary> runs(static_cast<std::size_t>(G * S * I));
  parallel_for(G * S, [&](int job) {
    const int g = job / S, s = job % S;
    const std::uint64_t seed = c.seeds[static_cast<std::size_t>(s)];
    const std::uint64_t stream = static_cast<std::uint64_t>(g);
    const ThetaParams star = draw_theta_star(c, c.eta(c.snr[static_cast<std::size_t>(g)]), seed, stream);
    const ObservedSequence x = sample_sequence(star, c.n, 0, stream_seed(seed, stream, Purpose::kData)).observed;
    for (int i = 0; i < I; ++i) {
      const ThetaParams init = draw_init(c, star, seed, stream * 1000 + static_cast<std::uint64_t>(i));
      RunSummary r = run_single_em(c, x, star, init, c.T).summary;
      r.run = job * I + i;
      r.seed = seed;
      r.snr = c.snr[static_cast<std::size_t>(g)];
      runs[static_cast<std::size_t>(job * I + i)] = r;
    }
  });
  out.record.runs = runs;

  CsvTable per_run{{"snr", "seed", "init", "rate", "rate_fit_failed", "final_stat_err", "plateau"}, {}};
  for (const RunSummary& r : runs)
    per_run.add_row({format_number(r.snr), std::to_string(r.seed), std::to_string(r.run % I), format_number(r.rate),
                     r.rate_fit_failed ? "1" : "0", format_number(r.final_stat_err), format_number(r.plateau)});
  CsvTable table{{"snr", "median_rate", "fit_failures"}, {}};
  std::vector<double> med;
  int failures_total = 0;
  for (int g = 0; g < G; ++g) {
    std::vector<double> rates;
    int failures = 0;
    for (int j = 0; j < S * I; ++j) {
      const RunSummary& r = runs[static_cast<std::size_t>(g * S * I + j)];
      failures += r.rate_fit_failed;
      if (std::isfinite(r.rate)) rates.push_back(r.rate);
    }
    med.push_back(median(rates));
    failures_total += failures;
    table.add_row({format_number(c.snr[static_cast<std::size_t>(g)]), format_number(med.back()), std::to_string(failures)});
  }
  out.tables.push_back({"snr_sweep_runs", std::move(per_run)});
  out.tables.push_back({"snr_sweep_rates", std::move(table)});
  out.plots.push_back({"snr_sweep_rates",
                       {{"median fitted rate", c.snr, med}},
                       {"Geometric rate of the statistical error", c.snr_is_squared ? "SNR (squared)" : "SNR ||mu*||/sigma",
                        "rate", false, false}});
  bool monotone = true;
  std::string detail;
  for (int g = 0; g < G; ++g) {
    detail += (g ? ", " : "") + fixed(c.snr[static_cast<std::size_t>(g)], 3) + ":" + fixed(med[static_cast<std::size_t>(g)]);
    if (g > 0 && med[static_cast<std::size_t>(g)] > med[static_cast<std::size_t>(g - 1)] + 0.02) monotone = false;
  }
  out.record.summary["median_rates"] = med;
  out.record.summary["rate_fit_failures"] = failures_total;
  out.record.assertions.push_back(make_assertion("rate_non_increasing_in_snr", monotone, detail));
  return out;
}

// ---------------------------------------------------------------------------
// n_scaling

inline RunOutput n_scaling(const ExperimentConfig& c) {
  RunOutput out;
  out.record.config = c;
  const int G = static_cast<int>(c.n_grid.size());
  const int S = static_cast<int>(c.seeds.size());
  const int I = c.n_inits;
  const double eta = c.eta(c.snr.front());
  std::vector<RunSummary> runs(static_cast<std::size_t>(G * S * I));
  parallel_for(G * S, [&](int job) {
    const int g = job / S, s = job % S;
    const int n = c.n_grid[static_cast<std::size_t>(g)];
    const std::uint64_t seed = c.seeds[static_cast<std::size_t>(s)];
    const std::uint64_t stream = static_cast<std::uint64_t>(g);
    const ThetaParams star = draw_theta_star(c, eta, seed, stream);
    const ObservedSequence x = sample_sequence(star, n, 0, stream_seed(seed, stream, Purpose::kData)).observed;
    for (int i = 0; i < I; ++i) {
      const ThetaParams init = draw_init(c, star, seed, stream * 1000 + static_cast<std::uint64_t>(i));
      RunSummary r = run_single_em(c, x, star, init, default_iterations(n)).summary;
      r.run = job * I + i;
      r.seed = seed;
      r.snr = c.snr.front();
      runs[static_cast<std::size_t>(job * I + i)] = r;
    }
  });
  out.record.runs = runs;

  CsvTable table{{"n", "median_plateau", "q25_plateau", "q75_plateau"}, {}};
  std::vector<double> logn, logp, med;
  for (int g = 0; g < G; ++g) {
    std::vector<double> pl;
    for (int j = 0; j < S * I; ++j) pl.push_back(runs[static_cast<std::size_t>(g * S * I + j)].plateau);
    std::sort(pl.begin(), pl.end());
    const double m = median(pl);
    med.push_back(m);
    const double q25 = pl[static_cast<std::size_t>(0.25 * static_cast<double>(pl.size() - 1))];
    const double q75 = pl[static_cast<std::size_t>(0.75 * static_cast<double>(pl.size() - 1))];
    table.add_row({std::to_string(c.n_grid[static_cast<std::size_t>(g)]), format_number(m), format_number(q25), format_number(q75)});
    logn.push_back(std::log(c.n_grid[static_cast<std::size_t>(g)]));
    logp.push_back(std::log(m));
  }
  out.tables.push_back({"n_scaling", std::move(table)});
  std::vector<double> ref;
  for (int n : c.n_grid) ref.push_back(std::sqrt(static_cast<double>(c.d) / n) * c.sigma);
  out.plots.push_back({"n_scaling",
                       {{"median plateau", doubles(c.n_grid), med}, {"sqrt(d/n) sigma", doubles(c.n_grid), ref}},
                       {"Statistical error floor vs n", "n", "error", true, true}});
  if (G >= 2) {
    const LinearFit fit = fit_line(logn, logp);
    out.record.summary["slope"] = fit.slope;
    out.record.summary["slope_ci95"] = {fit.slope - 1.96 * fit.slope_stderr, fit.slope + 1.96 * fit.slope_stderr};
    out.record.assertions.push_back(make_assertion("loglog_slope_in_range", fit.slope >= -0.65 && fit.slope <= -0.35,
                                                   "slope " + fixed(fit.slope) + " (target -0.5, accept [-0.65,-0.35])"));
  }
  out.record.summary["median_plateau"] = med;
  return out;
}

// ---------------------------------------------------------------------------
// truncation

inline RunOutput truncation_experiment(const ExperimentConfig& c) {
  RunOutput out;
  out.record.config = c;
  const int S = static_cast<int>(c.seeds.size());
  const double eta = c.eta(c.snr.front());
  std::vector<TruncationDecayReport> reports(static_cast<std::size_t>(S));
  parallel_for(S, [&](int s) {
    const std::uint64_t seed = c.seeds[static_cast<std::size_t>(s)];
    const ThetaParams star = draw_theta_star(c, eta, seed, 0);
    const ObservedSequence x = sample_sequence(star, c.n, 0, stream_seed(seed, 0, Purpose::kData)).observed;
    reports[static_cast<std::size_t>(s)] = truncation_decay(star, x, c.k_grid, c.feasible());
  });
  const ThetaParams star0 = draw_theta_star(c, eta, c.seeds.front(), 0);
  const TheoryConstants tc = TheoryConstants::for_model(star0, c.b_bound);
  const double target = std::log(1.0 - tc.eps_mix * tc.pi_min);

  CsvTable table{{"seed", "k", "tv_gap", "m_gap"}, {}};
  std::vector<double> tv_slopes, m_slopes;
  for (int s = 0; s < S; ++s) {
    const TruncationDecayReport& r = reports[static_cast<std::size_t>(s)];
    for (std::size_t j = 0; j < r.k.size(); ++j)
      table.add_row({std::to_string(c.seeds[static_cast<std::size_t>(s)]), std::to_string(r.k[j]), format_number(r.tv_gap[j]),
                     format_number(r.m_gap[j])});
    tv_slopes.push_back(r.tv_fit.slope);
    m_slopes.push_back(r.m_fit.slope);
  }
  CsvTable slopes{{"seed", "tv_slope", "m_slope"}, {}};
  for (int s = 0; s < S; ++s)
    slopes.add_row({std::to_string(c.seeds[static_cast<std::size_t>(s)]), format_number(tv_slopes[static_cast<std::size_t>(s)]),
                    format_number(m_slopes[static_cast<std::size_t>(s)])});
  out.tables.push_back({"truncation_gaps", std::move(table)});
  out.tables.push_back({"truncation_slopes", std::move(slopes)});

  std::vector<double> med_tv, med_m, bound;
  for (std::size_t j = 0; j < c.k_grid.size(); ++j) {
    std::vector<double> a, b;
    for (const auto& r : reports) a.push_back(r.tv_gap[j]), b.push_back(r.m_gap[j]);
    med_tv.push_back(median(a));
    med_m.push_back(median(b));
    bound.push_back(std::exp(target * c.k_grid[j]));
  }
  out.plots.push_back({"truncation_gaps",
                       {{"sup_i TV gap", doubles(c.k_grid), med_tv},
                        {"||M_n - M_n^k||", doubles(c.k_grid), med_m},
                        {"(1 - eps pi_min)^k", doubles(c.k_grid), bound}},
                       {"Truncation gap vs window half-width", "k", "gap (median over seeds)", false, true}});

  std::vector<double> tv_ok, m_ok;
  for (double v : tv_slopes)
    if (std::isfinite(v)) tv_ok.push_back(v);
  for (double v : m_slopes)
    if (std::isfinite(v)) m_ok.push_back(v);
  const double tv = median(tv_ok), m = median(m_ok);
  Json& sm = out.record.summary;
  sm["target_slope"] = target;
  sm["median_tv_slope"] = number_or_null(tv);
  sm["median_m_slope"] = number_or_null(m);
  out.record.assertions.push_back(make_assertion("tv_slope_negative", tv < 0.0, "median slope " + fixed(tv)));
  out.record.assertions.push_back(make_assertion("m_slope_negative", m < 0.0, "median slope " + fixed(m)));
  out.record.assertions.push_back(make_assertion("tv_slope_matches_bound", std::abs(tv - target) <= 0.15,
                                                 "median " + fixed(tv) + " vs log(1-eps pi_min) = " + fixed(target)));
  out.record.assertions.push_back(make_assertion("m_slope_matches_bound", std::abs(m - target) <= 0.15,
                                                 "median " + fixed(m) + " vs log(1-eps pi_min) = " + fixed(target)));
  return out;
}

// ---------------------------------------------------------------------------
// mixing_checks

/// Random (theta, x) instance for the enumeration checks: zeta uniform in
/// [0.05, 0.95], ||mu|| / sigma uniform in [0.3, 3], x drawn from theta.
inline std::pair<ThetaParams, ObservedSequence> mixing_instance(const ExperimentConfig& c, int len, std::uint64_t seed,
                                                                std::uint64_t idx) {
  Rng rng = make_rng(seed, idx, Purpose::kInstance);
  std::uniform_real_distribution<double> zeta(0.05, 0.95), norm(0.3, 3.0);
  const double z = zeta(rng);
  const ThetaParams th = ThetaParams::from_zeta(z, norm(rng) * c.sigma * random_direction(c.d, rng), c.sigma);
  return {th, sample_sequence(th, len, 0, stream_seed(seed, idx, Purpose::kData)).observed};
}

inline RunOutput mixing_checks(const ExperimentConfig& c) {
  RunOutput out;
  out.record.config = c;
  const std::uint64_t seed = c.seeds.front();
  const int len = std::min(kEnumerationMaxN, c.l_max + 4);
  std::vector<CovarianceDecayReport> cov(static_cast<std::size_t>(c.instances));
  parallel_for(c.instances, [&](int i) {
    const auto [th, x] = mixing_instance(c, len, seed, static_cast<std::uint64_t>(i));
    cov[static_cast<std::size_t>(i)] = covariance_decay_check(th, x, c.l_max, false);
  });
  int violations = 0;
  CsvTable cov_table{{"lag", "max_singleton_over_bound", "max_pair_over_bound", "max_mixed_over_bound", "violations"}, {}};
  std::vector<double> lags, ratio_worst;
  for (int l = 0; l <= c.l_max; ++l) {
    double rs = 0.0, rp = 0.0, rm = 0.0;
    int lag_viol = 0;
    for (const auto& r : cov) {
      const LagCovariance& lc = r.lags[static_cast<std::size_t>(l)];
      auto ratio = [&](double v) { return std::isnan(v) ? 0.0 : v / lc.bound; };
      rs = std::max(rs, ratio(lc.singleton));
      rp = std::max(rp, ratio(lc.pair));
      rm = std::max(rm, ratio(lc.mixed));
      for (double v : {lc.singleton, lc.pair, lc.mixed})
        if (!std::isnan(v) && v > lc.bound + 1e-12) ++lag_viol;
    }
    violations += lag_viol;
    cov_table.add_row({std::to_string(l), format_number(rs), format_number(rp), format_number(rm), std::to_string(lag_viol)});
    lags.push_back(l);
    ratio_worst.push_back(std::max({rs, rp, rm}));
  }
  out.tables.push_back({"mixing_covariance", std::move(cov_table)});
  out.plots.push_back({"mixing_covariance",
                       {{"max |cov| / (2 rho^l)", lags, ratio_worst}, {"bound", lags, std::vector<double>(lags.size(), 1.0)}},
                       {"Posterior covariance relative to 2 rho^l", "lag l", "ratio", false, false}});
  out.record.summary["covariance_instances"] = c.instances;
  out.record.summary["covariance_violations"] = violations;
  out.record.assertions.push_back(make_assertion("covariance_bound_no_violations", violations == 0,
                                                 std::to_string(violations) + " violations over " + std::to_string(c.instances) + " instances"));

  const ThetaParams star = draw_theta_star(c, c.eta(c.snr.front()), seed, 0);
  std::vector<int> ks;
  for (int k : c.k_grid)
    if (k >= 1 && k <= c.seq_len) ks.push_back(k);
  if (ks.size() >= 2) {
    const FilterStabilityReport fr = filter_stability_check(star, c.seq_len, ks, c.trials, seed);
    CsvTable ft{{"k", "filter_gap", "origin_gap"}, {}};
    for (std::size_t j = 0; j < ks.size(); ++j)
      ft.add_row({std::to_string(ks[j]), format_number(fr.filter_gap[j]), format_number(fr.origin_gap[j])});
    out.tables.push_back({"mixing_filter_stability", std::move(ft)});
    out.plots.push_back({"mixing_filter_stability",
                         {{"filter gap", doubles(ks), fr.filter_gap}, {"origin gap", doubles(ks), fr.origin_gap}},
                         {"Filter stability", "k", "mean sup-norm gap", false, true}});
    out.record.summary["filter_slope"] = number_or_null(fr.filter_fit.slope);
    out.record.summary["origin_slope"] = number_or_null(fr.origin_fit.slope);
    if (c.rho_mix > 0.0) {
      const double lim = std::log(c.rho_mix) + 0.1;
      out.record.assertions.push_back(make_assertion("origin_gap_decays_like_rho", fr.origin_fit.slope <= lim,
                                                     "slope " + fixed(fr.origin_fit.slope) + " <= log(rho)+0.1 = " + fixed(lim)));
      out.record.assertions.push_back(make_assertion("filter_gap_decays", fr.filter_fit.slope < 0.0,
                                                     "slope " + fixed(fr.filter_fit.slope)));
    }
  }

  // Strong concavity on one dataset drawn from theta*.
  const ObservedSequence x = sample_sequence(star, std::min(c.n, 400), 0, stream_seed(seed, 1, Purpose::kData)).observed;
  try {
    const ConcavityReport cr = strong_concavity_check(star, x, c.feasible());
    out.record.summary["mu_hessian_dev"] = cr.mu_hessian_dev;
    out.record.summary["beta_curvature_dev"] = cr.beta_curvature_dev;
    out.record.summary["min_curvature"] = cr.min_curvature;
    CsvTable ct{{"beta", "d2q2_fd", "d2q2_closed"}, {}};
    std::vector<double> closed;
    for (std::size_t g = 0; g < cr.beta_grid.size(); ++g) {
      const double e = std::exp(-2.0 * cr.beta_grid[g]);
      closed.push_back(-4.0 * e / ((1.0 + e) * (1.0 + e)));
      ct.add_row({format_number(cr.beta_grid[g]), format_number(cr.d2q2[g]), format_number(closed.back())});
    }
    out.tables.push_back({"mixing_concavity", std::move(ct)});
    out.plots.push_back({"mixing_concavity",
                         {{"finite difference", cr.beta_grid, cr.d2q2}, {"closed form", cr.beta_grid, closed}},
                         {"Curvature of Q2 over Omega_beta", "beta", "d2Q2/dbeta2", false, false}});
    out.record.assertions.push_back(make_assertion("strong_concavity", true, "max deviation " + fixed(std::max(cr.mu_hessian_dev, cr.beta_curvature_dev))));
  } catch (const ConcavityViolation& e) {
    out.record.assertions.push_back(make_assertion("strong_concavity", false, e.what()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// contraction

inline RunOutput contraction_experiment(const ExperimentConfig& c) {
  RunOutput out;
  out.record.config = c;
  const int G = static_cast<int>(c.snr.size());
  const int S = static_cast<int>(c.seeds.size());
  std::vector<ContractionEstimate> ce(static_cast<std::size_t>(G * S));
  std::vector<FosEstimate> fe(static_cast<std::size_t>(G * S));
  for (int job = 0; job < G * S; ++job) {
    const int g = job / S, s = job % S;
    const std::uint64_t seed = c.seeds[static_cast<std::size_t>(s)];
    const ThetaParams star = draw_theta_star(c, c.eta(c.snr[static_cast<std::size_t>(g)]), seed, static_cast<std::uint64_t>(g));
    ProbeOptions opt;
    opt.k = c.k;
    opt.radius_frac = c.init_radius_frac;
    opt.probes = c.probes;
    opt.mc_sequences = c.mc_sequences;
    opt.seq_len = c.seq_len;
    opt.seed = stream_seed(seed, static_cast<std::uint64_t>(g), Purpose::kMonteCarlo);
    opt.feasible = c.feasible();
    ce[static_cast<std::size_t>(job)] = contraction_estimate(star, opt);
    fe[static_cast<std::size_t>(job)] = fos_lipschitz_estimate(star, opt);
  }
  CsvTable table{{"snr", "seed", "kappa_hat", "std_err", "probes", "L_mu1", "L_mu2", "L_beta1", "L_beta2", "L_over_lambda"}, {}};
  for (int job = 0; job < G * S; ++job) {
    const ContractionEstimate& e = ce[static_cast<std::size_t>(job)];
    const FosEstimate& f = fe[static_cast<std::size_t>(job)];
    table.add_row({format_number(c.snr[static_cast<std::size_t>(job / S)]), std::to_string(c.seeds[static_cast<std::size_t>(job % S)]),
                   format_number(e.kappa_hat), format_number(e.mc_std_err), std::to_string(e.probe_count), format_number(f.L_mu1),
                   format_number(f.L_mu2), format_number(f.L_beta1), format_number(f.L_beta2), format_number(f.kappa())});
  }
  out.tables.push_back({"contraction", std::move(table)});
  std::vector<double> kappa_med, se_med, fos_med;
  for (int g = 0; g < G; ++g) {
    std::vector<double> k, se, fk;
    for (int s = 0; s < S; ++s) {
      k.push_back(ce[static_cast<std::size_t>(g * S + s)].kappa_hat);
      se.push_back(ce[static_cast<std::size_t>(g * S + s)].mc_std_err);
      fk.push_back(fe[static_cast<std::size_t>(g * S + s)].kappa());
    }
    kappa_med.push_back(median(k));
    se_med.push_back(median(se));
    fos_med.push_back(median(fk));
  }
  out.plots.push_back({"contraction",
                       {{"kappa_hat", c.snr, kappa_med}, {"L/lambda (FOS)", c.snr, fos_med}},
                       {"Empirical contraction of the population operator", c.snr_is_squared ? "SNR eta^2" : "SNR ||mu*||/sigma",
                        "factor", false, false}});
  Json& sm = out.record.summary;
  sm["median_kappa_hat"] = kappa_med;
  sm["median_std_err"] = se_med;
  sm["median_fos_kappa"] = fos_med;
  const double kmax = kappa_med.back(), semax = se_med.back();
  out.record.assertions.push_back(make_assertion("contracts_at_largest_snr", kmax + 2.0 * semax < 1.0,
                                                 "kappa_hat " + fixed(kmax) + " + 2 se " + fixed(2.0 * semax)));
  bool decreasing = true;
  for (int g = 1; g < G; ++g) decreasing = decreasing && kappa_med[static_cast<std::size_t>(g)] < kappa_med[static_cast<std::size_t>(g - 1)];
  std::string detail;
  for (int g = 0; g < G; ++g) detail += (g ? ", " : "") + fixed(kappa_med[static_cast<std::size_t>(g)]);
  out.record.assertions.push_back(make_assertion("kappa_decreases_with_snr", decreasing, detail));
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch and output

inline RunOutput compute_experiment(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput out;
  switch (c.kind) {
    case ExperimentKind::kConvergence: out = convergence_experiment(c); break;
    case ExperimentKind::kSnrSweep: out = snr_sweep(c); break;
    case ExperimentKind::kNScaling: out = n_scaling(c); break;
    case ExperimentKind::kTruncation: out = truncation_experiment(c); break;
    case ExperimentKind::kMixingChecks: out = mixing_checks(c); break;
    case ExperimentKind::kContraction: out = contraction_experiment(c); break;
  }
  out.record.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Writes `<dir>/<name>.csv`, a paired `<dir>/<plot>.csv` + `.svg` per plot,
/// and `<dir>/manifest.json` with checksums of all of them.
inline void write_run(RunOutput& out, const std::filesystem::path& dir) {
  Manifest m;
  m.config = out.record.config;
  m.seeds = out.record.config.seeds;
  auto put = [&](const std::string& name, const std::string& content) {
    write_file_atomic(dir / name, content);
    m.files.emplace_back(name, checksum_hex(content));
    out.record.files.push_back(name);
  };
  for (const NamedTable& t : out.tables) put(t.name + ".csv", render_csv(t.table));
  for (const NamedPlot& p : out.plots) {
    put(p.name + "_plot.csv", render_csv(series_table(p.series)));
    put(p.name + ".svg", render_svg_lineplot(p.series, p.axes));
  }
  m.summary = out.record.summary;
  Json runs = Json::array();
  for (const RunSummary& r : out.record.runs)
    runs.push_back({{"run", r.run},
                    {"seed", r.seed},
                    {"snr", r.snr},
                    {"n", r.n},
                    {"iterations", r.iterations},
                    {"initial_stat_err", number_or_null(r.initial_stat_err)},
                    {"final_stat_err", number_or_null(r.final_stat_err)},
                    {"plateau", number_or_null(r.plateau)},
                    {"plateaued", r.plateaued},
                    {"rate", number_or_null(r.rate)},
                    {"rate_fit_failed", r.rate_fit_failed}});
  m.summary["runs"] = runs;
  for (const Assertion& a : out.record.assertions) m.assertions.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  m.wall_clock_s = out.record.wall_clock_s;
  write_file_atomic(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

inline RunRecord run_experiment(const ExperimentConfig& c) {
  RunOutput out = compute_experiment(c);
  write_run(out, c.output_dir);
  return out.record;
}

}  // namespace bwlab
