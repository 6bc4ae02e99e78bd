#pragma once

// The acceptance suite: one check per criterion, each timed against its
// runtime budget. Shared by the acceptance test binary and `bwlab verify`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bwlab/baum_welch.hpp"
#include "bwlab/config.hpp"
#include "bwlab/experiments.hpp"
#include "bwlab/inference.hpp"
#include "bwlab/io.hpp"
#include "bwlab/theory.hpp"

namespace bwlab {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool property_holds = false;
  double seconds = 0.0;
  double budget_s = 0.0;
  std::string detail;

  bool passed() const { return property_holds && seconds < budget_s; }
};

namespace verify_detail {

inline std::string g(double v) { return fixed(v, 4); }

inline GaussianHmm random_hmm(int s, int d, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GaussianHmm m;
  m.transition.resize(s, s);
  for (int a = 0; a < s; ++a) {
    for (int b = 0; b < s; ++b) m.transition(a, b) = unif(rng);
    m.transition.row(a) /= m.transition.row(a).sum();
  }
  m.initial = stationary_distribution(m.transition);
  m.means.resize(s, d);
  for (int z = 0; z < s; ++z)
    for (int c = 0; c < d; ++c) m.means(z, c) = 1.5 * gauss(rng);
  m.sigma = 0.5 + unif(rng);
  return m;
}

inline ExperimentConfig config_from(const std::string& text, const std::string& out_dir) {
  return parse_config_text(text + "output_dir = " + out_dir + "\n");
}

inline std::string assertion_detail(const RunRecord& r) {
  std::string out;
  for (const Assertion& a : r.assertions) out += (out.empty() ? "" : "; ") + std::string(a.passed ? "ok " : "FAILED ") + a.name + " (" + a.detail + ")";
  return out;
}

}  // namespace verify_detail

inline CriterionResult criterion_oracle_equivalence() {
  CriterionResult r{1, "forward-backward matches brute force", false, 0, 10, ""};
  Rng rng = make_rng(2024, 0, Purpose::kInstance);
  std::uniform_int_distribution<int> len(1, 8), states(2, 3), dim(1, 3);
  std::normal_distribution<double> gauss(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int s = states(rng), n = len(rng), d = dim(rng);
    const GaussianHmm m = verify_detail::random_hmm(s, d, rng);
    Matrix xm(n, d);
    for (int t = 0; t < n; ++t)
      for (int c = 0; c < d; ++c) xm(t, c) = gauss(rng);
    const ObservedSequence x = ObservedSequence::from_core(std::move(xm));
    const PosteriorMarginals fb = forward_backward(m, x);
    const PosteriorMarginals bf = brute_force_posteriors(m, x);
    double dev = (fb.gamma - bf.gamma).cwiseAbs().maxCoeff();
    dev = std::max(dev, (fb.xi0 - bf.xi0).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < fb.xi.size(); ++i) dev = std::max(dev, (fb.xi[i] - bf.xi[i]).cwiseAbs().maxCoeff());
    dev = std::max(dev, std::abs(fb.log_lik - bf.log_lik));
    worst = std::max(worst, dev);
  }
  r.property_holds = worst < 1e-10;
  r.detail = "max |deviation| = " + verify_detail::g(worst) + " over 100 instances";
  return r;
}

inline CriterionResult criterion_em_ascent() {
  CriterionResult r{2, "EM log-likelihood ascent", false, 0, 1e9, ""};
  Rng rng = make_rng(2024, 1, Purpose::kInstance);
  std::uniform_int_distribution<int> dim(1, 10), len(50, 500);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const FeasibleSet f{0.6};
  double worst = 0.0;
  for (int run = 0; run < 50; ++run) {
    const int d = dim(rng), n = len(rng);
    const double zeta = f.zeta_lo() + (f.zeta_hi() - f.zeta_lo()) * unif(rng);
    const ThetaParams star = ThetaParams::from_zeta(zeta, (0.5 + 2.5 * unif(rng)) * random_direction(d, rng), 0.5 + unif(rng));
    const ObservedSequence x = sample_sequence(star, n, 0, stream_seed(2024, static_cast<std::uint64_t>(run), Purpose::kData)).observed;
    const ThetaParams init{(2.0 * unif(rng) - 1.0) * f.beta_bound(), random_in_ball(star.mu, star.mu.norm(), rng), star.sigma};
    const EmTrajectory tr = run_em(x, init, 25, EmVariant::full(), star, {f});
    for (std::size_t t = 1; t < tr.size(); ++t) worst = std::max(worst, n * (tr.log_liks[t - 1] - tr.log_liks[t]));
  }
  r.property_holds = worst <= 1e-9;
  r.detail = "largest decrease " + verify_detail::g(worst) + " over 50 runs x 25 steps";
  return r;
}

inline CriterionResult criterion_strong_concavity() {
  CriterionResult r{3, "strong concavity closed forms", false, 0, 5, ""};
  Rng rng = make_rng(2024, 2, Purpose::kInstance);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const FeasibleSet f{0.6};
  double mu_dev = 0.0, beta_dev = 0.0, curv_dev = 0.0;
  try {
    for (int trial = 0; trial < 10; ++trial) {
      const int d = 1 + trial;
      const double zeta = f.zeta_lo() + (f.zeta_hi() - f.zeta_lo()) * unif(rng);
      const ThetaParams prime = ThetaParams::from_zeta(zeta, (0.5 + 2.0 * unif(rng)) * random_direction(d, rng), 1.0);
      const ObservedSequence x = sample_sequence(prime, 200, 0, stream_seed(2024, static_cast<std::uint64_t>(trial), Purpose::kData)).observed;
      const ConcavityReport c = strong_concavity_check(prime, x, f);
      mu_dev = std::max(mu_dev, c.mu_hessian_dev);
      beta_dev = std::max(beta_dev, c.beta_curvature_dev);
      curv_dev = std::max(curv_dev, std::abs(c.min_curvature - c.min_curvature_target));
    }
    r.property_holds = true;
  } catch (const ConcavityViolation& e) {
    r.detail = std::string(e.what()) + "; ";
  }
  r.detail += "max dev: Hessian " + verify_detail::g(mu_dev) + ", d2Q2 " + verify_detail::g(beta_dev) + ", min curvature " +
              verify_detail::g(curv_dev) + " (tol 1e-6)";
  return r;
}

inline CriterionResult criterion_covariance_mixing() {
  CriterionResult r{4, "covariance decay |cov| <= 2 rho^l", false, 0, 30, ""};
  ExperimentConfig c;
  c.d = 2;
  c.instances = 200;
  c.l_max = 8;
  int violations = 0;
  double worst_excess = -INFINITY;
  for (int i = 0; i < c.instances; ++i) {
    const auto [th, x] = mixing_instance(c, 12, 2024, static_cast<std::uint64_t>(i));
    const CovarianceDecayReport rep = covariance_decay_check(th, x, c.l_max, false);
    violations += rep.violations;
    for (const LagCovariance& lc : rep.lags)
      for (double v : {lc.singleton, lc.pair, lc.mixed})
        if (!std::isnan(v)) worst_excess = std::max(worst_excess, v - lc.bound);
  }
  r.property_holds = violations == 0;
  r.detail = std::to_string(violations) + " violations, max |cov| - 2 rho^l = " + verify_detail::g(worst_excess);
  return r;
}

inline CriterionResult criterion_from_experiment(int id, std::string name, double budget, const std::string& text) {
  CriterionResult r{id, std::move(name), false, 0, budget, ""};
  const RunOutput out = compute_experiment(verify_detail::config_from(text, "unused"));
  r.property_holds = out.record.all_passed();
  r.detail = verify_detail::assertion_detail(out.record);
  return r;
}

inline CriterionResult criterion_truncation_decay() {
  return criterion_from_experiment(5, "truncation decay slope", 60,
                                   "kind = truncation\nd = 10\nn = 200\nrho_mix = 0.6\nsnr = 1.5\n"
                                   "seeds = 1,2,3,4,5,6,7,8,9,10\nk_grid = 0,1,2,3,4,5,6,7,8,9,10,11,12\n");
}

inline CriterionResult criterion_nearby_starts() {
  return criterion_from_experiment(6, "EM from nearby starts", 120,
                                   "kind = convergence\nd = 10\nn = 1000\nT = 40\nrho_mix = 0.6\nsnr = 1.5\n"
                                   "n_inits = 5\ninit_radius_frac = 0.25\nseeds = 1,2,3,4,5\n");
}

inline CriterionResult criterion_rate_vs_snr() {
  return criterion_from_experiment(7, "geometric rate vs SNR", 300,
                                   "kind = snr_sweep\nd = 10\nn = 1000\nrho_mix = 0.6\nsnr = 1.0,1.5,2.0,3.0\n"
                                   "n_inits = 1\nseeds = 1,2,3,4,5,6,7,8,9,10\n");
}

inline CriterionResult criterion_minimax_scaling() {
  return criterion_from_experiment(8, "minimax sqrt(d/n) scaling", 600,
                                   "kind = n_scaling\nd = 10\nn_grid = 500,1000,2000,4000,8000\nrho_mix = 0.6\nsnr = 1.5\n"
                                   "n_inits = 1\nseeds = 1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20\n");
}

inline CriterionResult criterion_contraction() {
  return criterion_from_experiment(9, "population contraction", 600,
                                   "kind = contraction\nd = 10\nsnr = 2.25,4,9\nsnr_is_squared = true\nrho_mix = 0.6\n"
                                   "b_bound = 0.6\nk = 16\nprobes = 40\nmc_sequences = 32\nseq_len = 200\nseeds = 1,2,3\n");
}

inline CriterionResult criterion_determinism(const std::filesystem::path& scratch) {
  CriterionResult r{10, "byte-identical reruns", false, 0, 1e9, ""};
  const std::string text = "kind = convergence\nd = 4\nn = 300\nT = 12\nrho_mix = 0.6\nsnr = 1.5\nn_inits = 3\nseeds = 7\n";
  const std::filesystem::path a = scratch / "determinism_a", b = scratch / "determinism_b";
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
  const RunRecord ra = run_experiment(verify_detail::config_from(text, a.string()));
  run_experiment(verify_detail::config_from(text, b.string()));
  int csvs = 0, mismatched = 0;
  for (const std::string& f : ra.files) {
    if (std::filesystem::path(f).extension() != ".csv") continue;
    ++csvs;
    if (read_file(a / f) != read_file(b / f)) ++mismatched;
  }
  r.property_holds = csvs > 0 && mismatched == 0;
  r.detail = std::to_string(csvs) + " CSV files compared, " + std::to_string(mismatched) + " differ";
  return r;
}

/// Runs the selected criteria (all when `ids` is empty) and reports each
/// result through `report` as soon as it is known.
inline std::vector<CriterionResult> run_acceptance(const std::vector<int>& ids, const std::filesystem::path& scratch,
                                                   const std::function<void(const CriterionResult&)>& report) {
  const std::vector<std::pair<int, std::function<CriterionResult()>>> all = {
      {1, criterion_oracle_equivalence},
      {2, criterion_em_ascent},
      {3, criterion_strong_concavity},
      {4, criterion_covariance_mixing},
      {5, criterion_truncation_decay},
      {6, criterion_nearby_starts},
      {7, criterion_rate_vs_snr},
      {8, criterion_minimax_scaling},
      {9, criterion_contraction},
      {10, [&] { return criterion_determinism(scratch); }},
  };
  std::vector<CriterionResult> out;
  for (const auto& [id, fn] : all) {
    if (!ids.empty() && std::find(ids.begin(), ids.end(), id) == ids.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r.id = id;
      r.name = "criterion " + std::to_string(id);
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) report(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_criterion(const CriterionResult& r) {
  char head[160];
  std::snprintf(head, sizeof head, "[%s] criterion %2d: %s (%.2f s", r.passed() ? "PASS" : "FAIL", r.id, r.name.c_str(), r.seconds);
  std::string out = head;
  if (r.budget_s < 1e8) out += " / budget " + fixed(r.budget_s, 4) + " s";
  out += ") -- " + r.detail;
  return out;
}

}  // namespace bwlab
