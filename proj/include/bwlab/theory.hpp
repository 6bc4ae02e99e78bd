#pragma once

// Numerical checks of the structural results: kappa/phi bound shapes,
// strong concavity of Q, covariance and filter mixing, truncation decay, and
// Monte-Carlo estimates of the population operator M-bar^k, its contraction
// factor and its first-order-stability constants.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bwlab/baum_welch.hpp"
#include "bwlab/errors.hpp"
#include "bwlab/hmm_core.hpp"
#include "bwlab/inference.hpp"
#include "bwlab/numeric.hpp"
#include "bwlab/parallel.hpp"
#include "bwlab/rng.hpp"

namespace bwlab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Universal constants of the bounds (unspecified in the analysis, default 1)
/// together with the model-derived scalars they are combined with.
struct TheoryConstants {
  double c0 = 1.0;
  double C1 = 1.0;
  double c2 = 1.0;
  int s = 2;
  double eps_mix = 0.4;
  double pi_min = 0.5;
  double b = 0.6;
  double lambda_mu = 1.0;

  double lambda_beta() const { return 1.0 - b * b; }
  double lambda() const { return std::min(lambda_mu, lambda_beta()); }

  void validate() const {
    if (!(c0 > 0.0 && C1 > 0.0 && c2 > 0.0)) throw DomainError("theory constants must be positive");
    if (s < 1 || !(eps_mix > 0.0) || !(pi_min > 0.0) || !(lambda_mu > 0.0)) throw DomainError("model scalars must be positive");
    FeasibleSet{b}.validate();
  }

  static TheoryConstants for_model(const ThetaParams& theta, double b) {
    const MixingProfile p = mixing_profile(TransitionModel(symmetric_transition(theta.zeta())));
    TheoryConstants c;
    c.eps_mix = p.eps_mix;
    c.pi_min = p.pi_min;
    c.b = b;
    c.lambda_mu = 1.0 / (theta.sigma * theta.sigma);
    return c;
  }
};

/// kappa(eta) = C1 eta^2 (eta^2 + 1) exp(-c2 eta^2) / (1 - b^2).
inline double kappa_formula(double eta2, double b, const TheoryConstants& c) {
  if (!(c.C1 > 0.0 && c.c2 > 0.0)) throw DomainError("kappa constants must be positive");
  if (eta2 < 0.0) throw DomainError("eta^2 must be >= 0");
  FeasibleSet{b}.validate();
  return c.C1 * eta2 * (eta2 + 1.0) * std::exp(-c.c2 * eta2) / (1.0 - b * b);
}

/// phi(k) = sqrt(c0 s^5 (1 - eps pi_min)^k / (lambda eps^8 pi_min^2)).
inline double phi_formula(int k, const TheoryConstants& c, int s, double eps_mix, double pi_min, double lambda) {
  if (k < 0) throw DomainError("k must be >= 0");
  if (!(c.c0 > 0.0 && eps_mix > 0.0 && pi_min > 0.0 && lambda > 0.0)) throw DomainError("phi inputs must be positive");
  const double num = c.c0 * std::pow(s, 5) * std::pow(1.0 - eps_mix * pi_min, k);
  return std::sqrt(num / (lambda * std::pow(eps_mix, 8) * pi_min * pi_min));
}

/// Least-squares slope of log(value) against k over entries above `floor`;
/// NaN when fewer than two such entries remain.
inline LinearFit fit_log_decay(std::span<const int> k, std::span<const double> value, double floor = 1e-13) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (value[i] > floor && std::isfinite(value[i])) {
      xs.push_back(k[i]);
      ys.push_back(std::log(value[i]));
    }
  }
  if (xs.size() < 2) {
    LinearFit f;
    f.slope = f.intercept = kNaN;
    f.points = xs.size();
    return f;
  }
  return fit_line(xs, ys);
}

// ---------------------------------------------------------------------------
// Strong concavity

struct ConcavityReport {
  Matrix mu_hessian;
  double mu_hessian_dev = 0.0;
  std::vector<double> beta_grid;
  std::vector<double> d2q2;
  double beta_curvature_dev = 0.0;
  double min_curvature = 0.0;
  double min_curvature_target = 0.0;
};

inline constexpr double kConcavityTol = 1e-6;
inline constexpr double kSecondDiffStep = 1e-3;

/// Central-difference curvature of Q(.|theta') against the closed forms
/// -I/sigma^2 (mu block) and -4e^{-2b}/(1+e^{-2b})^2 (beta) on a 20 point
/// grid spanning Omega_beta.
inline ConcavityReport strong_concavity_check(const ThetaParams& theta_prime, const ObservedSequence& x,
                                              const FeasibleSet& feasible, double tol = kConcavityTol) {
  feasible.validate();
  if (!feasible.contains_zeta(theta_prime.zeta())) throw DomainError("theta' is outside the feasible set");
  const PosteriorMarginals post = forward_backward(theta_prime, x);
  const int d = theta_prime.d();
  const double h = kSecondDiffStep;
  ConcavityReport rep;

  auto q1 = [&](const Vector& mu) {
    return q_value_from_posteriors(GaussianHmm::from_theta({theta_prime.beta, mu, theta_prime.sigma}), post, x).q1_obs;
  };
  rep.mu_hessian.resize(d, d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      Vector pp = theta_prime.mu, pm = theta_prime.mu, mp = theta_prime.mu, mm = theta_prime.mu;
      pp(a) += h, pp(b) += h;
      pm(a) += h, pm(b) -= h;
      mp(a) -= h, mp(b) += h;
      mm(a) -= h, mm(b) -= h;
      rep.mu_hessian(a, b) = (q1(pp) - q1(pm) - q1(mp) + q1(mm)) / (4.0 * h * h);
    }
  }
  const double inv_var = 1.0 / (theta_prime.sigma * theta_prime.sigma);
  rep.mu_hessian_dev = (rep.mu_hessian + inv_var * Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
  if (rep.mu_hessian_dev > tol)
    throw ConcavityViolation("mu Hessian deviates from -I/sigma^2 by " + std::to_string(rep.mu_hessian_dev));

  auto q2 = [&](double beta) {
    return q_value_from_posteriors(GaussianHmm::from_theta({beta, theta_prime.mu, theta_prime.sigma}), post, x).q2_trans;
  };
  const double bb = feasible.beta_bound();
  const int grid = 20;
  rep.min_curvature = std::numeric_limits<double>::infinity();
  for (int g = 0; g < grid; ++g) {
    const double beta = -bb + 2.0 * bb * g / (grid - 1);
    const double fd = (q2(beta + h) - 2.0 * q2(beta) + q2(beta - h)) / (h * h);
    const double e = std::exp(-2.0 * beta);
    const double closed = -4.0 * e / ((1.0 + e) * (1.0 + e));
    const double dev = std::abs(fd - closed);
    rep.beta_grid.push_back(beta);
    rep.d2q2.push_back(fd);
    rep.beta_curvature_dev = std::max(rep.beta_curvature_dev, dev);
    rep.min_curvature = std::min(rep.min_curvature, -fd);
    if (dev > tol)
      throw ConcavityViolation("d2Q2/dbeta2 at beta=" + std::to_string(beta) + " is " + std::to_string(fd) +
                               ", expected " + std::to_string(closed));
  }
  rep.min_curvature_target = 1.0 - feasible.b * feasible.b;
  if (std::abs(rep.min_curvature - rep.min_curvature_target) > tol)
    throw ConcavityViolation("minimum curvature over Omega_beta is " + std::to_string(rep.min_curvature) +
                             ", expected " + std::to_string(rep.min_curvature_target));
  return rep;
}

// ---------------------------------------------------------------------------
// Covariance decay of the smoothed chain

struct LagCovariance {
  int lag = 0;
  double singleton = kNaN;  // max_i |cov(Z_i, Z_{i+l})|
  double pair = kNaN;       // max_i |cov(Z_i Z_{i+1}, Z_{i+1+l} Z_{i+2+l})|
  double mixed = kNaN;      // max over single/pair blocks separated by l steps
  double bound = 0.0;       // 2 rho^l
};

struct CovarianceDecayReport {
  double rho_mix = 0.0;
  std::vector<LagCovariance> lags;
  int violations = 0;
};

inline constexpr int kEnumerationMaxN = 12;

/// Posterior covariances of +-1 labels by enumerating all 2^n paths. Blocks
/// are separated by l transitions: the last index of the left block and the
/// first index of the right block differ by l.
inline CovarianceDecayReport covariance_decay_check(const ThetaParams& theta, const ObservedSequence& x, int l_max,
                                                    bool throw_on_violation = true) {
  const int n = x.n;
  if (n < 1 || n > kEnumerationMaxN) throw TooLarge("covariance enumeration needs 1 <= n <= 12, got " + std::to_string(n));
  if (l_max < 0) throw DomainError("l_max must be >= 0");
  const GaussianHmm model = GaussianHmm::from_theta(theta);
  const Matrix em = log_emissions(model, x.rows(1, n));
  const Matrix log_a = model.transition.array().log().matrix();

  const int paths = 1 << n;
  std::vector<double> logw(static_cast<std::size_t>(paths));
  for (int p = 0; p < paths; ++p) {
    double lw = std::log(0.5);
    for (int t = 0; t < n; ++t) {
      const int z = (p >> t) & 1;
      lw += em(t, z);
      if (t > 0) lw += log_a((p >> (t - 1)) & 1, z);
    }
    logw[static_cast<std::size_t>(p)] = lw;
  }
  const double log_z = log_sum_exp(logw);

  // Moments of Z_t and P_t = Z_t Z_{t+1} (0-based t).
  Vector ez = Vector::Zero(n), ep = Vector::Zero(n);
  Matrix ezz = Matrix::Zero(n, n), epp = Matrix::Zero(n, n), ezp = Matrix::Zero(n, n);
  std::vector<double> z(static_cast<std::size_t>(n)), pr(static_cast<std::size_t>(n));
  for (int p = 0; p < paths; ++p) {
    const double w = std::exp(logw[static_cast<std::size_t>(p)] - log_z);
    for (int t = 0; t < n; ++t) z[static_cast<std::size_t>(t)] = ((p >> t) & 1) ? 1.0 : -1.0;
    for (int t = 0; t + 1 < n; ++t) pr[static_cast<std::size_t>(t)] = z[static_cast<std::size_t>(t)] * z[static_cast<std::size_t>(t + 1)];
    for (int i = 0; i < n; ++i) {
      ez(i) += w * z[static_cast<std::size_t>(i)];
      if (i + 1 < n) ep(i) += w * pr[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) {
        ezz(i, j) += w * z[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(j)];
        if (j + 1 < n) ezp(i, j) += w * z[static_cast<std::size_t>(i)] * pr[static_cast<std::size_t>(j)];
        if (i + 1 < n && j + 1 < n) epp(i, j) += w * pr[static_cast<std::size_t>(i)] * pr[static_cast<std::size_t>(j)];
      }
    }
  }

  CovarianceDecayReport rep;
  rep.rho_mix = theta.rho_mix();
  auto upd = [](double& slot, double v) { slot = std::isnan(slot) ? std::abs(v) : std::max(slot, std::abs(v)); };
  for (int l = 0; l <= l_max; ++l) {
    LagCovariance c;
    c.lag = l;
    c.bound = 2.0 * std::pow(rep.rho_mix, l);
    for (int i = 0; i < n; ++i) {
      if (i + l < n) upd(c.singleton, ezz(i, i + l) - ez(i) * ez(i + l));
      if (i + l + 2 < n) upd(c.pair, epp(i, i + l + 1) - ep(i) * ep(i + l + 1));
      if (i + l + 1 < n) upd(c.mixed, ezp(i, i + l) - ez(i) * ep(i + l));
      if (i + l + 2 < n) upd(c.mixed, ezp(i + l + 1, i) - ez(i + l + 1) * ep(i));
    }
    for (double v : {c.singleton, c.pair, c.mixed}) {
      if (!std::isnan(v) && v > c.bound + 1e-12) {
        ++rep.violations;
        if (throw_on_violation)
          throw BoundViolation("lag " + std::to_string(l) + ": |cov| = " + std::to_string(v) + " > " + std::to_string(c.bound));
      }
    }
    rep.lags.push_back(c);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Filter stability

struct FilterStabilityReport {
  std::vector<int> k;
  std::vector<double> filter_gap;  // mean over trials of sup_z |p(z_n|x_1^n) - p(z_n|x_{n-k}^n)|
  std::vector<double> origin_gap;  // mean over trials of sup_z |p(z_0|x_k^n) - p(z_0)|
  LinearFit filter_fit;
  LinearFit origin_fit;
  int trials = 0;
};

inline FilterStabilityReport filter_stability_check(const ThetaParams& theta, int n, std::span<const int> k_grid,
                                                    int trials, std::uint64_t seed) {
  if (trials < 1) throw DomainError("trials must be >= 1");
  if (k_grid.empty()) throw DomainError("k grid is empty");
  for (int k : k_grid)
    if (k < 1 || k > n) throw DomainError("filter stability needs 1 <= k <= n");
  const GaussianHmm model = GaussianHmm::from_theta(theta);
  const Vector pi = model.initial;
  FilterStabilityReport rep;
  rep.trials = trials;
  rep.k.assign(k_grid.begin(), k_grid.end());
  const std::size_t nk = k_grid.size();
  std::vector<std::vector<double>> fa(static_cast<std::size_t>(trials), std::vector<double>(nk)),
      fb(static_cast<std::size_t>(trials), std::vector<double>(nk));

  parallel_for(trials, [&](int tr) {
    const SampledPath path = sample_sequence(theta, n, 0, stream_seed(seed, static_cast<std::uint64_t>(tr), Purpose::kData));
    const Matrix em = log_emissions(model, path.observed.rows(1, n));
    const Vector full_filter = forward_backward_log(em, model.transition, pi).gamma.row(n - 1).transpose();
    for (std::size_t j = 0; j < nk; ++j) {
      const int k = k_grid[j];
      const int lo = std::max(1, n - k);
      const Vector win = forward_backward_log(em.middleRows(lo - 1, n - lo + 1), model.transition, pi)
                             .gamma.row(n - lo)
                             .transpose();
      fa[static_cast<std::size_t>(tr)][j] = (full_filter - win).cwiseAbs().maxCoeff();
      // p(z_0 | x_k^n) = sum_{z_k} p(z_k | x_k^n) A^k(z_k, z_0) by reversibility.
      const Eigen::RowVectorXd first = forward_backward_log(em.middleRows(k - 1, n - k + 1), model.transition, pi).gamma.row(0);
      Matrix ak = Matrix::Identity(model.states(), model.states());
      for (int step = 0; step < k; ++step) ak = ak * model.transition;
      const Eigen::RowVectorXd origin = first * ak;
      fb[static_cast<std::size_t>(tr)][j] = (origin - pi.transpose()).cwiseAbs().maxCoeff();
    }
  });

  for (std::size_t j = 0; j < nk; ++j) {
    double sa = 0.0, sb = 0.0;
    for (int tr = 0; tr < trials; ++tr) {
      sa += fa[static_cast<std::size_t>(tr)][j];
      sb += fb[static_cast<std::size_t>(tr)][j];
    }
    rep.filter_gap.push_back(sa / trials);
    rep.origin_gap.push_back(sb / trials);
  }
  rep.filter_fit = fit_log_decay(rep.k, rep.filter_gap);
  rep.origin_fit = fit_log_decay(rep.k, rep.origin_gap);
  return rep;
}

// ---------------------------------------------------------------------------
// Truncation decay of posteriors and of the sample M-operator

struct TruncationDecayReport {
  std::vector<int> k;
  std::vector<double> tv_gap;  // sup_i ||p(z_i|x_1^n) - p(z_i|window)||_1
  std::vector<double> m_gap;   // ||M_n(theta) - M_n^k(theta)||_oplus
  LinearFit tv_fit;
  LinearFit m_fit;
};

/// Both gaps at theta on the core x_1^n with windows clipped to the core.
inline TruncationDecayReport truncation_decay(const ThetaParams& theta, const ObservedSequence& x, std::span<const int> k_grid,
                                              const FeasibleSet& feasible) {
  TruncationDecayReport rep;
  rep.k.assign(k_grid.begin(), k_grid.end());
  const ObservedSequence core = x.core();
  rep.tv_gap = truncation_gap(theta, core, k_grid, WindowMode::kClipped);
  const ThetaParams full = m_step_two_state_gaussian(theta, core, {feasible});
  for (int k : k_grid) rep.m_gap.push_back(oplus_distance(full, truncated_m_step(theta, core, k, {feasible}, WindowMode::kClipped)));
  rep.tv_fit = fit_log_decay(rep.k, rep.tv_gap);
  rep.m_fit = fit_log_decay(rep.k, rep.m_gap);
  return rep;
}

// ---------------------------------------------------------------------------
// Monte-Carlo population operator

inline constexpr double kMcBudget = 5e8;  // mc_sequences * (seq_len + 2k) * d

/// Independent extended sequences drawn from theta*; reused across every
/// operator evaluation (common random numbers).
struct McSample {
  ThetaParams theta_star;
  int k = 0;
  std::vector<ObservedSequence> sequences;
  int size() const { return static_cast<int>(sequences.size()); }
};

inline McSample draw_mc_sample(const ThetaParams& theta_star, int k, int mc_sequences, int seq_len, std::uint64_t seed) {
  if (mc_sequences < 2) throw DomainError("need at least two MC sequences");
  if (seq_len < 1 || k < 0) throw DomainError("bad MC sequence shape");
  const double cost = static_cast<double>(mc_sequences) * (seq_len + 2.0 * k) * theta_star.d();
  if (cost > kMcBudget) throw DomainError("MC budget exceeded: " + std::to_string(cost));
  McSample mc;
  mc.theta_star = theta_star;
  mc.k = k;
  mc.sequences.resize(static_cast<std::size_t>(mc_sequences));
  parallel_for(mc_sequences, [&](int j) {
    mc.sequences[static_cast<std::size_t>(j)] =
        sample_sequence(theta_star, seq_len, k, stream_seed(seed, static_cast<std::uint64_t>(j), Purpose::kMonteCarlo)).observed;
  });
  return mc;
}

/// Per-sequence truncated sufficient statistics at theta.
inline std::vector<TwoStateStats> mc_stats(const ThetaParams& theta, const McSample& mc) {
  std::vector<TwoStateStats> out(static_cast<std::size_t>(mc.size()));
  parallel_for(mc.size(), [&](int j) {
    const ObservedSequence& x = mc.sequences[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)] = two_state_stats(windowed_posteriors(theta, x, mc.k, WindowMode::kExtended), x);
  });
  return out;
}

/// Average of the statistics, optionally leaving one sequence out; pairwise
/// summation in index order.
inline TwoStateStats mean_stats(const std::vector<TwoStateStats>& st, int leave_out = -1) {
  const int m = static_cast<int>(st.size());
  const int d = static_cast<int>(st.front().mu_stat.size());
  const int used = leave_out >= 0 ? m - 1 : m;
  std::vector<double> buf;
  buf.reserve(static_cast<std::size_t>(m));
  TwoStateStats out;
  out.n = st.front().n;
  out.mu_stat.resize(d);
  for (int c = 0; c <= d; ++c) {
    buf.clear();
    for (int j = 0; j < m; ++j) {
      if (j == leave_out) continue;
      buf.push_back(c < d ? st[static_cast<std::size_t>(j)].mu_stat(c) : st[static_cast<std::size_t>(j)].same_prob);
    }
    const double v = pairwise_sum(buf) / used;
    if (c < d) out.mu_stat(c) = v;
    else out.same_prob = v;
  }
  return out;
}

struct PopulationEstimate {
  ThetaParams theta;
  double std_err = 0.0;  // jackknife, in the oplus norm
  int mc_sequences = 0;
};

/// M-bar^k(theta): closed-form maximization of the MC-averaged statistics.
inline PopulationEstimate population_m_operator(const ThetaParams& theta, const McSample& mc, const FeasibleSet& feasible) {
  const std::vector<TwoStateStats> st = mc_stats(theta, mc);
  PopulationEstimate est;
  est.mc_sequences = mc.size();
  est.theta = maximize_two_state(mean_stats(st), feasible, theta.sigma);
  const int m = mc.size();
  double acc = 0.0;
  for (int j = 0; j < m; ++j) {
    const double dev = oplus_distance(maximize_two_state(mean_stats(st, j), feasible, theta.sigma), est.theta);
    acc += dev * dev;
  }
  est.std_err = std::sqrt((m - 1.0) / m * acc);
  return est;
}

inline PopulationEstimate population_m_operator_mc(const ThetaParams& theta, const ThetaParams& theta_star, int k,
                                                   int mc_sequences, int seq_len, std::uint64_t seed,
                                                   const FeasibleSet& feasible) {
  return population_m_operator(theta, draw_mc_sample(theta_star, k, mc_sequences, seq_len, seed), feasible);
}

// ---------------------------------------------------------------------------
// Contraction and first-order stability

struct ProbeOptions {
  int k = 16;
  double radius_frac = 0.25;
  int probes = 40;
  int mc_sequences = 64;
  int seq_len = 400;
  std::uint64_t seed = 1;
  FeasibleSet feasible{};
};

/// Probes uniform in {||mu - mu*|| <= r} x Omega_beta with r = radius_frac ||mu*||.
inline std::vector<ThetaParams> draw_probes(const ThetaParams& theta_star, const ProbeOptions& opt) {
  Rng rng = make_rng(opt.seed, 0, Purpose::kProbe);
  const double r = opt.radius_frac * theta_star.mu.norm();
  std::uniform_real_distribution<double> beta(-opt.feasible.beta_bound(), opt.feasible.beta_bound());
  std::vector<ThetaParams> out;
  out.reserve(static_cast<std::size_t>(opt.probes));
  for (int p = 0; p < opt.probes; ++p) {
    Vector mu = random_in_ball(theta_star.mu, r, rng);
    out.push_back({beta(rng), std::move(mu), theta_star.sigma});
  }
  return out;
}

struct ContractionEstimate {
  double kappa_hat = 0.0;
  int probe_count = 0;
  int mc_sequences = 0;
  double mc_std_err = 0.0;
  std::vector<double> ratios;
};

inline constexpr double kProbeExclusion = 1e-12;

/// sup over probes of ||M-bar^k(theta) - M-bar^k(theta*)||_oplus / ||theta - theta*||_oplus.
inline ContractionEstimate contraction_estimate(const ThetaParams& theta_star, const ProbeOptions& opt) {
  opt.feasible.validate();
  const McSample mc = draw_mc_sample(theta_star, opt.k, opt.mc_sequences, opt.seq_len, opt.seed);
  const std::vector<ThetaParams> probes = draw_probes(theta_star, opt);
  const std::vector<TwoStateStats> star_st = mc_stats(theta_star, mc);
  std::vector<std::vector<TwoStateStats>> probe_st;
  std::vector<double> denom;
  for (const ThetaParams& p : probes) {
    const double dist = oplus_distance(p, theta_star);
    if (dist < kProbeExclusion) continue;
    probe_st.push_back(mc_stats(p, mc));
    denom.push_back(dist);
  }
  const double sigma = theta_star.sigma;
  auto kappa_of = [&](int leave_out, std::vector<double>* ratios) {
    const ThetaParams m_star = maximize_two_state(mean_stats(star_st, leave_out), opt.feasible, sigma);
    double best = 0.0;
    for (std::size_t p = 0; p < probe_st.size(); ++p) {
      const ThetaParams m_p = maximize_two_state(mean_stats(probe_st[p], leave_out), opt.feasible, sigma);
      const double r = oplus_distance(m_p, m_star) / denom[p];
      if (ratios) ratios->push_back(r);
      best = std::max(best, r);
    }
    return best;
  };
  ContractionEstimate est;
  est.probe_count = static_cast<int>(probe_st.size());
  est.mc_sequences = mc.size();
  est.kappa_hat = kappa_of(-1, &est.ratios);
  const int m = mc.size();
  std::vector<double> loo(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) loo[static_cast<std::size_t>(j)] = kappa_of(j, nullptr);
  double mean = 0.0;
  for (double v : loo) mean += v;
  mean /= m;
  double acc = 0.0;
  for (double v : loo) acc += (v - mean) * (v - mean);
  est.mc_std_err = std::sqrt((m - 1.0) / m * acc);
  return est;
}

/// Empirical Lipschitz constants of the gradients of Q-bar^k in the
/// conditioning parameter.
struct FosEstimate {
  double L_mu1 = 0.0;
  double L_mu2 = 0.0;
  double L_beta1 = 0.0;
  double L_beta2 = 0.0;
  double lambda = 1.0;
  int probe_count = 0;

  double L() const { return std::max(L_mu1, L_mu2) + std::max(L_beta1, L_beta2); }
  double kappa() const { return L() / lambda; }
};

namespace detail {

// Q-bar_1^k(mu | .) and Q-bar_2^k(beta | .) up to terms free of mu and beta.
inline double qbar_obs(const Vector& mu, const TwoStateStats& st, double sigma) {
  return (st.mu_stat.dot(mu) - 0.5 * mu.squaredNorm()) / (sigma * sigma);
}

inline double qbar_trans(double beta, const TwoStateStats& st) {
  const double z = zeta_of_beta(beta);
  return st.same_prob * std::log(z) + (1.0 - st.same_prob) * std::log1p(-z);
}

inline double fd_step(double v) { return 1e-4 * std::max(1.0, std::abs(v)); }

inline Vector grad_obs(const Vector& mu, const TwoStateStats& st, double sigma) {
  Vector g(mu.size());
  for (Eigen::Index c = 0; c < mu.size(); ++c) {
    const double h = fd_step(mu(c));
    Vector up = mu, dn = mu;
    up(c) += h;
    dn(c) -= h;
    g(c) = (qbar_obs(up, st, sigma) - qbar_obs(dn, st, sigma)) / (2.0 * h);
  }
  return g;
}

inline double grad_trans(double beta, const TwoStateStats& st) {
  const double h = fd_step(beta);
  return (qbar_trans(beta + h, st) - qbar_trans(beta - h, st)) / (2.0 * h);
}

}  // namespace detail

inline FosEstimate fos_lipschitz_estimate(const ThetaParams& theta_star, const ProbeOptions& opt) {
  opt.feasible.validate();
  const McSample mc = draw_mc_sample(theta_star, opt.k, opt.mc_sequences, opt.seq_len, opt.seed);
  const std::vector<ThetaParams> probes = draw_probes(theta_star, opt);
  const double sigma = theta_star.sigma;
  const Vector& mu0 = theta_star.mu;
  const double beta0 = theta_star.beta;
  FosEstimate est;
  est.lambda = std::min(1.0 / (sigma * sigma), 1.0 - opt.feasible.b * opt.feasible.b);
  for (const ThetaParams& p : probes) {
    const double dmu = (p.mu - mu0).norm();
    const double dbeta = std::abs(p.beta - beta0);
    const TwoStateStats both = mean_stats(mc_stats(p, mc));
    if (dmu > kProbeExclusion) {
      const TwoStateStats star_mu = mean_stats(mc_stats({p.beta, mu0, sigma}, mc));
      est.L_mu1 = std::max(est.L_mu1, (detail::grad_obs(mu0, both, sigma) - detail::grad_obs(mu0, star_mu, sigma)).norm() / dmu);
      est.L_beta1 = std::max(est.L_beta1, std::abs(detail::grad_trans(beta0, both) - detail::grad_trans(beta0, star_mu)) / dmu);
    }
    if (dbeta > kProbeExclusion) {
      const TwoStateStats star_beta = mean_stats(mc_stats({beta0, p.mu, sigma}, mc));
      est.L_mu2 = std::max(est.L_mu2, (detail::grad_obs(mu0, both, sigma) - detail::grad_obs(mu0, star_beta, sigma)).norm() / dbeta);
      est.L_beta2 = std::max(est.L_beta2, std::abs(detail::grad_trans(beta0, both) - detail::grad_trans(beta0, star_beta)) / dbeta);
    }
    if (dmu > kProbeExclusion || dbeta > kProbeExclusion) ++est.probe_count;
  }
  return est;
}

}  // namespace bwlab
