#pragma once

// Baum-Welch machinery: Q-function evaluation, full and k-truncated M-steps
// (closed-form two-state Gaussian and general s-state), and the EM driver.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bwlab/errors.hpp"
#include "bwlab/hmm_core.hpp"
#include "bwlab/inference.hpp"
#include "bwlab/numeric.hpp"

namespace bwlab {

/// Q_n(theta | theta') and its split into the emission part (mu only) and
/// the transition part (beta only, including the z_0 prior term).
struct QEval {
  double q_total = 0.0;
  double q1_obs = 0.0;
  double q2_trans = 0.0;
};

namespace detail {

// Expectation of log p; zero weight on an impossible event contributes 0.
inline double weighted_log(double weight, double logp) { return weight == 0.0 ? 0.0 : weight * logp; }

inline double expected_log_transition(const Matrix& pair, const Matrix& log_a) {
  double acc = 0.0;
  for (Eigen::Index a = 0; a < pair.rows(); ++a)
    for (Eigen::Index b = 0; b < pair.cols(); ++b) acc += weighted_log(pair(a, b), log_a(a, b));
  return acc;
}

}  // namespace detail

/// Q evaluated at `model` from posteriors already computed under theta'.
inline QEval q_value_from_posteriors(const GaussianHmm& model, const PosteriorMarginals& post,
                                     const ObservedSequence& x) {
  const int n = x.n;
  const Matrix em = log_emissions(model, x.rows(1, n));
  const Matrix log_a = model.transition.unaryExpr([](double v) { return safe_log(v); });
  QEval q;
  double obs = 0.0;
  for (int t = 0; t < n; ++t)
    for (int z = 0; z < model.states(); ++z) obs += detail::weighted_log(post.gamma(t, z), em(t, z));
  double trans = 0.0;
  for (int a = 0; a < model.states(); ++a) trans += detail::weighted_log(post.gamma0(a), safe_log(model.initial(a)));
  trans += detail::expected_log_transition(post.xi0, log_a);
  for (const Matrix& pair : post.xi) trans += detail::expected_log_transition(pair, log_a);
  q.q1_obs = obs / n;
  q.q2_trans = trans / n;
  q.q_total = q.q1_obs + q.q2_trans;
  return q;
}

inline QEval q_value(const GaussianHmm& model, const GaussianHmm& model_prime, const ObservedSequence& x) {
  return q_value_from_posteriors(model, forward_backward(model_prime, x), x);
}

inline QEval q_value(const ThetaParams& theta, const ThetaParams& theta_prime, const ObservedSequence& x) {
  return q_value(GaussianHmm::from_theta(theta), GaussianHmm::from_theta(theta_prime), x);
}

/// Law of z_0 given the window x_{-k}^{k} (cut to the available rows, or to
/// the core in clipped mode).
inline Vector window_posterior_of_origin(const GaussianHmm& model, const ObservedSequence& x, int k, WindowMode mode) {
  const Vector pi = stationary_distribution(model.transition);
  const detail::LogChain chain(model.transition, pi);
  const Matrix em = log_emissions(model, x.x);
  int lo = std::max(-k, x.first_index());
  int hi = std::min(k, x.last_index());
  if (mode == WindowMode::kClipped) {
    lo = std::max(lo, 1);
    hi = std::min(hi, x.n);
  }
  if (hi < lo) return pi;
  detail::WindowSolver solver(chain);
  if (lo <= 0) return solver.solve(em.middleRows(x.row_of(lo), hi - lo + 1), -lo).gamma;
  // z_0 precedes the first row of the window.
  const detail::WindowResult r = solver.solve(em.middleRows(x.row_of(lo), hi - lo + 1), 0);
  return r.pair.rowwise().sum();
}

/// k-truncated Q: every expectation conditions only on its own window.
inline QEval truncated_q_value(const GaussianHmm& model, const GaussianHmm& model_prime, const ObservedSequence& x,
                               int k, WindowMode mode = WindowMode::kExtended) {
  const WindowedPosteriors w = windowed_posteriors(model_prime, x, k, mode);
  const Vector origin = window_posterior_of_origin(model_prime, x, k, mode);
  const int n = x.n;
  const Matrix em = log_emissions(model, x.rows(1, n));
  const Matrix log_a = model.transition.unaryExpr([](double v) { return safe_log(v); });
  double obs = 0.0, trans = 0.0;
  for (int t = 0; t < n; ++t) {
    for (int z = 0; z < model.states(); ++z) obs += detail::weighted_log(w.gamma_k(t, z), em(t, z));
    trans += detail::expected_log_transition(w.xi_k[static_cast<std::size_t>(t)], log_a);
  }
  for (int a = 0; a < model.states(); ++a) trans += detail::weighted_log(origin(a), safe_log(model.initial(a)));
  QEval q;
  q.q1_obs = obs / n;
  q.q2_trans = trans / n;
  q.q_total = q.q1_obs + q.q2_trans;
  return q;
}

inline QEval truncated_q_value(const ThetaParams& theta, const ThetaParams& theta_prime, const ObservedSequence& x,
                               int k, WindowMode mode = WindowMode::kExtended) {
  return truncated_q_value(GaussianHmm::from_theta(theta), GaussianHmm::from_theta(theta_prime), x, k, mode);
}

// ---------------------------------------------------------------------------
// Two-state closed forms

/// Sufficient statistics of the two-state M-step:
///   mu_stat   = (1/n) sum_i (2 p(z_i = +1) - 1) x_i
///   same_prob = (1/n) sum_{i=1}^n p(z_{i-1} = z_i)
///   sq_resid  = (1/n) sum_i E ||x_i - z_i mu'||^2 (only for the sigma update)
struct TwoStateStats {
  Vector mu_stat;
  double same_prob = 0.0;
  double sq_resid = 0.0;
  int n = 0;
};

inline TwoStateStats two_state_stats(const Matrix& gamma, const std::vector<const Matrix*>& pairs,
                                     const ObservedSequence& x) {
  const int n = x.n;
  TwoStateStats st;
  st.n = n;
  st.mu_stat = Vector::Zero(x.dim());
  for (int t = 0; t < n; ++t) st.mu_stat += (2.0 * gamma(t, 1) - 1.0) * x.at(t + 1).transpose();
  st.mu_stat /= n;
  double same = 0.0;
  for (const Matrix* p : pairs) same += (*p)(0, 0) + (*p)(1, 1);
  st.same_prob = same / n;
  return st;
}

inline TwoStateStats two_state_stats(const PosteriorMarginals& post, const ObservedSequence& x) {
  std::vector<const Matrix*> pairs;
  pairs.reserve(post.xi.size() + 1);
  pairs.push_back(&post.xi0);
  for (const Matrix& m : post.xi) pairs.push_back(&m);
  return two_state_stats(post.gamma, pairs, x);
}

inline TwoStateStats two_state_stats(const WindowedPosteriors& w, const ObservedSequence& x) {
  std::vector<const Matrix*> pairs;
  pairs.reserve(w.xi_k.size());
  for (const Matrix& m : w.xi_k) pairs.push_back(&m);
  return two_state_stats(w.gamma_k, pairs, x);
}

struct MStepOptions {
  FeasibleSet feasible{};
  bool update_sigma = false;
};

namespace detail {

inline double sigma_update(const Matrix& gamma, const ObservedSequence& x, const Vector& mu) {
  double acc = 0.0;
  for (int t = 0; t < x.n; ++t) {
    const Eigen::RowVectorXd xi = x.at(t + 1);
    acc += gamma(t, 1) * (xi - mu.transpose()).squaredNorm() + gamma(t, 0) * (xi + mu.transpose()).squaredNorm();
  }
  return std::sqrt(acc / (static_cast<double>(x.n) * x.dim()));
}

}  // namespace detail

/// Closed-form maximizer of the two-state Q given its sufficient statistics.
inline ThetaParams maximize_two_state(const TwoStateStats& st, const FeasibleSet& feasible, double sigma) {
  const double zeta = feasible.project_zeta(st.same_prob);
  return ThetaParams{beta_of_zeta(zeta), st.mu_stat, sigma};
}

inline ThetaParams m_step_from_posteriors(const PosteriorMarginals& post, const ObservedSequence& x,
                                          const ThetaParams& theta_prime, const MStepOptions& opt = {}) {
  ThetaParams next = maximize_two_state(two_state_stats(post, x), opt.feasible, theta_prime.sigma);
  if (opt.update_sigma) next.sigma = detail::sigma_update(post.gamma, x, next.mu);
  return next;
}

/// One Baum-Welch update for the symmetric two-state Gaussian HMM.
inline ThetaParams m_step_two_state_gaussian(const ThetaParams& theta_prime, const ObservedSequence& x,
                                             const MStepOptions& opt = {}) {
  return m_step_from_posteriors(forward_backward(theta_prime, x), x, theta_prime, opt);
}

/// The same closed forms with window-conditioned posteriors.
inline ThetaParams truncated_m_step(const ThetaParams& theta_prime, const ObservedSequence& x, int k,
                                    const MStepOptions& opt = {}, WindowMode mode = WindowMode::kExtended) {
  const WindowedPosteriors w = windowed_posteriors(theta_prime, x, k, mode);
  ThetaParams next = maximize_two_state(two_state_stats(w, x), opt.feasible, theta_prime.sigma);
  if (opt.update_sigma) next.sigma = detail::sigma_update(w.gamma_k, x, next.mu);
  return next;
}

// ---------------------------------------------------------------------------
// General s-state

struct GeneralMStepOptions {
  /// Entrywise lower clamp on transition probabilities (0 disables).
  double min_transition = 0.0;
  /// Tie a two-state model to the symmetric family: means -mu/+mu and
  /// zeta projected onto `feasible`.
  bool symmetric_two_state = false;
  FeasibleSet feasible{};
};

inline constexpr double kEmptyStateMass = 1e-12;

/// M-step for an s-state Gaussian HMM with shared known sigma. The z_0 law
/// `initial` is held fixed.
inline GaussianHmm m_step_general(const GaussianHmm& model_prime, const ObservedSequence& x,
                                  const GeneralMStepOptions& opt = {}) {
  const PosteriorMarginals post = forward_backward(model_prime, x);
  const int s = model_prime.states();
  const int n = x.n;
  GaussianHmm next = model_prime;

  Matrix counts = post.xi0;
  for (const Matrix& m : post.xi) counts += m;

  Matrix weighted = Matrix::Zero(s, x.dim());
  Vector mass = Vector::Zero(s);
  for (int t = 0; t < n; ++t) {
    for (int z = 0; z < s; ++z) {
      mass(z) += post.gamma(t, z);
      weighted.row(z) += post.gamma(t, z) * x.at(t + 1);
    }
  }

  if (opt.symmetric_two_state) {
    if (s != 2) throw DomainError("symmetric tying needs s = 2");
    const double zeta = opt.feasible.project_zeta((counts(0, 0) + counts(1, 1)) / n);
    next.transition = symmetric_transition(zeta);
    const Eigen::RowVectorXd mu = (weighted.row(1) - weighted.row(0)) / n;
    next.means.row(0) = -mu;
    next.means.row(1) = mu;
    return next;
  }

  for (int z = 0; z < s; ++z) {
    if (mass(z) < kEmptyStateMass) throw EmptyState("state " + std::to_string(z) + " has posterior mass " + std::to_string(mass(z)));
    next.means.row(z) = weighted.row(z) / mass(z);
  }
  for (int a = 0; a < s; ++a) {
    Eigen::RowVectorXd row = counts.row(a);
    const double total = row.sum();
    row = total > 0.0 ? Eigen::RowVectorXd(row / total) : model_prime.transition.row(a);
    if (opt.min_transition > 0.0) {
      row = row.cwiseMax(opt.min_transition);
      row /= row.sum();
    }
    next.transition.row(a) = row;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Iteration driver

/// ||mu - mu*||_2 + |beta - beta*|.
inline double oplus_distance(const ThetaParams& a, const ThetaParams& b) {
  return (a.mu - b.mu).norm() + std::abs(a.beta - b.beta);
}

/// The oplus distance minimized over the relabeling (mu, beta) -> (-mu, beta).
inline double label_swap_distance(const ThetaParams& a, const ThetaParams& b) {
  const double direct = (a.mu - b.mu).norm();
  const double swapped = (a.mu + b.mu).norm();
  return std::min(direct, swapped) + std::abs(a.beta - b.beta);
}

inline double label_swap_mu_error(const Vector& mu, const Vector& mu_star) {
  return std::min((mu - mu_star).norm(), (mu + mu_star).norm());
}

struct EmVariant {
  enum class Kind { kFull, kTruncated } kind = Kind::kFull;
  int k = 0;
  WindowMode mode = WindowMode::kExtended;

  static EmVariant full() { return {}; }
  static EmVariant truncated(int k, WindowMode mode = WindowMode::kExtended) { return {Kind::kTruncated, k, mode}; }
};

/// Iterates theta^0..theta^T with per-iterate scaled log-likelihood
/// l_n = log p(x_1^n)/n and error curves.
struct EmTrajectory {
  std::vector<ThetaParams> iterates;
  std::vector<double> log_liks;
  std::vector<double> stat_err;  // label-swap oplus distance to theta*
  std::vector<double> opt_err;   // oplus distance to the final iterate
  std::vector<double> mu_err;    // label-swap ||mu - mu*||_2

  std::size_t size() const { return iterates.size(); }
  const ThetaParams& final_iterate() const { return iterates.back(); }
};

/// Default iteration budget 4 * ceil(log n).
inline int default_iterations(int n) { return 4 * static_cast<int>(std::ceil(std::log(static_cast<double>(n)))); }

inline EmTrajectory run_em(const ObservedSequence& x, const ThetaParams& theta0, int iterations,
                           const EmVariant& variant, const ThetaParams& theta_star, const MStepOptions& opt = {}) {
  if (iterations < 1) throw DomainError("T must be >= 1");
  opt.feasible.validate();
  if (!opt.feasible.contains_zeta(theta0.zeta())) throw DomainError("theta0 is outside the feasible set");
  const ObservedSequence core = x.core();

  EmTrajectory tr;
  tr.iterates.reserve(static_cast<std::size_t>(iterations + 1));
  ThetaParams theta = theta0;
  for (int t = 0; t <= iterations; ++t) {
    const PosteriorMarginals post = forward_backward(theta, core);
    tr.iterates.push_back(theta);
    tr.log_liks.push_back(post.log_lik / core.n);
    if (t == iterations) break;
    if (variant.kind == EmVariant::Kind::kFull) {
      theta = m_step_from_posteriors(post, core, theta, opt);
    } else {
      theta = truncated_m_step(theta, variant.mode == WindowMode::kClipped ? core : x, variant.k, opt, variant.mode);
    }
  }
  const ThetaParams& last = tr.iterates.back();
  for (const ThetaParams& it : tr.iterates) {
    tr.stat_err.push_back(label_swap_distance(it, theta_star));
    tr.opt_err.push_back(oplus_distance(it, last));
    tr.mu_err.push_back(label_swap_mu_error(it.mu, theta_star.mu));
  }
  return tr;
}

}  // namespace bwlab
