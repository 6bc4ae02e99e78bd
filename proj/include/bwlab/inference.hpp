#pragma once

// Exact smoothing for Gaussian HMMs: log-domain forward-backward, windowed
// (k-truncated) posteriors and a brute-force enumeration oracle.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bwlab/errors.hpp"
#include "bwlab/hmm_core.hpp"
#include "bwlab/numeric.hpp"

namespace bwlab {

/// Smoothed marginals from one pass over x_1^n.
///   gamma(t, z)   = p(z_{t+1} = z | x_1^n)             t = 0..n-1
///   xi[t](a, b)   = p(z_{t+1} = a, z_{t+2} = b | x_1^n)  t = 0..n-2
///   gamma0(a)     = p(z_0 = a | x_1^n)  (unobserved predecessor state)
///   xi0(a, b)     = p(z_0 = a, z_1 = b | x_1^n)
///   log_lik       = log p(x_1^n)
struct PosteriorMarginals {
  Matrix gamma;
  std::vector<Matrix> xi;
  Vector gamma0;
  Matrix xi0;
  double log_lik = 0.0;

  int n() const { return static_cast<int>(gamma.rows()); }
  int states() const { return static_cast<int>(gamma.cols()); }
};

/// Window-conditioned marginals for core indices i = 1..n (row t = i - 1):
///   gamma_k(t, z) = p(z_i = z | window around i)
///   xi_k[t](a, b) = p(z_{i-1} = a, z_i = b | window around i)
struct WindowedPosteriors {
  int k = 0;
  Matrix gamma_k;
  std::vector<Matrix> xi_k;
};

/// kExtended: windows x_{i-k}^{i+k} read from the sequence's extension.
/// kClipped: windows are intersected with the core x_1^n.
enum class WindowMode { kExtended, kClipped };

namespace detail {

/// Log-domain chain quantities shared by all passes.
struct LogChain {
  int s = 0;
  Matrix log_a;
  Vector log_first;  // log law of the first observed state of a block
  Vector prev_law;   // law of the unobserved predecessor of that state
  Matrix reverse;    // reverse(a, b) = p(prev = a | first = b)

  LogChain(const Matrix& a, const Vector& prev) : s(static_cast<int>(a.rows())), prev_law(prev) {
    log_a = a.unaryExpr([](double v) { return safe_log(v); });
    const Vector first = (prev.transpose() * a).transpose();
    log_first = first.unaryExpr([](double v) { return safe_log(v); });
    reverse = Matrix::Zero(s, s);
    for (int b = 0; b < s; ++b) {
      if (first(b) <= 0.0) continue;
      for (int p = 0; p < s; ++p) reverse(p, b) = prev(p) * a(p, b) / first(b);
    }
  }

  /// Pair law of (predecessor, first) given the posterior of the first state.
  Matrix predecessor_pair(const Eigen::Ref<const Vector>& first_post) const {
    Matrix out(s, s);
    for (int p = 0; p < s; ++p)
      for (int b = 0; b < s; ++b) out(p, b) = reverse(p, b) * first_post(b);
    return out;
  }
};

inline void normalize_row(Matrix& m, Eigen::Index r) {
  const double total = m.row(r).sum();
  if (total > 0.0) m.row(r) /= total;
}

inline void normalize(Matrix& m) {
  const double total = m.sum();
  if (total > 0.0) m /= total;
}

/// Center singleton and (center-1, center) pair posterior for the block of
/// log-emissions `em` (rows = window), center at row `c`.
struct WindowResult {
  Vector gamma;
  Matrix pair;
};

class WindowSolver {
 public:
  explicit WindowSolver(const LogChain& chain) : chain_(chain), tmp_(static_cast<std::size_t>(chain.s)) {}

  WindowResult solve(const Eigen::Ref<const Matrix>& em, int c) {
    const int s = chain_.s;
    const int len = static_cast<int>(em.rows());
    fwd_.resize(s);
    prev_fwd_.resize(s);
    // Forward filter up to the center; prev_fwd_ keeps the row before it.
    for (int b = 0; b < s; ++b) fwd_(b) = chain_.log_first(b) + em(0, b);
    normalize_log(fwd_, 0);
    for (int t = 1; t <= c; ++t) {
      prev_fwd_ = fwd_;
      step_forward(em, t);
    }
    // Backward message into the center.
    bwd_ = Vector::Zero(s);
    for (int t = len - 2; t >= c; --t) {
      Vector next(s);
      for (int a = 0; a < s; ++a) {
        for (int b = 0; b < s; ++b) tmp_[static_cast<std::size_t>(b)] = chain_.log_a(a, b) + em(t + 1, b) + bwd_(b);
        next(a) = log_sum_exp(tmp_);
      }
      const double m = next.maxCoeff();
      if (m == kNegInf) throw NumericalUnderflow("backward message vanished");
      bwd_ = next.array() - m;
    }
    WindowResult res;
    res.gamma.resize(s);
    for (int z = 0; z < s; ++z) res.gamma(z) = fwd_(z) + bwd_(z);
    res.gamma = (res.gamma.array() - res.gamma.maxCoeff()).exp();
    res.gamma /= res.gamma.sum();
    if (c == 0) {
      res.pair = chain_.predecessor_pair(res.gamma);
    } else {
      res.pair.resize(s, s);
      double m = kNegInf;
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b) {
          res.pair(a, b) = prev_fwd_(a) + chain_.log_a(a, b) + em(c, b) + bwd_(b);
          m = std::max(m, res.pair(a, b));
        }
      res.pair = (res.pair.array() - m).exp();
      normalize(res.pair);
    }
    return res;
  }

 private:
  void normalize_log(Vector& v, int t) {
    const double c = log_sum_exp(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
    if (c == kNegInf) throw NumericalUnderflow("forward normalizer is -inf at step " + std::to_string(t));
    v.array() -= c;
  }

  void step_forward(const Eigen::Ref<const Matrix>& em, int t) {
    const int s = chain_.s;
    Vector next(s);
    for (int b = 0; b < s; ++b) {
      for (int a = 0; a < s; ++a) tmp_[static_cast<std::size_t>(a)] = prev_fwd_(a) + chain_.log_a(a, b);
      next(b) = log_sum_exp(tmp_) + em(t, b);
    }
    fwd_ = next;
    normalize_log(fwd_, t);
  }

  const LogChain& chain_;
  std::vector<double> tmp_;
  Vector fwd_, prev_fwd_, bwd_;
};

}  // namespace detail

/// Forward-backward over a block of precomputed log-emissions (rows = time).
/// `prev_law` is the law of the unobserved state preceding the first row.
inline PosteriorMarginals forward_backward_log(const Eigen::Ref<const Matrix>& em, const Matrix& transition,
                                               const Vector& prev_law) {
  const int n = static_cast<int>(em.rows());
  if (n < 1) throw DomainError("forward_backward needs n >= 1");
  const detail::LogChain chain(transition, prev_law);
  const int s = chain.s;
  if (em.cols() != s) throw DomainError("emission columns do not match state count");

  Matrix la(n, s), lb(n, s);
  std::vector<double> norm(static_cast<std::size_t>(n));
  std::vector<double> tmp(static_cast<std::size_t>(s));
  auto finish_row = [&](int t) {
    const Eigen::RowVectorXd row = la.row(t);
    const double cn = log_sum_exp(std::span<const double>(row.data(), static_cast<std::size_t>(s)));
    if (cn == kNegInf) throw NumericalUnderflow("per-step normalizer is -inf at t=" + std::to_string(t + 1));
    la.row(t).array() -= cn;
    norm[static_cast<std::size_t>(t)] = cn;
  };

  for (int b = 0; b < s; ++b) la(0, b) = chain.log_first(b) + em(0, b);
  finish_row(0);
  for (int t = 1; t < n; ++t) {
    for (int b = 0; b < s; ++b) {
      for (int a = 0; a < s; ++a) tmp[static_cast<std::size_t>(a)] = la(t - 1, a) + chain.log_a(a, b);
      la(t, b) = log_sum_exp(tmp) + em(t, b);
    }
    finish_row(t);
  }

  lb.row(n - 1).setZero();
  for (int t = n - 2; t >= 0; --t) {
    for (int a = 0; a < s; ++a) {
      for (int b = 0; b < s; ++b) tmp[static_cast<std::size_t>(b)] = chain.log_a(a, b) + em(t + 1, b) + lb(t + 1, b);
      lb(t, a) = log_sum_exp(tmp) - norm[static_cast<std::size_t>(t + 1)];
    }
  }

  PosteriorMarginals out;
  out.log_lik = 0.0;
  for (double c : norm) out.log_lik += c;
  out.gamma = (la + lb).array().exp().matrix();
  for (int t = 0; t < n; ++t) detail::normalize_row(out.gamma, t);
  out.xi.resize(static_cast<std::size_t>(n - 1));
  for (int t = 0; t + 1 < n; ++t) {
    Matrix& x = out.xi[static_cast<std::size_t>(t)];
    x.resize(s, s);
    const double c = norm[static_cast<std::size_t>(t + 1)];
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b) x(a, b) = std::exp(la(t, a) + chain.log_a(a, b) + em(t + 1, b) + lb(t + 1, b) - c);
    detail::normalize(x);
  }
  out.xi0 = chain.predecessor_pair(out.gamma.row(0).transpose());
  out.gamma0 = out.xi0.rowwise().sum();
  return out;
}

/// Exact smoothed marginals and log-likelihood of the core x_1^n; O(n s^2).
inline PosteriorMarginals forward_backward(const GaussianHmm& model, const ObservedSequence& x) {
  model.validate();
  if (x.n < 1) throw DomainError("forward_backward needs n >= 1");
  const Matrix em = log_emissions(model, x.rows(1, x.n));
  return forward_backward_log(em, model.transition, model.initial);
}

inline PosteriorMarginals forward_backward(const ThetaParams& theta, const ObservedSequence& x) {
  return forward_backward(GaussianHmm::from_theta(theta), x);
}

inline constexpr double kBruteForceCap = 1e6;

/// Reference posteriors by explicit summation of the complete likelihood
/// p(z_0^n, x_1^n) over every hidden path. Only for s^n <= 1e6.
inline PosteriorMarginals brute_force_posteriors(const GaussianHmm& model, const ObservedSequence& x) {
  model.validate();
  const int n = x.n;
  const int s = model.states();
  if (n < 1) throw DomainError("brute_force_posteriors needs n >= 1");
  if (std::pow(static_cast<double>(s), n) > kBruteForceCap) {
    throw TooLarge("s^n = " + std::to_string(s) + "^" + std::to_string(n) + " exceeds 1e6");
  }
  const Matrix em = log_emissions(model, x.rows(1, n));
  const int len = n + 1;  // z_0 .. z_n
  std::size_t paths = 1;
  for (int i = 0; i < len; ++i) paths *= static_cast<std::size_t>(s);

  std::vector<double> logp(paths);
  std::vector<int> z(static_cast<std::size_t>(len), 0);
  for (std::size_t p = 0; p < paths; ++p) {
    double lp = safe_log(model.initial(z[0]));
    for (int i = 1; i <= n; ++i) {
      lp += safe_log(model.transition(z[static_cast<std::size_t>(i - 1)], z[static_cast<std::size_t>(i)]));
      lp += em(i - 1, z[static_cast<std::size_t>(i)]);
    }
    logp[p] = lp;
    for (int i = len - 1; i >= 0; --i) {
      if (++z[static_cast<std::size_t>(i)] < s) break;
      z[static_cast<std::size_t>(i)] = 0;
    }
  }
  PosteriorMarginals out;
  out.log_lik = log_sum_exp(logp);
  out.gamma = Matrix::Zero(n, s);
  out.xi.assign(static_cast<std::size_t>(std::max(n - 1, 0)), Matrix::Zero(s, s));
  out.gamma0 = Vector::Zero(s);
  out.xi0 = Matrix::Zero(s, s);
  std::fill(z.begin(), z.end(), 0);
  for (std::size_t p = 0; p < paths; ++p) {
    const double w = std::exp(logp[p] - out.log_lik);
    out.gamma0(z[0]) += w;
    out.xi0(z[0], z[1]) += w;
    for (int i = 1; i <= n; ++i) {
      out.gamma(i - 1, z[static_cast<std::size_t>(i)]) += w;
      if (i < n) out.xi[static_cast<std::size_t>(i - 1)](z[static_cast<std::size_t>(i)], z[static_cast<std::size_t>(i + 1)]) += w;
    }
    for (int i = len - 1; i >= 0; --i) {
      if (++z[static_cast<std::size_t>(i)] < s) break;
      z[static_cast<std::size_t>(i)] = 0;
    }
  }
  return out;
}

inline PosteriorMarginals brute_force_posteriors(const ThetaParams& theta, const ObservedSequence& x) {
  return brute_force_posteriors(GaussianHmm::from_theta(theta), x);
}

/// Posteriors of each core state given only its 2k+1 window. Every window is
/// solved independently under the stationary chain.
inline WindowedPosteriors windowed_posteriors(const GaussianHmm& model, const ObservedSequence& x, int k,
                                              WindowMode mode = WindowMode::kExtended) {
  model.validate();
  if (k < 0) throw DomainError("k must be >= 0");
  if (mode == WindowMode::kExtended && x.ext < k) {
    throw MissingExtension("sequence carries extension " + std::to_string(x.ext) + " < k = " + std::to_string(k));
  }
  const Vector pi = stationary_distribution(model.transition);
  const detail::LogChain chain(model.transition, pi);
  const Matrix em = log_emissions(model, x.x);
  detail::WindowSolver solver(chain);

  WindowedPosteriors out;
  out.k = k;
  out.gamma_k.resize(x.n, model.states());
  out.xi_k.resize(static_cast<std::size_t>(x.n));
  for (int i = 1; i <= x.n; ++i) {
    int lo = i - k, hi = i + k;
    if (mode == WindowMode::kClipped) {
      lo = std::max(lo, 1);
      hi = std::min(hi, x.n);
    }
    auto block = em.middleRows(x.row_of(lo), hi - lo + 1);
    detail::WindowResult r = solver.solve(block, i - lo);
    out.gamma_k.row(i - 1) = r.gamma.transpose();
    out.xi_k[static_cast<std::size_t>(i - 1)] = std::move(r.pair);
  }
  return out;
}

inline WindowedPosteriors windowed_posteriors(const ThetaParams& theta, const ObservedSequence& x, int k,
                                              WindowMode mode = WindowMode::kExtended) {
  return windowed_posteriors(GaussianHmm::from_theta(theta), x, k, mode);
}

/// For each k: sup_i sum_z |p(z_i | x_1^n) - p(z_i | window_k(i))|.
inline std::vector<double> truncation_gap(const GaussianHmm& model, const ObservedSequence& x,
                                          std::span<const int> k_grid, WindowMode mode = WindowMode::kClipped) {
  if (k_grid.empty()) throw DomainError("k_grid must be nonempty");
  const PosteriorMarginals full = forward_backward(model, x);
  std::vector<double> gaps;
  gaps.reserve(k_grid.size());
  for (int k : k_grid) {
    const WindowedPosteriors w = windowed_posteriors(model, x, k, mode);
    gaps.push_back((full.gamma - w.gamma_k).cwiseAbs().rowwise().sum().maxCoeff());
  }
  return gaps;
}

inline std::vector<double> truncation_gap(const ThetaParams& theta, const ObservedSequence& x,
                                          std::span<const int> k_grid, WindowMode mode = WindowMode::kClipped) {
  return truncation_gap(GaussianHmm::from_theta(theta), x, k_grid, mode);
}

}  // namespace bwlab
