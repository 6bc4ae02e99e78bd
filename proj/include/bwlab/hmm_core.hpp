#pragma once

// Model parameterization, stationary/mixing analysis and sequence simulation
// for s-state Gaussian HMMs and the symmetric two-state special case.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bwlab/errors.hpp"
#include "bwlab/numeric.hpp"
#include "bwlab/rng.hpp"

namespace bwlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kRowSumTol = 1e-12;
inline constexpr double kStationaryTol = 1e-10;
inline constexpr double kEigenGapTol = 1e-12;

namespace detail {

inline void require_row_stochastic(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() < 2) throw DomainError("transition matrix must be square with s >= 2");
  for (Eigen::Index j = 0; j < a.rows(); ++j) {
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
      const double v = a(j, k);
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("transition entries must lie in [0,1]");
    }
    if (std::abs(a.row(j).sum() - 1.0) > kRowSumTol) {
      throw DomainError("row " + std::to_string(j) + " does not sum to 1");
    }
  }
}

}  // namespace detail

/// Stationary distribution of a row-stochastic matrix, by a direct linear
/// solve of (A^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
inline Vector stationary_distribution(const Matrix& a) {
  detail::require_row_stochastic(a);
  const Eigen::Index s = a.rows();

  // The unit eigenvalue must be simple; a second eigenvalue at 1 means the
  // chain splits into closed classes and pi is not unique.
  Eigen::EigenSolver<Matrix> es(a, /*computeEigenvectors=*/false);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(s));
  for (Eigen::Index i = 0; i < s; ++i) dist.push_back(std::abs(es.eigenvalues()(i) - std::complex<double>(1.0, 0.0)));
  std::sort(dist.begin(), dist.end());
  if (dist[1] < kEigenGapTol) throw NonErgodicChain("unit eigenvalue is not simple");

  Matrix m = a.transpose() - Matrix::Identity(s, s);
  m.row(s - 1).setOnes();
  Vector rhs = Vector::Zero(s);
  rhs(s - 1) = 1.0;
  Vector pi = m.fullPivLu().solve(rhs);
  for (Eigen::Index i = 0; i < s; ++i) pi(i) = std::max(pi(i), 0.0);
  return pi / pi.sum();
}

/// Row-stochastic transition matrix together with its stationary law.
class TransitionModel {
 public:
  explicit TransitionModel(Matrix a, bool require_reversible = false)
      : a_(std::move(a)), pi_(stationary_distribution(a_)) {
    const Vector lhs = (pi_.transpose() * a_).transpose();
    if ((lhs - pi_).cwiseAbs().maxCoeff() > kStationaryTol) throw NonErgodicChain("stationary solve did not converge");
    reversible_ = true;
    for (Eigen::Index j = 0; j < a_.rows() && reversible_; ++j) {
      for (Eigen::Index k = 0; k < a_.cols(); ++k) {
        if (std::abs(pi_(j) * a_(j, k) - pi_(k) * a_(k, j)) > kStationaryTol) {
          reversible_ = false;
          break;
        }
      }
    }
    if (require_reversible && !reversible_) throw DomainError("chain is not reversible");
  }

  int states() const { return static_cast<int>(a_.rows()); }
  const Matrix& matrix() const { return a_; }
  const Vector& stationary() const { return pi_; }
  bool reversible() const { return reversible_; }

 private:
  Matrix a_;
  Vector pi_;
  bool reversible_ = false;
};

struct MixingProfile {
  double eps_mix = 1.0;
  double rho_mix = 0.0;
  double pi_min = 0.0;
  double b_bound = 0.0;
};

/// Largest eps with eps <= A(j,k)/pi(k) <= 1/eps for all j,k.
/// `b_bound` defaults to rho_mix itself.
inline MixingProfile mixing_profile(const TransitionModel& model, std::optional<double> b_bound = std::nullopt) {
  const Matrix& a = model.matrix();
  const Vector& pi = model.stationary();
  double eps = 1.0;
  for (Eigen::Index j = 0; j < a.rows(); ++j) {
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
      if (a(j, k) <= 0.0) throw ZeroTransition("A(" + std::to_string(j) + "," + std::to_string(k) + ") = 0");
      const double ratio = a(j, k) / pi(k);
      eps = std::min({eps, ratio, 1.0 / ratio});
    }
  }
  MixingProfile p;
  p.eps_mix = eps;
  p.rho_mix = 1.0 - eps;
  p.pi_min = pi.minCoeff();
  p.b_bound = b_bound.value_or(p.rho_mix);
  return p;
}

/// beta = 1/2 log(zeta / (1 - zeta)).
inline double beta_of_zeta(double zeta) {
  if (!(zeta > 0.0 && zeta < 1.0)) throw DomainError("zeta must lie in (0,1), got " + std::to_string(zeta));
  return 0.5 * std::log(zeta / (1.0 - zeta));
}

/// zeta = e^beta / (e^beta + e^-beta), written in the overflow-safe logistic form.
inline double zeta_of_beta(double beta) {
  if (!std::isfinite(beta)) throw DomainError("beta must be finite");
  return 1.0 / (1.0 + std::exp(-2.0 * beta));
}

/// [[zeta, 1-zeta], [1-zeta, zeta]].
inline Matrix symmetric_transition(double zeta) {
  Matrix a(2, 2);
  a << zeta, 1.0 - zeta, 1.0 - zeta, zeta;
  return a;
}

/// Feasible parameter region indexed by the mixing bound b < 1:
/// zeta in [(1-b)/2, (1+b)/2], |beta| <= beta_B.
struct FeasibleSet {
  double b = 0.6;

  double zeta_lo() const { return 0.5 * (1.0 - b); }
  double zeta_hi() const { return 0.5 * (1.0 + b); }
  double beta_bound() const { return 0.5 * std::log((1.0 + b) / (1.0 - b)); }
  double project_zeta(double zeta) const { return std::clamp(zeta, zeta_lo(), zeta_hi()); }
  bool contains_zeta(double zeta) const { return zeta >= zeta_lo() && zeta <= zeta_hi(); }
  void validate() const {
    if (!(b >= 0.0 && b < 1.0)) throw ValidationError("b_bound must lie in [0,1)");
  }
};

/// Joint parameter (beta, mu) of the symmetric two-state Gaussian HMM plus the
/// known emission scale sigma.
struct ThetaParams {
  double beta = 0.0;
  Vector mu;
  double sigma = 1.0;

  int d() const { return static_cast<int>(mu.size()); }
  double zeta() const { return zeta_of_beta(beta); }
  double snr2() const { return mu.squaredNorm() / (sigma * sigma); }
  double rho_mix() const { return std::abs(std::tanh(beta)); }

  static ThetaParams from_zeta(double zeta, Vector mu, double sigma = 1.0) {
    return ThetaParams{beta_of_zeta(zeta), std::move(mu), sigma};
  }
};

/// s-state HMM with Gaussian emissions N(means.row(z), sigma^2 I).
/// `initial` is the law of the unobserved state z_0; z_1 ~ initial^T A.
struct GaussianHmm {
  Matrix transition;
  Vector initial;
  Matrix means;
  double sigma = 1.0;

  int states() const { return static_cast<int>(transition.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }

  /// Two-state embedding: state 0 carries label z = -1 (mean -mu), state 1 carries z = +1.
  static GaussianHmm from_theta(const ThetaParams& theta) {
    GaussianHmm m;
    m.transition = symmetric_transition(theta.zeta());
    m.initial = Vector::Constant(2, 0.5);
    m.means.resize(2, theta.d());
    m.means.row(0) = -theta.mu.transpose();
    m.means.row(1) = theta.mu.transpose();
    m.sigma = theta.sigma;
    return m;
  }

  void validate() const {
    detail::require_row_stochastic(transition);
    if (initial.size() != transition.rows() || means.rows() != transition.rows()) {
      throw DomainError("state count mismatch between transition, initial and means");
    }
    if (std::abs(initial.sum() - 1.0) > kRowSumTol || initial.minCoeff() < 0.0) {
      throw DomainError("initial distribution must be a probability vector");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be positive");
  }
};

inline constexpr int label_of_state(int state) { return 2 * state - 1; }
inline constexpr int state_of_label(int label) { return (label + 1) / 2; }

/// Observations x_{1-ext}, ..., x_{n+ext}; row r holds index i = r + 1 - ext.
struct ObservedSequence {
  Matrix x;
  int n = 0;
  int ext = 0;

  int dim() const { return static_cast<int>(x.cols()); }
  int total() const { return static_cast<int>(x.rows()); }
  int first_index() const { return 1 - ext; }
  int last_index() const { return n + ext; }
  Eigen::Index row_of(int i) const { return i - 1 + ext; }
  auto at(int i) const { return x.row(row_of(i)); }

  /// Rows for indices lo..hi inclusive.
  auto rows(int lo, int hi) const { return x.middleRows(row_of(lo), hi - lo + 1); }

  /// Copy of the core x_1^n without extension.
  ObservedSequence core() const { return ObservedSequence{Matrix(rows(1, n)), n, 0}; }

  static ObservedSequence from_core(Matrix core) {
    const int n = static_cast<int>(core.rows());
    return ObservedSequence{std::move(core), n, 0};
  }
};

/// Hidden labels aligned with an ObservedSequence; {-1,+1} for two-state paths.
struct HiddenSequence {
  std::vector<int> z;
  int n = 0;
  int ext = 0;

  int at(int i) const { return z[static_cast<std::size_t>(i - 1 + ext)]; }
};

struct SampledPath {
  HiddenSequence hidden;
  ObservedSequence observed;
};

/// Draws a stationary two-state path of length n + 2k (core indices 1..n)
/// with x_i = z_i mu + sigma eps_i. Deterministic in `seed`.
inline SampledPath sample_sequence(const ThetaParams& theta, int n, int k, std::uint64_t seed) {
  if (n < 1) throw DomainError("n must be >= 1");
  if (k < 0) throw DomainError("k must be >= 0");
  if (!(theta.sigma >= 0.0)) throw DomainError("sigma must be nonnegative");
  const double zeta = theta.zeta();
  const int total = n + 2 * k;
  const int d = theta.d();

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SampledPath out;
  out.hidden = HiddenSequence{std::vector<int>(static_cast<std::size_t>(total)), n, k};
  out.observed = ObservedSequence{Matrix(total, d), n, k};
  int z = unif(rng) < 0.5 ? -1 : 1;
  for (int r = 0; r < total; ++r) {
    if (r > 0 && unif(rng) >= zeta) z = -z;
    out.hidden.z[static_cast<std::size_t>(r)] = z;
    for (int c = 0; c < d; ++c) {
      out.observed.x(r, c) = z * theta.mu(c) + theta.sigma * gauss(rng);
    }
  }
  return out;
}

/// General s-state sampler with 0-based labels; z_{1-k} drawn from the
/// stationary law of the transition matrix.
inline SampledPath sample_sequence(const GaussianHmm& model, int n, int k, std::uint64_t seed) {
  model.validate();
  if (n < 1 || k < 0) throw DomainError("need n >= 1 and k >= 0");
  const Vector pi = stationary_distribution(model.transition);
  const int total = n + 2 * k;
  const int d = model.dim();
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](const auto& probs) {
    std::discrete_distribution<int> dist(probs.data(), probs.data() + probs.size());
    return dist(rng);
  };
  SampledPath out;
  out.hidden = HiddenSequence{std::vector<int>(static_cast<std::size_t>(total)), n, k};
  out.observed = ObservedSequence{Matrix(total, d), n, k};
  int z = draw(std::vector<double>(pi.data(), pi.data() + pi.size()));
  for (int r = 0; r < total; ++r) {
    if (r > 0) {
      const Vector row = model.transition.row(z).transpose();
      z = draw(std::vector<double>(row.data(), row.data() + row.size()));
    }
    out.hidden.z[static_cast<std::size_t>(r)] = z;
    for (int c = 0; c < d; ++c) out.observed.x(r, c) = model.means(z, c) + model.sigma * gauss(rng);
  }
  return out;
}

/// log p(x_t | z) for every row t and state z; result is T x s.
inline Matrix log_emissions(const GaussianHmm& model, const Eigen::Ref<const Matrix>& x) {
  const double var = model.sigma * model.sigma;
  const double log_norm = -0.5 * model.dim() * std::log(2.0 * std::numbers::pi * var);
  Matrix out(x.rows(), model.states());
  for (int z = 0; z < model.states(); ++z) {
    const Eigen::RowVectorXd m = model.means.row(z);
    out.col(z) = ((x.rowwise() - m).rowwise().squaredNorm() * (-0.5 / var)).array() + log_norm;
  }
  return out;
}

/// Unit vector drawn uniformly on the sphere in R^d.
inline Vector random_direction(int d, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(d);
  do {
    for (int i = 0; i < d; ++i) v(i) = gauss(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

/// Point uniform in the Euclidean ball of the given radius around `center`.
inline Vector random_in_ball(const Vector& center, double radius, Rng& rng) {
  const int d = static_cast<int>(center.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double r = radius * std::pow(unif(rng), 1.0 / d);
  return center + r * random_direction(d, rng);
}

}  // namespace bwlab
