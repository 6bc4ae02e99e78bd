#include <gtest/gtest.h>

#include <cmath>

#include "bwlab/baum_welch.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace bwlab {
namespace {

ThetaParams theta_of(double zeta, Vector mu, double sigma = 1.0) { return ThetaParams::from_zeta(zeta, std::move(mu), sigma); }

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

// -----------------------------------------------------------------------------
// Q function

TEST(QValue, TotalIsSumOfParts) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ThetaParams a = testing::random_theta(3, 0.6, rng);
    const ThetaParams b = testing::random_theta(3, 0.6, rng);
    const ObservedSequence x = testing::random_observations(15, 3, rng);
    const QEval q = q_value(a, b, x);
    EXPECT_NEAR(q.q_total, q.q1_obs + q.q2_trans, 1e-12);
  }
}

TEST(QValue, ObservationPartIgnoresBetaAndTransitionPartIgnoresMu) {
  Rng rng(2);
  const ThetaParams prime = testing::random_theta(2, 0.6, rng);
  const ObservedSequence x = testing::random_observations(12, 2, rng);
  const QEval base = q_value(theta_of(0.3, vec({1.0, -0.5})), prime, x);
  const QEval other_beta = q_value(theta_of(0.7, vec({1.0, -0.5})), prime, x);
  const QEval other_mu = q_value(theta_of(0.3, vec({-0.2, 2.0})), prime, x);
  EXPECT_NEAR(base.q1_obs, other_beta.q1_obs, 1e-13);
  EXPECT_NEAR(base.q2_trans, other_mu.q2_trans, 1e-13);
}

TEST(QValue, SingleObservationByHand) {
  // n = 1, d = 1: Q = sum_{z0,z1} p(z0,z1|x) [log pi(z0) + log A(z0,z1)] + sum_z1 p(z1|x) log N(x; z1 mu, 1).
  const ThetaParams th = theta_of(0.3, vec({0.8}));
  const ThetaParams prime = theta_of(0.6, vec({1.1}));
  const ObservedSequence x = ObservedSequence::from_core(Matrix::Constant(1, 1, 0.4));
  auto npdf = [](double v, double m) { return std::exp(-0.5 * (v - m) * (v - m)) / std::sqrt(2.0 * M_PI); };
  // Under theta' the z1 marginal is uniform, so the posterior is local Bayes.
  const double wp = npdf(0.4, 1.1), wm = npdf(0.4, -1.1);
  const double gp = wp / (wp + wm), gm = 1.0 - gp;
  // p(z0, z1 | x) = pi(z0) A'(z0, z1) p(z1 | x) / pi(z1).
  const double zp = 0.6;
  double expected = gp * std::log(npdf(0.4, 0.8)) + gm * std::log(npdf(0.4, -0.8));
  for (int z0 : {-1, 1}) {
    for (int z1 : {-1, 1}) {
      const double post = 0.5 * (z0 == z1 ? zp : 1.0 - zp) * (z1 == 1 ? gp : gm) / 0.5;
      expected += post * (std::log(0.5) + std::log(z0 == z1 ? 0.3 : 0.7));
    }
  }
  EXPECT_NEAR(q_value(th, prime, x).q_total, expected, 1e-13);
}

TEST(QValue, LikelihoodDecompositionAgainstEnumeration) {
  // log p_theta(x) = n Q(theta | theta') + E_{theta'}[-log p_theta(z | x)].
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 6;
    const GaussianHmm m = testing::random_model(2 + trial % 2, 2, rng);
    const GaussianHmm mp = testing::random_model(2 + trial % 2, 2, rng);
    const ObservedSequence x = testing::random_observations(n, 2, rng);
    const oracle::PathTable tab = oracle::enumerate_paths(m, x.x);
    const oracle::PathTable tab_p = oracle::enumerate_paths(mp, x.x);
    double cross = 0.0;
    for (std::size_t p = 0; p < tab.paths.size(); ++p)
      cross -= std::exp(tab_p.log_joint[p] - tab_p.log_lik) * (tab.log_joint[p] - tab.log_lik);
    const double q = q_value(m, mp, x).q_total;
    EXPECT_NEAR(tab.log_lik, n * q + cross, 1e-9) << "trial " << trial;
    EXPECT_GE(cross, -1e-12);
  }
}

TEST(QValue, JensenLowerBound) {
  // n Q(theta|theta') - n Q(theta'|theta') <= log p_theta(x) - log p_theta'(x).
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const ThetaParams a = testing::random_theta(2, 0.6, rng);
    const ThetaParams b = testing::random_theta(2, 0.6, rng);
    const ObservedSequence x = testing::random_observations(20, 2, rng);
    const double gain_q = 20 * (q_value(a, b, x).q_total - q_value(b, b, x).q_total);
    const double gain_l = forward_backward(a, x).log_lik - forward_backward(b, x).log_lik;
    EXPECT_LE(gain_q, gain_l + 1e-9);
  }
}

// -----------------------------------------------------------------------------
// Two-state M-step

TEST(MStep, CertainLabelsGiveSampleMean) {
  ThetaParams truth = theta_of(0.5, vec({2.0, -1.0}), 0.01);
  Matrix xm(6, 2);
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 0.01);
  for (int t = 0; t < 6; ++t) xm.row(t) = truth.mu.transpose() + Eigen::RowVector2d(g(rng), g(rng));
  const ObservedSequence x = ObservedSequence::from_core(xm);
  const ThetaParams next = m_step_two_state_gaussian(truth, x, {FeasibleSet{0.99}});
  const Vector mean = xm.colwise().mean().transpose();
  EXPECT_LT((next.mu - mean).norm(), 1e-12);
  // Every transition is a "stay" with certainty, except z_0 -> z_1 which
  // keeps the prior ratio 0.5.
  EXPECT_NEAR(next.zeta(), (5.0 + 0.5) / 6.0, 1e-9);
}

TEST(MStep, UninformativePosteriorGivesZeroMean) {
  Rng rng(6);
  const ObservedSequence x = testing::random_observations(30, 3, rng);
  const ThetaParams next = m_step_two_state_gaussian(theta_of(0.3, Vector::Zero(3)), x);
  EXPECT_LT(next.mu.norm(), 1e-14);
}

TEST(MStep, ProjectsZetaOntoFeasibleSet) {
  TwoStateStats st;
  st.mu_stat = vec({1.0});
  st.same_prob = 0.05;
  st.n = 10;
  const ThetaParams th = maximize_two_state(st, FeasibleSet{0.6}, 1.0);
  EXPECT_NEAR(th.zeta(), 0.2, 1e-15);
  EXPECT_NEAR(th.beta, -FeasibleSet{0.6}.beta_bound(), 1e-15);
}

TEST(MStep, ProjectionIsIdempotent) {
  Rng rng(7);
  const FeasibleSet f{0.6};
  for (int i = 0; i < 50; ++i) {
    const ThetaParams a = testing::random_theta(2, 0.9, rng);
    const ObservedSequence x = testing::random_observations(25, 2, rng, 1.0);
    const ThetaParams next = m_step_two_state_gaussian(a, x, {f});
    EXPECT_TRUE(f.contains_zeta(next.zeta()));
    EXPECT_DOUBLE_EQ(f.project_zeta(next.zeta()), next.zeta());
  }
}

TEST(MStep, MaximizesQOverRandomProbes) {
  Rng rng(8);
  const FeasibleSet f{0.6};
  std::uniform_real_distribution<double> unif(f.zeta_lo(), f.zeta_hi());
  for (int trial = 0; trial < 5; ++trial) {
    const ThetaParams prime = testing::random_theta(3, 0.6, rng);
    const ObservedSequence x = sample_sequence(prime, 60, 0, 100 + static_cast<std::uint64_t>(trial)).observed;
    const PosteriorMarginals post = forward_backward(prime, x);
    const ThetaParams best = m_step_from_posteriors(post, x, prime, {f});
    const double q_best = q_value_from_posteriors(GaussianHmm::from_theta(best), post, x).q_total;
    for (int probe = 0; probe < 100; ++probe) {
      const ThetaParams other = theta_of(unif(rng), random_in_ball(best.mu, 1.0, rng), prime.sigma);
      EXPECT_GE(q_best + 1e-12, q_value_from_posteriors(GaussianHmm::from_theta(other), post, x).q_total);
    }
  }
}

TEST(MStep, SigmaUpdateMatchesResidual) {
  Rng rng(9);
  const ThetaParams prime = theta_of(0.3, vec({1.5}), 0.8);
  const ObservedSequence x = sample_sequence(prime, 40, 0, 2).observed;
  const PosteriorMarginals post = forward_backward(prime, x);
  const ThetaParams next = m_step_from_posteriors(post, x, prime, {FeasibleSet{0.6}, true});
  double acc = 0.0;
  for (int i = 1; i <= 40; ++i) {
    const double v = x.at(i)(0);
    acc += post.gamma(i - 1, 1) * std::pow(v - next.mu(0), 2) + post.gamma(i - 1, 0) * std::pow(v + next.mu(0), 2);
  }
  EXPECT_NEAR(next.sigma, std::sqrt(acc / 40.0), 1e-13);
}

TEST(MStep, FixedPointDeviationShrinksLikeRootN) {
  // Median over seeds of ||M_n(theta*) - theta*|| at growing n.
  const ThetaParams star = theta_of(0.2, vec({1.2, 0.0}));
  const FeasibleSet f{0.6};
  std::vector<double> logn, logdev;
  for (int n : {250, 500, 1000, 2000, 4000, 8000}) {
    std::vector<double> dev;
    for (std::uint64_t s = 0; s < 15; ++s) {
      const ObservedSequence x = sample_sequence(star, n, 0, 1000 + s).observed;
      dev.push_back(oplus_distance(m_step_two_state_gaussian(star, x, {f}), star));
    }
    logn.push_back(std::log(n));
    logdev.push_back(std::log(median(dev)));
  }
  const LinearFit fit = fit_line(logn, logdev);
  EXPECT_NEAR(fit.slope, -0.5, 0.15);
}

// -----------------------------------------------------------------------------
// Truncated M-step

TEST(TruncatedMStep, LongClippedWindowsEqualFullStep) {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const ThetaParams prime = testing::random_theta(2, 0.6, rng);
    const ObservedSequence x = testing::random_observations(12, 2, rng);
    const ThetaParams full = m_step_two_state_gaussian(prime, x);
    const ThetaParams trunc = truncated_m_step(prime, x, 12, {}, WindowMode::kClipped);
    EXPECT_LT(oplus_distance(full, trunc), 1e-12);
  }
}

TEST(TruncatedMStep, ZeroDataGivesZeroMean) {
  const SampledPath p = sample_sequence(theta_of(0.3, vec({0.0, 0.0}), 0.0), 20, 3, 1);
  const ThetaParams next = truncated_m_step(theta_of(0.3, vec({1.0, 1.0})), p.observed, 0);
  EXPECT_LT(next.mu.norm(), 1e-15);
}

TEST(TruncatedMStep, NeedsExtensionInExtendedMode) {
  const SampledPath p = sample_sequence(theta_of(0.3, vec({1.0})), 20, 2, 1);
  EXPECT_THROW(truncated_m_step(theta_of(0.3, vec({1.0})), p.observed, 3), MissingExtension);
  EXPECT_NO_THROW(truncated_m_step(theta_of(0.3, vec({1.0})), p.observed, 2));
}

TEST(TruncatedMStep, ApproachesFullStepAsWindowGrows) {
  const ThetaParams star = theta_of(0.2, vec({0.8}));
  const ObservedSequence x = sample_sequence(star, 300, 0, 4).observed;
  const ThetaParams prime = theta_of(0.35, vec({0.5}));
  const ThetaParams full = m_step_two_state_gaussian(prime, x);
  double prev = INFINITY;
  for (int k : {0, 2, 4, 8, 16, 32}) {
    const double gap = oplus_distance(full, truncated_m_step(prime, x, k, {}, WindowMode::kClipped));
    EXPECT_LE(gap, prev * 1.05 + 1e-13) << "k=" << k;
    prev = gap;
  }
  EXPECT_LT(prev, 1e-8);
}

TEST(TruncatedQ, LongClippedWindowsEqualFullQ) {
  Rng rng(11);
  const ThetaParams a = testing::random_theta(2, 0.6, rng);
  const ThetaParams b = testing::random_theta(2, 0.6, rng);
  const ObservedSequence x = testing::random_observations(10, 2, rng);
  EXPECT_NEAR(truncated_q_value(a, b, x, 10, WindowMode::kClipped).q_total, q_value(a, b, x).q_total, 1e-12);
}

TEST(TruncatedQ, MaximizedByTruncatedMStep) {
  Rng rng(12);
  const ThetaParams prime = testing::random_theta(2, 0.6, rng);
  const SampledPath p = sample_sequence(prime, 40, 3, 6);
  const ThetaParams best = truncated_m_step(prime, p.observed, 3);
  const double q_best = truncated_q_value(best, prime, p.observed, 3).q_total;
  std::uniform_real_distribution<double> unif(0.2, 0.8);
  for (int probe = 0; probe < 100; ++probe) {
    const ThetaParams other = theta_of(unif(rng), random_in_ball(best.mu, 1.0, rng), prime.sigma);
    EXPECT_GE(q_best + 1e-12, truncated_q_value(other, prime, p.observed, 3).q_total);
  }
}

// -----------------------------------------------------------------------------
// General s-state M-step

TEST(GeneralMStep, TiedTwoStateMatchesClosedForm) {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const ThetaParams prime = testing::random_theta(3, 0.6, rng);
    const ObservedSequence x = testing::random_observations(30, 3, rng);
    GeneralMStepOptions opt;
    opt.symmetric_two_state = true;
    opt.feasible = FeasibleSet{0.6};
    const GaussianHmm g = m_step_general(GaussianHmm::from_theta(prime), x, opt);
    const ThetaParams c = m_step_two_state_gaussian(prime, x, {FeasibleSet{0.6}});
    EXPECT_LT((g.means.row(1).transpose() - c.mu).norm(), 1e-12);
    EXPECT_LT((g.means.row(0).transpose() + c.mu).norm(), 1e-12);
    EXPECT_NEAR(g.transition(0, 0), c.zeta(), 1e-12);
  }
}

TEST(GeneralMStep, RowsStayStochastic) {
  Rng rng(14);
  const GaussianHmm m = testing::random_model(4, 2, rng);
  const ObservedSequence x = sample_sequence(m, 80, 0, 3).observed;
  const GaussianHmm next = m_step_general(m, x);
  for (int a = 0; a < 4; ++a) EXPECT_NEAR(next.transition.row(a).sum(), 1.0, 1e-12);
  EXPECT_NO_THROW(next.validate());
}

TEST(GeneralMStep, TransitionClampIsRespected) {
  Rng rng(15);
  const GaussianHmm m = testing::random_model(3, 1, rng);
  const ObservedSequence x = sample_sequence(m, 20, 0, 3).observed;
  GeneralMStepOptions opt;
  opt.min_transition = 0.05;
  const GaussianHmm next = m_step_general(m, x, opt);
  EXPECT_GE(next.transition.minCoeff(), 0.05 / (1.0 + 3 * 0.05) - 1e-15);
}

TEST(GeneralMStep, EmptyStateIsReported) {
  GaussianHmm m;
  m.transition = symmetric_transition(0.5);
  m.initial = Vector::Constant(2, 0.5);
  m.means.resize(2, 1);
  m.means << 0.0, 200.0;
  m.sigma = 1.0;
  const ObservedSequence x = ObservedSequence::from_core(Matrix::Zero(5, 1));
  EXPECT_THROW(m_step_general(m, x), EmptyState);
}

TEST(GeneralMStep, MatchesNumericArgmaxOfQ) {
  // s = 3, n = 6, d = 1: optimize Q over (means, softmax rows) with Nelder-Mead.
  Rng rng(16);
  const GaussianHmm mp = testing::random_model(3, 1, rng);
  const ObservedSequence x = sample_sequence(mp, 6, 0, 8).observed;
  const GaussianHmm closed = m_step_general(mp, x);
  const PosteriorMarginals post = forward_backward(mp, x);
  auto unpack = [&](const std::vector<double>& v) {
    GaussianHmm m = mp;
    for (int z = 0; z < 3; ++z) m.means(z, 0) = v[static_cast<std::size_t>(z)];
    for (int a = 0; a < 3; ++a) {
      Eigen::RowVector3d logits(0.0, v[static_cast<std::size_t>(3 + 2 * a)], v[static_cast<std::size_t>(4 + 2 * a)]);
      const Eigen::RowVector3d e = logits.array().exp();
      m.transition.row(a) = e / e.sum();
    }
    return m;
  };
  auto q = [&](const std::vector<double>& v) { return q_value_from_posteriors(unpack(v), post, x).q_total; };
  std::vector<double> v0(9, 0.0);
  for (int z = 0; z < 3; ++z) v0[static_cast<std::size_t>(z)] = mp.means(z, 0);
  std::vector<double> v = oracle::maximize(q, v0, 0.5, 1e-12);
  v = oracle::maximize(q, v, 0.05, 1e-13);
  const GaussianHmm numeric = unpack(v);
  EXPECT_LT((numeric.means - closed.means).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((numeric.transition - closed.transition).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GE(q_value_from_posteriors(closed, post, x).q_total + 1e-12, q(v));
}

// -----------------------------------------------------------------------------
// EM driver

TEST(RunEm, FullEmNeverDecreasesLikelihood) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ThetaParams star = theta_of(0.2, vec({1.0, 0.5}));
    const ObservedSequence x = sample_sequence(star, 400, 0, seed).observed;
    const ThetaParams init = theta_of(0.45, vec({0.3, 0.9}));
    const EmTrajectory tr = run_em(x, init, 20, EmVariant::full(), star, {FeasibleSet{0.6}});
    ASSERT_EQ(tr.size(), 21u);
    for (std::size_t t = 1; t < tr.size(); ++t) EXPECT_GE(tr.log_liks[t], tr.log_liks[t - 1] - 1e-12) << t;
    EXPECT_EQ(tr.opt_err.back(), 0.0);
    EXPECT_LT(tr.stat_err.back(), tr.stat_err.front());
  }
}

TEST(RunEm, TruncatedVariantRuns) {
  const ThetaParams star = theta_of(0.2, vec({1.0}));
  const SampledPath p = sample_sequence(star, 300, 4, 2);
  const EmTrajectory tr = run_em(p.observed, theta_of(0.4, vec({0.5})), 10, EmVariant::truncated(4), star);
  EXPECT_EQ(tr.size(), 11u);
  EXPECT_LT(tr.stat_err.back(), tr.stat_err.front());
}

TEST(RunEm, RejectsInfeasibleStart) {
  const ThetaParams star = theta_of(0.2, vec({1.0}));
  const ObservedSequence x = sample_sequence(star, 50, 0, 2).observed;
  EXPECT_THROW(run_em(x, theta_of(0.1, vec({1.0})), 5, EmVariant::full(), star, {FeasibleSet{0.6}}), DomainError);
  EXPECT_THROW(run_em(x, star, 0, EmVariant::full(), star), DomainError);
}

TEST(RunEm, DefaultIterations) {
  EXPECT_EQ(default_iterations(1000), 28);
  EXPECT_EQ(default_iterations(2), 4);
}

TEST(Distances, LabelSwap) {
  const ThetaParams a = theta_of(0.3, vec({1.0, 2.0}));
  const ThetaParams b = theta_of(0.3, vec({-1.0, -2.0}));
  EXPECT_NEAR(oplus_distance(a, b), 2.0 * std::sqrt(5.0), 1e-14);
  EXPECT_NEAR(label_swap_distance(a, b), 0.0, 1e-14);
}

}  // namespace
}  // namespace bwlab
