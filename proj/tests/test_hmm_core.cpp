#include <gtest/gtest.h>

#include <cmath>

#include "bwlab/hmm_core.hpp"

namespace bwlab {
namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

// -----------------------------------------------------------------------------
// stationary_distribution

TEST(StationaryDistribution, SymmetricChainIsUniform) {
  const Vector pi = stationary_distribution(mat2(0.6, 0.4, 0.4, 0.6));
  EXPECT_NEAR(pi(0), 0.5, 1e-14);
  EXPECT_NEAR(pi(1), 0.5, 1e-14);
}

TEST(StationaryDistribution, IidChainIsUniform) {
  const Vector pi = stationary_distribution(mat2(0.5, 0.5, 0.5, 0.5));
  EXPECT_NEAR(pi(0), 0.5, 1e-14);
  EXPECT_NEAR(pi(1), 0.5, 1e-14);
}

TEST(StationaryDistribution, AsymmetricChainMatchesHandSolve) {
  // pi1 * 0.1 = pi2 * 0.2 with pi1 + pi2 = 1.
  const Vector pi = stationary_distribution(mat2(0.9, 0.1, 0.2, 0.8));
  EXPECT_NEAR(pi(0), 2.0 / 3.0, 1e-14);
  EXPECT_NEAR(pi(1), 1.0 / 3.0, 1e-14);
}

TEST(StationaryDistribution, ThreeStateSatisfiesBalance) {
  Matrix a(3, 3);
  a << 0.5, 0.3, 0.2, 0.1, 0.7, 0.2, 0.25, 0.25, 0.5;
  const Vector pi = stationary_distribution(a);
  EXPECT_NEAR(pi.sum(), 1.0, 1e-14);
  EXPECT_LT(((pi.transpose() * a).transpose() - pi).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(StationaryDistribution, ReducibleChainIsRejected) {
  EXPECT_THROW(stationary_distribution(mat2(1.0, 0.0, 0.0, 1.0)), NonErgodicChain);
}

TEST(StationaryDistribution, NonStochasticInputIsRejected) {
  EXPECT_THROW(stationary_distribution(mat2(0.6, 0.5, 0.4, 0.6)), DomainError);
  EXPECT_THROW(stationary_distribution(mat2(1.2, -0.2, 0.4, 0.6)), DomainError);
}

TEST(TransitionModel, SymmetricChainIsReversible) {
  const TransitionModel m(symmetric_transition(0.3), /*require_reversible=*/true);
  EXPECT_TRUE(m.reversible());
  EXPECT_EQ(m.states(), 2);
}

TEST(TransitionModel, CyclicThreeStateIsNotReversible) {
  Matrix a(3, 3);
  a << 0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1;
  const TransitionModel m(a);
  EXPECT_FALSE(m.reversible());
  EXPECT_THROW(TransitionModel(a, true), DomainError);
}

// -----------------------------------------------------------------------------
// mixing_profile

TEST(MixingProfile, SymmetricZetaPointTwo) {
  const MixingProfile p = mixing_profile(TransitionModel(symmetric_transition(0.2)));
  EXPECT_NEAR(p.eps_mix, 0.4, 1e-14);
  EXPECT_NEAR(p.rho_mix, 0.6, 1e-14);
  EXPECT_NEAR(p.pi_min, 0.5, 1e-14);
}

TEST(MixingProfile, IidLimitHasZeroRho) {
  const MixingProfile p = mixing_profile(TransitionModel(symmetric_transition(0.5)));
  EXPECT_NEAR(p.rho_mix, 0.0, 1e-14);
}

TEST(MixingProfile, SymmetricZetaPointEight) {
  const MixingProfile p = mixing_profile(TransitionModel(symmetric_transition(0.8)));
  EXPECT_NEAR(p.rho_mix, 0.6, 1e-14);
}

TEST(MixingProfile, ZeroEntryIsRejected) {
  EXPECT_THROW(mixing_profile(TransitionModel(mat2(0.5, 0.5, 1.0, 0.0))), ZeroTransition);
}

TEST(MixingProfile, RhoEqualsAbsTanhBetaOnGrid) {
  for (double beta = -2.0; beta <= 2.0; beta += 0.05) {
    const MixingProfile p = mixing_profile(TransitionModel(symmetric_transition(zeta_of_beta(beta))));
    EXPECT_NEAR(p.rho_mix, std::abs(std::tanh(beta)), 1e-12) << "beta=" << beta;
  }
}

// -----------------------------------------------------------------------------
// beta / zeta

TEST(BetaZeta, Symmetry) { EXPECT_DOUBLE_EQ(beta_of_zeta(0.5), 0.0); }

TEST(BetaZeta, BetaOneMatchesFormula) { EXPECT_NEAR(zeta_of_beta(1.0), 0.8807970779778824, 1e-15); }

TEST(BetaZeta, RoundTrip) {
  EXPECT_NEAR(zeta_of_beta(beta_of_zeta(0.2)), 0.2, 1e-14);
  for (double z = 0.01; z < 1.0; z += 0.01) EXPECT_NEAR(zeta_of_beta(beta_of_zeta(z)), z, 1e-14);
}

TEST(BetaZeta, OutOfDomain) {
  EXPECT_THROW(beta_of_zeta(0.0), DomainError);
  EXPECT_THROW(beta_of_zeta(1.0), DomainError);
  EXPECT_THROW(beta_of_zeta(-0.1), DomainError);
}

TEST(FeasibleSet, BoundsForBPointSix) {
  const FeasibleSet f{0.6};
  EXPECT_NEAR(f.zeta_lo(), 0.2, 1e-15);
  EXPECT_NEAR(f.zeta_hi(), 0.8, 1e-15);
  EXPECT_NEAR(f.beta_bound(), 0.5 * std::log(4.0), 1e-15);
  EXPECT_NEAR(zeta_of_beta(f.beta_bound()), 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(f.project_zeta(0.05), 0.2);
  EXPECT_DOUBLE_EQ(f.project_zeta(f.project_zeta(0.93)), f.project_zeta(0.93));
}

// -----------------------------------------------------------------------------
// sample_sequence

ThetaParams theta_d(double zeta, int d, double scale, double sigma) {
  return ThetaParams::from_zeta(zeta, Vector::Constant(d, scale), sigma);
}

TEST(SampleSequence, NoiselessObservationsEqualSignedMean) {
  const ThetaParams th = theta_d(0.3, 3, 1.5, 0.0);
  const SampledPath p = sample_sequence(th, 50, 2, 7);
  for (int i = p.observed.first_index(); i <= p.observed.last_index(); ++i) {
    const Eigen::RowVectorXd expected = p.hidden.at(i) * th.mu.transpose();
    EXPECT_EQ(p.observed.at(i), expected);
  }
}

TEST(SampleSequence, LayoutCarriesExtension) {
  const SampledPath p = sample_sequence(theta_d(0.3, 2, 1.0, 1.0), 10, 3, 1);
  EXPECT_EQ(p.observed.total(), 16);
  EXPECT_EQ(p.observed.first_index(), -2);
  EXPECT_EQ(p.observed.last_index(), 13);
  EXPECT_EQ(p.observed.core().total(), 10);
  EXPECT_EQ(p.observed.core().at(1), p.observed.at(1));
  for (int z : p.hidden.z) EXPECT_TRUE(z == -1 || z == 1);
}

TEST(SampleSequence, IidFlipFrequency) {
  const SampledPath p = sample_sequence(theta_d(0.5, 1, 1.0, 1.0), 100000, 0, 11);
  int flips = 0;
  for (int i = 2; i <= 100000; ++i) flips += p.hidden.at(i) != p.hidden.at(i - 1);
  EXPECT_NEAR(flips / 99999.0, 0.5, 0.01);
}

TEST(SampleSequence, StationaryStart) {
  const ThetaParams th = theta_d(0.2, 1, 1.0, 1.0);
  int plus = 0;
  const int seeds = 100000;
  for (int s = 0; s < seeds; ++s) plus += sample_sequence(th, 1, 0, static_cast<std::uint64_t>(s)).hidden.at(1) == 1;
  EXPECT_NEAR(static_cast<double>(plus) / seeds, 0.5, 0.01);
}

TEST(SampleSequence, EmpiricalTransitionMatrixConverges) {
  for (double zeta : {0.2, 0.5, 0.8}) {
    const int n = 20000;
    const SampledPath p = sample_sequence(theta_d(zeta, 1, 1.0, 1.0), n, 0, 3);
    Matrix counts = Matrix::Zero(2, 2);
    for (int i = 2; i <= n; ++i) counts(state_of_label(p.hidden.at(i - 1)), state_of_label(p.hidden.at(i))) += 1;
    for (int r = 0; r < 2; ++r) counts.row(r) /= counts.row(r).sum();
    EXPECT_LT((counts - symmetric_transition(zeta)).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(n)) << zeta;
  }
}

TEST(SampleSequence, SameSeedIsBitIdentical) {
  const ThetaParams th = theta_d(0.2, 4, 0.7, 1.0);
  const SampledPath a = sample_sequence(th, 200, 5, 99);
  const SampledPath b = sample_sequence(th, 200, 5, 99);
  EXPECT_EQ(a.hidden.z, b.hidden.z);
  EXPECT_TRUE(a.observed.x == b.observed.x);
  const SampledPath c = sample_sequence(th, 200, 5, 100);
  EXPECT_FALSE(a.observed.x == c.observed.x);
}

TEST(SampleSequence, RejectsBadLengths) {
  EXPECT_THROW(sample_sequence(theta_d(0.2, 1, 1.0, 1.0), 0, 0, 1), DomainError);
  EXPECT_THROW(sample_sequence(theta_d(0.2, 1, 1.0, 1.0), 5, -1, 1), DomainError);
}

TEST(SampleSequence, GeneralModelFollowsTransitions) {
  GaussianHmm m;
  m.transition.resize(3, 3);
  m.transition << 0.8, 0.1, 0.1, 0.2, 0.6, 0.2, 0.3, 0.3, 0.4;
  m.initial = stationary_distribution(m.transition);
  m.means = Matrix::Zero(3, 1);
  m.sigma = 1.0;
  const int n = 30000;
  const SampledPath p = sample_sequence(m, n, 0, 5);
  Matrix counts = Matrix::Zero(3, 3);
  for (int i = 2; i <= n; ++i) counts(p.hidden.at(i - 1), p.hidden.at(i)) += 1;
  for (int r = 0; r < 3; ++r) counts.row(r) /= counts.row(r).sum();
  EXPECT_LT((counts - m.transition).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(n));
}

TEST(Rng, StreamsDependOnEveryComponent) {
  EXPECT_NE(stream_seed(1, 0, Purpose::kData), stream_seed(1, 0, Purpose::kInit));
  EXPECT_NE(stream_seed(1, 0, Purpose::kData), stream_seed(1, 1, Purpose::kData));
  EXPECT_NE(stream_seed(1, 0, Purpose::kData), stream_seed(2, 0, Purpose::kData));
  EXPECT_EQ(stream_seed(1, 3, Purpose::kProbe), stream_seed(1, 3, Purpose::kProbe));
}

TEST(RandomInBall, StaysInsideRadius) {
  Rng rng(4);
  const Vector c = Vector::Constant(10, 1.0);
  for (int i = 0; i < 1000; ++i) EXPECT_LE((random_in_ball(c, 0.5, rng) - c).norm(), 0.5 + 1e-12);
}

}  // namespace
}  // namespace bwlab
