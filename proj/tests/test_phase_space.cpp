#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "twa/phase_space.hpp"

using namespace twa;

TEST(Weyl, Length) {
  RandomStream rng(1, 0);
  for (int i = 0; i < 100; ++i) {
    const double th = std::numbers::pi * rng.uniform();
    const double ph = 20.0 * (rng.uniform() - 0.5);
    EXPECT_NEAR(bloch_weyl(th, ph).norm(), std::sqrt(3.0), 1e-14);
  }
}

TEST(Weyl, PhiIsPeriodic) {
  const auto a = bloch_weyl(0.7, 0.3);
  const auto b = bloch_weyl(0.7, 0.3 + 6 * std::numbers::pi);
  EXPECT_NEAR((a - b).norm(), 0.0, 1e-13);
}

TEST(Sampling, ExcitedComponentsAreUnit) {
  RandomStream rng(5, 0);
  const auto p = sample_initial(InitialState::AllExcited, 200, rng);
  for (std::size_t n = 0; n < p.size(); ++n) {
    const auto s = p.spin(n);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(s[k]), 1.0, 1e-14);
    EXPECT_NEAR(s.z(), 1.0, 1e-14);
  }
}

TEST(Sampling, GroundHasNegativeZ) {
  RandomStream rng(6, 0);
  const auto p = sample_initial(InitialState::AllGround, 50, rng);
  for (std::size_t n = 0; n < p.size(); ++n) EXPECT_NEAR(p.spin(n).z(), -1.0, 1e-14);
}

TEST(Sampling, FirstAndSecondMoments) {
  RandomStream rng(7, 0);
  const int n = 200000;
  const auto p = sample_initial(InitialState::AllExcited, n, rng);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double xy = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto s = p.spin(static_cast<std::size_t>(i));
    mean += s;
    xy += s.x() * s.y();
  }
  mean /= n;
  xy /= n;
  const double se = 1.0 / std::sqrt(double(n));
  EXPECT_NEAR(mean.x(), 0.0, 5 * se);
  EXPECT_NEAR(mean.y(), 0.0, 5 * se);
  EXPECT_DOUBLE_EQ(mean.z(), 1.0);
  EXPECT_NEAR(xy, 0.0, 5 * se);
}

TEST(Sampling, MixedIsBalanced) {
  RandomStream rng(8, 0);
  const int n = 100000;
  const auto p = sample_initial(InitialState::FullyMixed, n, rng);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += p.spin(static_cast<std::size_t>(i)).z();
  EXPECT_NEAR(z / n, 0.0, 5.0 / std::sqrt(double(n)));
}

TEST(Sampling, Deterministic) {
  RandomStream a(9, 3), b(9, 3);
  const auto p = sample_initial(InitialState::FullyMixed, 16, a);
  const auto q = sample_initial(InitialState::FullyMixed, 16, b);
  EXPECT_EQ(p.theta, q.theta);
  EXPECT_EQ(p.phi, q.phi);
}

TEST(Sampling, RejectsEmpty) {
  RandomStream rng(1, 0);
  EXPECT_THROW(sample_initial(InitialState::AllExcited, 0, rng), InvalidArgument);
}

TEST(InitialStateNames, RoundTrip) {
  for (auto s : {InitialState::AllExcited, InitialState::AllGround, InitialState::FullyMixed}) {
    EXPECT_EQ(parse_initial_state(to_string(s)), s);
  }
  EXPECT_EQ(parse_initial_state("inverted"), InitialState::AllExcited);
  EXPECT_THROW(parse_initial_state("coherent"), InvalidArgument);
}

TEST(Clamp, PolarGuard) {
  EXPECT_EQ(clamp_polar(-1.0), kPoleGuard);
  EXPECT_EQ(clamp_polar(0.0), kPoleGuard);
  EXPECT_EQ(clamp_polar(4.0), std::numbers::pi - kPoleGuard);
  EXPECT_EQ(clamp_polar(1.0), 1.0);
}

TEST(Clamp, FoldContinuesThroughPoles) {
  const double pi = std::numbers::pi;
  double th = pi + 0.25, ph = 0.5;
  guard_pole(th, ph, PoleGuard::Fold);
  EXPECT_NEAR(th, pi - 0.25, 1e-15);
  EXPECT_NEAR(ph, 0.5 + pi, 1e-15);
  th = -0.25, ph = 0.5;
  guard_pole(th, ph, PoleGuard::Fold);
  EXPECT_NEAR(th, 0.25, 1e-15);
  EXPECT_NEAR(ph, 0.5 + pi, 1e-15);
  // The spin vector is unchanged by the fold.
  for (double raw : {-7.0, -2.0, 3.5, 5.0, 130.0}) {
    double t = raw, p = 0.3;
    guard_pole(t, p, PoleGuard::Fold);
    EXPECT_GE(t, kPoleGuard);
    EXPECT_LE(t, pi - kPoleGuard);
    EXPECT_LT((bloch_weyl(t, p) - bloch_weyl(raw, 0.3)).norm(), 1e-12) << raw;
  }
  th = 1.0, ph = 0.5;
  guard_pole(th, ph, PoleGuard::Fold);
  EXPECT_EQ(th, 1.0);
  EXPECT_EQ(ph, 0.5);
  th = pi + 0.25, ph = 0.5;
  guard_pole(th, ph, PoleGuard::Clamp);
  EXPECT_EQ(th, pi - kPoleGuard);
  EXPECT_EQ(ph, 0.5);
  EXPECT_EQ(parse_pole_guard(to_string(PoleGuard::Clamp)), PoleGuard::Clamp);
  EXPECT_THROW(parse_pole_guard("wrap"), InvalidArgument);
}

TEST(SinCos, MatchesStd) {
  Eigen::ArrayXXd x(3, 4), s, c;
  x.setRandom();
  x *= 10.0;
  sin_cos(x, s, c);
  ASSERT_EQ(s.rows(), 3);
  ASSERT_EQ(c.cols(), 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(s.data()[i], std::sin(x.data()[i]));
    EXPECT_DOUBLE_EQ(c.data()[i], std::cos(x.data()[i]));
  }
}
