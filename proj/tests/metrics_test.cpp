#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rirkit/metrics.hpp"
#include "test_util.hpp"

namespace rirkit {
namespace {

std::span<const double> as_span(const std::vector<double>& v) { return {v.data(), v.size()}; }

TEST(Nmse, PerfectEstimateHitsFloor) {
  Matrix h = testing::random_matrix(64, 8, 1);
  MicMask mask = MicMask::from_missing(8, {2, 5});
  EXPECT_EQ(nmse(h, h, mask), kNmseFloorDb);
}

TEST(Nmse, ZeroAndDoubledEstimatesAreZeroDb) {
  Matrix h = testing::random_matrix(64, 8, 2);
  MicMask mask = MicMask::from_missing(8, {0, 3, 7});
  EXPECT_NEAR(nmse(h, Matrix::Zero(64, 8), mask), 0.0, 1e-12);
  EXPECT_NEAR(nmse(h, 2.0 * h, mask), 0.0, 1e-12);
}

TEST(Nmse, OnlyMissingColumnsCount) {
  Matrix h = testing::random_matrix(32, 4, 3);
  Matrix e = h;
  e.col(0).setZero();  // measured column, ignored
  e.col(2) *= 1.1;
  MicMask mask = MicMask::from_missing(4, {2});
  EXPECT_NEAR(nmse(h, e, mask), 10.0 * std::log10(0.01), 1e-9);
}

TEST(Nmse, NotScaleInvariant) {
  Matrix h = testing::random_matrix(32, 4, 4);
  MicMask mask = MicMask::from_missing(4, {1});
  EXPECT_GT(nmse(h, 0.5 * h, mask), -10.0);
}

TEST(Nmse, Errors) {
  Matrix h = testing::random_matrix(16, 4, 5);
  EXPECT_THROW(nmse(h, h, MicMask::all_measured(4)), InvalidInput);
  Matrix z = h;
  z.col(1).setZero();
  EXPECT_THROW(nmse(z, h, MicMask::from_missing(4, {1})), InvalidInput);
}

TEST(CosineDistance, Identities) {
  Matrix h = testing::random_matrix(64, 6, 6);
  MicMask mask = MicMask::from_missing(6, {1, 4});
  EXPECT_NEAR(cosine_distance(h, h, mask).value, 0.0, 1e-12);
  EXPECT_NEAR(cosine_distance(h, -h, mask).value, 0.0, 1e-12);
  Matrix s = h;
  s.col(1) *= 3.7, s.col(4) *= -0.2;
  EXPECT_NEAR(cosine_distance(h, s, mask).value, 0.0, 1e-12);
}

TEST(CosineDistance, OrthogonalIsOne) {
  Matrix h = Matrix::Zero(4, 2), e = Matrix::Zero(4, 2);
  h(0, 0) = h(1, 1) = 1.0;
  e(2, 0) = e(3, 1) = 5.0;
  EXPECT_NEAR(cosine_distance(h, e, MicMask::from_missing(2, {0})).value, 1.0, 1e-12);
}

TEST(CosineDistance, ZeroEstimateCountedAndFlagged) {
  Matrix h = testing::random_matrix(8, 3, 7);
  Matrix e = h;
  e.col(2).setZero();
  auto cd = cosine_distance(h, e, MicMask::from_missing(3, {1, 2}));
  EXPECT_EQ(cd.zero_norm_estimates, 1);
  EXPECT_NEAR(cd.value, 0.5, 1e-12);
}

TEST(SiSdr, ScaledCopyClampsHigh) {
  std::vector<double> r = testing::random_vector(1000, 8);
  std::vector<double> e(r);
  for (double& v : e) v *= -3.2;
  EXPECT_EQ(si_sdr(as_span(r), as_span(e)).db, kSiSdrClampDb);
}

TEST(SiSdr, EqualEnergyOrthogonalNoiseIsZeroDb) {
  std::vector<double> r{1, 0, 1, 0}, e{1, 1, 1, 1};
  EXPECT_NEAR(si_sdr(as_span(r), as_span(e)).db, 0.0, 1e-12);
}

TEST(SiSdr, MatchesBruteForceScaling) {
  std::mt19937 rng(9);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> r(8), e(8);
    for (int i = 0; i < 8; ++i) r[i] = g(rng), e[i] = g(rng);
    // Bisection on the derivative of the residual energy in the scale.
    auto resid = [&](double a) {
      double s = 0;
      for (int i = 0; i < 8; ++i) s += (e[i] - a * r[i]) * (e[i] - a * r[i]);
      return s;
    };
    auto slope = [&](double a) {
      double s = 0;
      for (int i = 0; i < 8; ++i) s += -2.0 * r[i] * (e[i] - a * r[i]);
      return s;
    };
    double lo = -100, hi = 100;
    for (int it = 0; it < 200; ++it) (slope(0.5 * (lo + hi)) > 0 ? hi : lo) = 0.5 * (lo + hi);
    const double a = 0.5 * (lo + hi);
    double te = 0;
    for (double v : r) te += a * a * v * v;
    const double expected = 10.0 * std::log10(te / resid(a));
    EXPECT_NEAR(si_sdr(as_span(r), as_span(e)).db, expected, 1e-10) << "trial " << trial;
  }
}

TEST(SiSdr, DecreasesWithNoiseAndIgnoresScale) {
  std::vector<double> r = testing::random_vector(2000, 10), n = testing::random_vector(2000, 11);
  double prev = kSiSdrClampDb + 1;
  for (double g : {0.01, 0.1, 0.3, 1.0, 3.0}) {
    std::vector<double> e(r.size()), e2(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) e[i] = r[i] + g * n[i], e2[i] = 7.0 * e[i];
    const double v = si_sdr(as_span(r), as_span(e)).db;
    EXPECT_LT(v, prev);
    EXPECT_NEAR(si_sdr(as_span(r), as_span(e2)).db, v, 1e-9);
    prev = v;
  }
}

TEST(SiSdr, AlignsIntegerDelay) {
  std::vector<double> r = testing::random_vector(1000, 12);
  std::vector<double> e(1000, 0.0);
  for (int i = 0; i + 17 < 1000; ++i) e[i + 17] = 0.5 * r[i];
  SiSdr s = si_sdr(as_span(r), as_span(e), 40);
  EXPECT_EQ(s.lag, 17);
  EXPECT_GT(s.db, 15.0);
}

TEST(SiSdr, SilentReferenceRejected) {
  std::vector<double> z(10, 0.0), e(10, 1.0);
  EXPECT_THROW(si_sdr(as_span(z), as_span(e)), InvalidInput);
}

TEST(SirImprovement, Definitions) {
  std::vector<double> s = testing::random_vector(500, 13), n = testing::random_vector(500, 14);
  EXPECT_EQ(sir_improvement(as_span(s), as_span(n), as_span(s), as_span(n)), 0.0);
  std::vector<double> half(n);
  for (double& v : half) v /= std::sqrt(2.0);
  EXPECT_NEAR(sir_improvement(as_span(s), as_span(half), as_span(s), as_span(n)), 10.0 * std::log10(2.0), 1e-12);
}

TEST(SirImprovement, OneHotSelectorMatchesDirectEnergies) {
  Matrix sp = testing::random_matrix(400, 4, 15), no = testing::random_matrix(400, 4, 16);
  sp.col(2) *= 3.0;
  for (int j = 0; j < 4; ++j) {
    std::vector<double> ys(400), yn(400), xs(400), xn(400);
    for (int i = 0; i < 400; ++i) ys[i] = sp(i, j), yn[i] = no(i, j), xs[i] = sp(i, 0), xn[i] = no(i, 0);
    const double direct = 10.0 * std::log10(sp.col(j).squaredNorm() / no.col(j).squaredNorm()) -
                          10.0 * std::log10(sp.col(0).squaredNorm() / no.col(0).squaredNorm());
    EXPECT_NEAR(sir_improvement(as_span(ys), as_span(yn), as_span(xs), as_span(xn)), direct, 1e-10);
  }
}

TEST(SirImprovement, SilentSegmentRejected) {
  std::vector<double> s(8, 1.0), z(8, 0.0);
  EXPECT_THROW(sir_improvement(as_span(s), as_span(z), as_span(s), as_span(s)), InvalidInput);
}

TEST(Edc, StartsAtZeroAndNonIncreasing) {
  for (unsigned seed = 0; seed < 10; ++seed) {
    std::vector<double> h = testing::random_vector(300, seed);
    h[150] = 0.0, h[151] = 0.0;
    auto c = edc(as_span(h));
    EXPECT_NEAR(c[0], 0.0, 1e-12);
    for (std::size_t i = 1; i < c.size(); ++i) ASSERT_LE(c[i], c[i - 1]);
  }
  std::vector<double> z(10, 0.0);
  EXPECT_THROW(edc(as_span(z)), InvalidInput);
}

TEST(EstimateT60, SyntheticExponentialDecay) {
  const int fs = 8000;
  const double t60 = 0.3;
  // Amplitude envelope exp(-n/tau) decays 60 dB in T60: tau = T60 fs / (3 ln 10).
  const double tau = t60 * fs / (3.0 * std::log(10.0));
  for (unsigned seed = 20; seed < 25; ++seed) {
    std::vector<double> h = testing::random_vector(2048, seed);
    for (int n = 0; n < 2048; ++n) h[n] *= std::exp(-n / tau);
    T60Estimate e = estimate_t60_from_rir(as_span(h), fs);
    EXPECT_TRUE(e.reliable);
    EXPECT_GE(e.seconds, 0.27);
    EXPECT_LE(e.seconds, 0.33);
  }
}

TEST(EstimateT60, ShallowDecayFlaggedUnreliable) {
  // A shallow curve never reaches -25 dB.
  std::vector<double> curve(100);
  for (int i = 0; i < 100; ++i) curve[i] = -0.1 * i;
  EXPECT_FALSE(estimate_t60(as_span(curve), 8000).reliable);
}

}  // namespace
}  // namespace rirkit
