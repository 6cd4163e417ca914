#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "rirkit/beamform.hpp"
#include "rirkit/metrics.hpp"
#include "rirkit/roomsim.hpp"
#include "test_util.hpp"

namespace rirkit {
namespace {

using std::numbers::pi;

CVector random_cvector(int n, std::mt19937& rng) {
  std::normal_distribution<double> g;
  CVector v(n);
  for (int i = 0; i < n; ++i) v(i) = cd(g(rng), g(rng));
  return v;
}

CMatrix random_pd(int n, std::mt19937& rng) {
  CMatrix a(n, n);
  for (int c = 0; c < n; ++c) a.col(c) = random_cvector(n, rng);
  CMatrix phi = a * a.adjoint();
  phi.diagonal().array() += 0.05;
  return phi;
}

TEST(Stft, RoundTrip) {
  Stft stft;
  std::vector<double> x = testing::random_vector(5000, 1);
  std::vector<double> y = stft.synthesize(stft.analyze(x), 5000);
  double num = 0, den = 0;
  for (int i = 0; i < 5000; ++i) num += (x[i] - y[i]) * (x[i] - y[i]), den += x[i] * x[i];
  EXPECT_LT(std::sqrt(num / den), 1e-10);
}

TEST(Stft, RoundTripOtherValidConfigs) {
  for (StftConfig cfg : {StftConfig{256, 64, 256}, StftConfig{128, 32, 512}}) {
    Stft stft(cfg);
    std::vector<double> x = testing::random_vector(3001, 2);
    std::vector<double> y = stft.synthesize(stft.analyze(x), 3001);
    for (int i = 0; i < 3001; ++i) ASSERT_NEAR(y[i], x[i], 1e-10);
  }
}

TEST(Stft, NonColaRejected) {
  EXPECT_THROW(Stft(StftConfig{512, 200, 512}), InvalidInput);
  EXPECT_THROW(Stft(StftConfig{512, 512, 512}), InvalidInput);
  EXPECT_THROW(Stft(StftConfig{512, 256, 256}), InvalidInput);
}

TEST(Stft, BinCenteredSinusoidConcentrated) {
  Stft stft;
  const int bin = 40;
  std::vector<double> x(8192);
  for (int n = 0; n < 8192; ++n) x[n] = std::cos(2.0 * pi * bin * n / 512.0);
  CMatrix s = stft.analyze(x);
  // Interior frames only: edge frames see the zero padding.
  double in = 0, total = 0;
  for (Eigen::Index f = 2; f + 2 < s.rows(); ++f)
    for (Eigen::Index k = 0; k < s.cols(); ++k) {
      const double e = std::norm(s(f, k));
      total += e;
      if (k == bin) in += e;
    }
  // sqrt-Hann sidelobes spill into neighbouring bins, so measure the main lobe.
  double lobe = 0;
  for (Eigen::Index f = 2; f + 2 < s.rows(); ++f)
    for (int k = bin - 1; k <= bin + 1; ++k) lobe += std::norm(s(f, k));
  EXPECT_GT(lobe / total, 0.99);
  EXPECT_GT(in / total, 0.5);
}

TEST(Stft, ZeroSignalZeroFrames) {
  Stft stft;
  std::vector<double> x(2000, 0.0);
  EXPECT_EQ(stft.analyze(x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AtfSteering, ImpulseAndDelay) {
  Matrix h = Matrix::Zero(64, 3);
  h(0, 0) = 1.0;
  h(5, 1) = 1.0;
  h(0, 2) = 1.0;
  SpectralField d = atf_steering(RirMatrix(h, 8000), 128);
  ASSERT_EQ(d.num_bins(), 65);
  for (int k = 0; k < 65; ++k) {
    EXPECT_NEAR(std::abs(d.bins[k](0) - cd(1, 0)), 0.0, 1e-12);
    const cd expected = std::polar(1.0, -2.0 * pi * k * 5 / 128.0);
    EXPECT_NEAR(std::abs(d.bins[k](1) - expected), 0.0, 1e-12);
  }
  EXPECT_NEAR(d.hz(64), 4000.0, 1e-12);
}

TEST(AtfSteering, MatchesNaiveDft) {
  Matrix h = testing::random_matrix(100, 4, 3);
  SpectralField d = atf_steering(RirMatrix(h, 8000), 256);
  for (int k = 0; k < d.num_bins(); ++k)
    for (int m = 0; m < 4; ++m) {
      cd acc(0, 0);
      for (int n = 0; n < 100; ++n) acc += h(n, m) * std::polar(1.0, -2.0 * pi * k * n / 256.0);
      ASSERT_NEAR(std::abs(d.bins[k](m) - acc), 0.0, 1e-10);
    }
  EXPECT_FALSE(d.truncated);
  EXPECT_TRUE(atf_steering(RirMatrix(h, 8000), 64).truncated);
}

TEST(AtfSteering, ResampledBinsMatchLongDft) {
  Matrix h = testing::random_matrix(2048, 2, 4);
  RirMatrix r(h, 8000);
  SpectralField s = steering_for_stft(r, StftConfig{});
  SpectralField full = atf_steering(r, 2048);
  ASSERT_EQ(s.num_bins(), 257);
  for (int k = 0; k < 257; ++k) EXPECT_EQ(s.bins[k], full.bins[4 * k]);
}

TEST(NoiseCov, WhiteNoiseApproachesIdentity) {
  Matrix noise = testing::random_matrix(2000000, 4, 5);
  Stft stft;
  NoiseCovariance cov = estimate_noise_cov(multichannel_stft(noise, stft));
  // Sqrt-Hann frame energy: sum w^2 = frame/2 per unit-variance sample.
  const double scale = 256.0;
  for (int k = 5; k < 250; k += 20) {
    const CMatrix phi = cov.bins[k] / scale;
    EXPECT_LT((phi - CMatrix::Identity(4, 4)).norm() / 2.0, 0.05) << "bin " << k;
  }
}

TEST(NoiseCov, RepeatedSnapshotIsRankOnePlusLoading) {
  std::mt19937 rng(6);
  CVector y = random_cvector(3, rng);
  MultiStft s;
  s.bins.assign(1, CMatrix(3, 10));
  for (int t = 0; t < 10; ++t) s.bins[0].col(t) = y;
  NoiseCovariance cov = estimate_noise_cov(s);
  CMatrix expected = y * y.adjoint();
  expected.diagonal().array() += kDiagonalLoading * y.squaredNorm() / 3.0;
  EXPECT_LT((cov.bins[0] - expected).norm(), 1e-12);
}

TEST(NoiseCov, HermitianAndErrors) {
  Matrix noise = testing::random_matrix(4000, 5, 7);
  NoiseCovariance cov = estimate_noise_cov(multichannel_stft(noise, Stft()));
  for (const auto& phi : cov.bins) EXPECT_LT((phi - phi.adjoint()).norm(), 1e-12);
  EXPECT_THROW(estimate_noise_cov(MultiStft{}), InvalidInput);
}

TEST(Mvdr, TwoMicHandSolution) {
  SpectralField d;
  d.bins = {CVector::Ones(2)};
  NoiseCovariance cov;
  CMatrix phi = CMatrix::Zero(2, 2);
  phi(0, 0) = 1.0, phi(1, 1) = 4.0;
  cov.bins = {phi};
  BeamformerWeights w = mvdr_weights(d, cov);
  EXPECT_NEAR(std::abs(w.bins[0](0) - 0.8), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(w.bins[0](1) - 0.2), 0.0, 1e-12);
}

TEST(Mvdr, IdentityCovarianceMatchedFilter) {
  std::mt19937 rng(8);
  SpectralField d;
  d.bins = {random_cvector(5, rng)};
  NoiseCovariance cov;
  cov.bins = {CMatrix::Identity(5, 5)};
  BeamformerWeights w = mvdr_weights(d, cov);
  EXPECT_LT((w.bins[0] - d.bins[0] / d.bins[0].squaredNorm()).norm(), 1e-12);
}

TEST(Mvdr, DistortionlessOnRandomDraws) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + trial % 7;
    SpectralField d;
    d.bins = {random_cvector(n, rng)};
    NoiseCovariance cov;
    cov.bins = {random_pd(n, rng)};
    BeamformerWeights w = mvdr_weights(d, cov);
    ASSERT_LT(std::abs(w.bins[0].dot(d.bins[0]) - 1.0), 1e-10);
  }
}

TEST(Mvdr, BeatsRandomDistortionlessCompetitors) {
  std::mt19937 rng(10);
  for (int bin = 0; bin < 20; ++bin) {
    CVector d = random_cvector(4, rng);
    CMatrix phi = random_pd(4, rng);
    SpectralField sd;
    sd.bins = {d};
    NoiseCovariance cov;
    cov.bins = {phi};
    const CVector w = mvdr_weights(sd, cov).bins[0];
    const double p_mvdr = w.dot(phi * w).real();
    for (int c = 0; c < 100; ++c) {
      // Project a random vector onto the constraint w^H d = 1.
      CVector v = random_cvector(4, rng);
      v += d * ((1.0 - d.dot(v)) / d.squaredNorm());
      ASSERT_NEAR(std::abs(v.dot(d) - 1.0), 0.0, 1e-10);
      ASSERT_LE(p_mvdr, v.dot(phi * v).real());
    }
  }
}

TEST(Mvdr, NullSteeringBinsZeroed) {
  SpectralField d;
  d.bins = {CVector::Ones(2), CVector::Zero(2)};
  NoiseCovariance cov;
  cov.bins = {CMatrix::Identity(2, 2), CMatrix::Identity(2, 2)};
  BeamformerWeights w = mvdr_weights(d, cov);
  EXPECT_FALSE(w.null_bins[0]);
  EXPECT_TRUE(w.null_bins[1]);
  EXPECT_EQ(w.bins[1].norm(), 0.0);
}

TEST(Mvdr, SingularCovarianceRejected) {
  SpectralField d;
  d.bins = {CVector::Ones(2)};
  NoiseCovariance cov;
  cov.bins = {CMatrix::Zero(2, 2)};
  EXPECT_THROW(mvdr_weights(d, cov), Error);
}

TEST(ApplyBeamformer, OneHotSelectsChannel) {
  Matrix x = testing::random_matrix(3000, 3, 11);
  Stft stft;
  MultiStft y = multichannel_stft(x, stft);
  BeamformerWeights w;
  w.bins.assign(y.bins.size(), CVector::Zero(3));
  for (auto& v : w.bins) v(1) = 1.0;
  std::vector<double> out = apply_beamformer(w, y, stft, 3000);
  for (int i = 0; i < 3000; ++i) ASSERT_NEAR(out[i], x(i, 1), 1e-10);
}

TEST(ApplyBeamformer, DistortionlessForExactAtfInput) {
  std::mt19937 rng(12);
  Stft stft;
  const int bins = stft.config().bins();
  SpectralField d;
  NoiseCovariance cov;
  for (int k = 0; k < bins; ++k) d.bins.push_back(random_cvector(4, rng)), cov.bins.push_back(random_pd(4, rng));
  BeamformerWeights w = mvdr_weights(d, cov);
  std::vector<double> s = testing::random_vector(4000, 13);
  CMatrix sf = stft.analyze(s);
  MultiStft y;
  for (int k = 0; k < bins; ++k) y.bins.push_back(d.bins[k] * sf.col(k).transpose());
  CMatrix out(sf.rows(), bins);
  for (int k = 0; k < bins; ++k) out.col(k) = (w.bins[k].adjoint() * y.bins[k]).transpose();
  EXPECT_LT((out - sf).norm() / sf.norm(), 1e-10);
}

TEST(ApplyBeamformer, OutputEnergyBoundedByOperatorNorm) {
  std::mt19937 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    CVector w = random_cvector(3, rng);
    CVector y = random_cvector(3, rng);
    y /= y.norm();
    // |w^H y|^2 <= lambda_max(w w^H) = ||w||^2 for unit-norm y.
    EXPECT_LE(std::norm(w.dot(y)), w.squaredNorm() * (1 + 1e-12));
  }
  Stft stft;
  Matrix x = testing::random_matrix(2000, 2, 15);
  MultiStft y = multichannel_stft(x, stft);
  BeamformerWeights w;
  w.bins.assign(y.bins.size(), CVector::Zero(3));
  EXPECT_THROW(apply_beamformer(w, y, stft, 2000), InvalidInput);
}

TEST(NullProjectionDist, Identities) {
  Matrix h = testing::random_matrix(128, 6, 16);
  RirMatrix r(h, 8000);
  NullProjectionDist same = null_projection_dist(r, r, 128);
  EXPECT_LT(same.sum, 1e-6);
  EXPECT_EQ(same.skipped, 0);

  // Per-bin complex scaling of h_hat: apply in the frequency domain, return
  // to a real RIR by Hermitian symmetry (real scale at DC and Nyquist).
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.2, 3.0), ph(-pi, pi);
  Matrix scaled(128, 6);
  std::vector<cd> alpha(65);
  for (int k = 0; k < 65; ++k) alpha[k] = (k == 0 || k == 64) ? cd(u(rng), 0) : std::polar(u(rng), ph(rng));
  for (int m = 0; m < 6; ++m) {
    ComplexVector spec = rfft(std::span<const double>(h.col(m).data(), 128), 128);
    for (int k = 0; k < 65; ++k) spec[k] *= alpha[k];
    std::vector<double> t = irfft(spec, 128);
    for (int n = 0; n < 128; ++n) scaled(n, m) = t[n];
  }
  EXPECT_LT(null_projection_dist(r, RirMatrix(scaled, 8000), 128).sum, 1e-6);
}

TEST(NullProjectionDist, OrthogonalBinsScoreOne) {
  // Two mics, delta at n=0: h(f) = (1, 0), h_hat(f) = (0, 1).
  Matrix a = Matrix::Zero(16, 2), b = Matrix::Zero(16, 2);
  a(0, 0) = 1.0;
  b(0, 1) = 1.0;
  NullProjectionDist d = null_projection_dist(RirMatrix(a, 8000), RirMatrix(b, 8000), 16);
  for (std::size_t k = 1; k < d.per_bin.size(); ++k) EXPECT_NEAR(d.per_bin[k], 1.0, 1e-12);
  EXPECT_NEAR(d.sum, 8.0, 1e-12);
  EXPECT_NEAR(d.mean, 1.0, 1e-12);
  EXPECT_TRUE(std::isnan(d.per_bin[0]));
  EXPECT_NEAR(null_projection_dist(RirMatrix(a, 8000), RirMatrix(b, 8000), 16, true).sum, 9.0, 1e-12);
}

TEST(NullProjectionDist, DegenerateBinsSkippedAllDegenerateRejected) {
  Matrix a = testing::random_matrix(16, 2, 18);
  Matrix z = Matrix::Zero(16, 2);
  EXPECT_THROW(null_projection_dist(RirMatrix(a, 8000), RirMatrix(z, 8000), 16), InvalidInput);
  Matrix shape = testing::random_matrix(8, 2, 19);
  EXPECT_THROW(null_projection_dist(RirMatrix(a, 8000), RirMatrix(shape, 8000), 16), InvalidInput);
}

// Full ATF steering beats a measured-subset beamformer on a simulated scene.
TEST(MvdrScene, FullSteeringBeatsMeasuredSubset) {
  const int fs = 8000;
  RoomSpec room;
  room.target_t60 = 0.3;
  ArrayGeometry geo;
  geo.mic_positions = ula_positions(16, 0.04, Point3(3.1, 1.5, 1.4));
  geo.source_position = Point3(3.1, 3.5, 1.4);
  RirMatrix h = simulate_rir(room, geo, 2048, fs);
  ArrayGeometry ngeo = geo;
  ngeo.source_position = Point3(3.1 + 2.0 * std::sin(pi / 3), 1.5 + 2.0 * std::cos(pi / 3), 1.4);
  NoiseSpec noise;
  noise.kind = NoiseKind::directional;
  noise.noise_rirs = simulate_rir(room, ngeo, 2048, fs);
  SceneSignals sc = render_scene(h, pink_bursts(4 * fs, fs, 2), noise, 0.0, 40.0, 4);

  Stft stft;
  const MultiStft speech = multichannel_stft(sc.clean, stft);
  const MultiStft interf = multichannel_stft(sc.interference(), stft);
  const int len = static_cast<int>(sc.length());
  auto score = [&](const std::vector<int>& chans) {
    const SpectralField d = steering_for_stft(h, stft.config()).select(chans);
    const NoiseCovariance cov = estimate_noise_cov(interf.select(chans));
    const BeamformerWeights w = mvdr_weights(d, cov);
    auto ys = apply_beamformer(w, speech.select(chans), stft, len);
    auto yn = apply_beamformer(w, interf.select(chans), stft, len);
    Matrix in = sc.interference();
    return sir_improvement(ys, yn, std::span<const double>(sc.clean.col(0).data(), len),
                           std::span<const double>(in.col(0).data(), len));
  };
  std::vector<int> all(16);
  for (int i = 0; i < 16; ++i) all[i] = i;
  const double full = score(all), missing = score({0, 5, 10, 15});
  EXPECT_GT(full, missing);
  EXPECT_GT(full, 8.0);
}

}  // namespace
}  // namespace rirkit
