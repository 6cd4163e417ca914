#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "rirkit/metrics.hpp"
#include "rirkit/roomsim.hpp"
#include "test_util.hpp"

namespace rirkit {
namespace {

constexpr int kFs = 8000;

RoomSpec anechoic() {
  RoomSpec room;
  room.dimensions = Point3(10.0, 10.0, 10.0);
  room.max_reflection_order = 0;
  return room;
}

double kernel_energy(const Matrix& h, int col, int center) {
  double e = 0.0;
  for (int n = std::max(0, center - kSincTaps / 2); n <= std::min<int>(h.rows() - 1, center + kSincTaps / 2); ++n)
    e += h(n, col) * h(n, col);
  return e;
}

TEST(SimulateRir, FreeFieldDirectPath) {
  ArrayGeometry geo;
  geo.source_position = Point3(5.0, 5.0, 5.0);
  geo.mic_positions = {Point3(6.0, 5.0, 5.0)};
  RirMatrix h = simulate_rir(anechoic(), geo, 256, kFs);
  Eigen::Index peak;
  h.data.col(0).cwiseAbs().maxCoeff(&peak);
  EXPECT_NEAR(static_cast<double>(peak), 8000.0 / 343.0, 1.0);
  const double total = h.data.col(0).squaredNorm();
  const double in_kernel = kernel_energy(h.data, 0, static_cast<int>(peak));
  const double rest = total - in_kernel;
  EXPECT_TRUE(rest <= 0.0 || 10.0 * std::log10(in_kernel / rest) > 40.0);
}

TEST(SimulateRir, SphericalSpreading) {
  ArrayGeometry geo;
  geo.source_position = Point3(5.0, 5.0, 5.0);
  geo.mic_positions = {Point3(6.0, 5.0, 5.0), Point3(7.0, 5.0, 5.0)};
  RirMatrix h = simulate_rir(anechoic(), geo, 256, kFs);
  const int c1 = static_cast<int>(std::lround(8000.0 * 1.0 / 343.0));
  const int c2 = static_cast<int>(std::lround(8000.0 * 2.0 / 343.0));
  // Band-limited pulse energy is shift invariant, so compare RMS amplitudes.
  const double a1 = std::sqrt(kernel_energy(h.data, 0, c1));
  const double a2 = std::sqrt(kernel_energy(h.data, 1, c2));
  EXPECT_NEAR(a2 / a1, 0.5, 0.025);
  EXPECT_NEAR(20.0 * std::log10(a2 / a1), -6.02, 0.5);
}

TEST(SimulateRir, EyringInversion) {
  RoomSpec room;
  for (double t60 : {0.2, 0.3, 0.5, 0.9}) EXPECT_NEAR(eyring_t60(room, eyring_reflection(room, t60)), t60, 1e-12);
}

TEST(SimulateRir, ReverberationTimeMatchesTarget) {
  RoomSpec room;
  room.target_t60 = 0.3;
  ArrayGeometry geo;
  geo.mic_positions = ula_positions(16, 0.04, Point3(3.1, 1.5, 1.4));
  geo.source_position = Point3(3.1, 3.5, 1.4);
  RirMatrix h = simulate_rir(room, geo, 2048, kFs);
  for (int m : {0, 7, 15}) {
    std::span<const double> col(h.data.col(m).data(), h.samples());
    T60Estimate t = estimate_t60_from_rir(col, kFs);
    EXPECT_TRUE(t.reliable);
    EXPECT_GE(t.seconds, 0.24) << "mic " << m;
    EXPECT_LE(t.seconds, 0.36) << "mic " << m;
    auto curve = edc(col);
    for (std::size_t i = 1; i < curve.size(); ++i) ASSERT_LE(curve[i], curve[i - 1]);
  }
}

TEST(SimulateRir, OutsideRoomRejected) {
  RoomSpec room;
  ArrayGeometry geo;
  geo.source_position = Point3(3.0, 3.0, 1.0);
  geo.mic_positions = {Point3(7.0, 1.0, 1.0)};
  EXPECT_THROW(simulate_rir(room, geo, 128, kFs), InvalidInput);
  geo.mic_positions = {Point3(1.0, 1.0, 1.0)};
  geo.source_position = Point3(1.0, 1.0, -0.1);
  EXPECT_THROW(simulate_rir(room, geo, 128, kFs), InvalidInput);
}

TEST(SimulateRir, LowOrderWarnsAgainstT60Target) {
  RoomSpec room;
  room.target_t60 = 0.3;
  room.max_reflection_order = 2;
  ArrayGeometry geo;
  geo.source_position = Point3(3.0, 3.0, 1.4);
  geo.mic_positions = {Point3(2.0, 2.0, 1.4)};
  SimulationReport report;
  simulate_rir(room, geo, 2048, kFs, &report);
  EXPECT_FALSE(report.warnings.empty());
  room.max_reflection_order = -1;
  simulate_rir(room, geo, 2048, kFs, &report);
  EXPECT_TRUE(report.warnings.empty());
}

TEST(PinkNoise, Deterministic) {
  EXPECT_EQ(generate_pink_noise(4096, 11), generate_pink_noise(4096, 11));
}

TEST(PinkNoise, MinusThreeDbPerOctave) {
  const int n = 1 << 17;
  auto x = generate_pink_noise(n, 3);
  auto s = testing::welch(x, x, 1024);
  // Least-squares fit of 10 log10 PSD against log2 f over 100 Hz .. 3 kHz.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t k = 1; k < s.pxx.size(); ++k) {
    const double f = k * static_cast<double>(kFs) / 1024;
    if (f < 100.0 || f > 3000.0) continue;
    const double lx = std::log2(f), ly = 10.0 * std::log10(s.pxx[k]);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly, ++m;
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  EXPECT_GE(slope, -4.0);
  EXPECT_LE(slope, -2.0);
}

TEST(PinkNoise, SeedsIndependent) {
  const int n = 1 << 17;
  auto a = generate_pink_noise(n, 1), b = generate_pink_noise(n, 2);
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < n; ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  EXPECT_LT(std::abs(ab / std::sqrt(aa * bb)), 0.05);
}

TEST(DiffuseNoise, CoherenceFollowsSinc) {
  std::vector<Point3> mics{Point3(0, 0, 0), Point3(0.04, 0, 0)};
  Matrix x = generate_diffuse_noise(mics, 1 << 17, kFs, 5);
  auto c = testing::msc(std::span<const double>(x.col(0).data(), x.rows()),
                        std::span<const double>(x.col(1).data(), x.rows()), 256);
  const int bin = 500 * 256 / kFs;  // 500 Hz falls exactly on bin 16
  const double kd = 2.0 * std::numbers::pi * 500.0 * 0.04 / 343.0;
  const double sinc = std::sin(kd) / kd;
  EXPECT_NEAR(c[bin], sinc * sinc, 0.15);

  // Wider spacing: coherence drops at higher frequency.
  std::vector<Point3> wide{Point3(0, 0, 0), Point3(0.2, 0, 0)};
  Matrix y = generate_diffuse_noise(wide, 1 << 17, kFs, 6);
  auto cw = testing::msc(std::span<const double>(y.col(0).data(), y.rows()),
                         std::span<const double>(y.col(1).data(), y.rows()), 256);
  const int bin2k = 2000 * 256 / kFs;
  EXPECT_LT(cw[bin2k], 0.2);
}

TEST(DiffuseNoise, SinglePlaneWaveFullyCoherent) {
  std::vector<Point3> mics{Point3(0, 0, 0), Point3(0.04, 0, 0)};
  DiffuseNoiseOptions opt;
  opt.plane_waves = 1;
  Matrix x = generate_diffuse_noise(mics, 1 << 15, kFs, 9, opt);
  auto c = testing::msc(std::span<const double>(x.col(0).data(), x.rows()),
                        std::span<const double>(x.col(1).data(), x.rows()), 256);
  for (std::size_t k = 1; k < c.size() - 1; ++k) EXPECT_GT(c[k], 0.95) << "bin " << k;
}

TEST(DiffuseNoise, CoLocatedMicsIdentical) {
  std::vector<Point3> mics{Point3(0.1, 0.2, 0.3), Point3(0.1, 0.2, 0.3)};
  Matrix x = generate_diffuse_noise(mics, 1 << 14, kFs, 4);
  auto c = testing::msc(std::span<const double>(x.col(0).data(), x.rows()),
                        std::span<const double>(x.col(1).data(), x.rows()), 256);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_NEAR(c[k], 1.0, 1e-9);
}

class RenderSceneTest : public ::testing::Test {
 protected:
  void SetUp() override {
    RoomSpec room;
    room.target_t60 = 0.3;
    geo.mic_positions = ula_positions(4, 0.04, Point3(3.0, 1.5, 1.4));
    geo.source_position = Point3(3.0, 3.5, 1.4);
    rirs = simulate_rir(room, geo, 512, kFs);
    ArrayGeometry ngeo = geo;
    ngeo.source_position = Point3(4.7, 2.5, 1.4);
    noise.kind = NoiseKind::directional;
    noise.noise_rirs = simulate_rir(room, ngeo, 512, kFs);
    source = pink_bursts(8000, kFs, 1);
  }
  ArrayGeometry geo;
  RirMatrix rirs;
  NoiseSpec noise;
  std::vector<double> source;
};

TEST_F(RenderSceneTest, SnrAtReferenceMic) {
  SceneSignals sc = render_scene(rirs, source, noise, 0.0, 10.0, 3);
  const double ce = sc.clean.col(0).squaredNorm(), ne = sc.noise.col(0).squaredNorm();
  const double we = sc.white.col(0).squaredNorm();
  EXPECT_NEAR(10.0 * std::log10(ce / ne), 0.0, 0.01);
  EXPECT_NEAR(10.0 * std::log10(ce / we), 10.0, 0.01);
  EXPECT_EQ(sc.clean.rows(), sc.noise.rows());
  EXPECT_EQ(sc.clean.rows(), sc.white.rows());
}

TEST_F(RenderSceneTest, NoiseGainFollowsDecibels) {
  SceneSignals a = render_scene(rirs, source, noise, 0.0, 10.0, 3);
  SceneSignals b = render_scene(rirs, source, noise, 10.0, 10.0, 3);
  EXPECT_NEAR(b.noise_gain / a.noise_gain, std::pow(10.0, -0.5), 1e-12);
}

TEST_F(RenderSceneTest, SilentSourceRejected) {
  std::vector<double> silent(8000, 0.0);
  EXPECT_THROW(render_scene(rirs, silent, noise, 0.0, 10.0, 3), InvalidInput);
}

TEST(RenderScene, ConvolutionMatchesDirectSum) {
  Matrix toy = testing::random_matrix(64, 3, 8);
  RirMatrix rirs(toy, kFs);
  std::vector<double> src(100);
  for (int i = 0; i < 100; ++i) src[i] = std::sin(0.37 * i) + 0.1 * (i % 7);
  NoiseSpec none;
  SceneSignals sc = render_scene(rirs, src, none, 0.0, 0.0, 1, {0, false});
  ASSERT_EQ(sc.clean.rows(), 100 + 64 - 1);
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < sc.clean.rows(); ++n) {
      double acc = 0.0;
      for (int k = 0; k < 64; ++k)
        if (n - k >= 0 && n - k < 100) acc += toy(k, m) * src[n - k];
      ASSERT_NEAR(sc.clean(n, m), acc, 1e-10);
    }
}

}  // namespace
}  // namespace rirkit
