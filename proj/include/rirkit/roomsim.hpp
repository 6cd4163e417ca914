#pragma once

// Image-source room simulator (shoebox rooms, omni sources/receivers) and the
// scene synthesis used by the beamforming experiments: pink noise, an
// isotropic diffuse noise field built from plane waves, and SNR-controlled
// multichannel mixtures.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rirkit/core.hpp"
#include "rirkit/fft.hpp"

namespace rirkit {

using Point3 = Eigen::Vector3d;

// How a target T60 is turned into wall reflection coefficients.
//   eyring:    closed-form Eyring inversion.
//   simulated: bisection on the image-source response itself, so the
//              Schroeder-measured T60 of a probe RIR hits the target. Shoebox
//              image-source decays run noticeably longer than Eyring predicts.
enum class AbsorptionFit { eyring, simulated };

struct RoomSpec {
  Point3 dimensions{6.0, 5.5, 2.8};
  // Wall reflection coefficients {x0, x1, y0, y1, z0, z1}. Ignored when
  // target_t60 is set.
  std::array<double, 6> reflection{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  std::optional<double> target_t60;
  double speed_of_sound = 343.0;
  int max_reflection_order = -1;  // -1: every image whose arrival fits in K samples
  AbsorptionFit absorption_fit = AbsorptionFit::simulated;

  double volume() const { return dimensions.prod(); }
  double surface() const {
    const auto& d = dimensions;
    return 2.0 * (d.x() * d.y() + d.x() * d.z() + d.y() * d.z());
  }
};

// Uniform reflection coefficient realising a target T60 via Eyring's formula
// T60 = 24 ln(10) V / (-c S ln(1 - alpha)).
inline double eyring_reflection(const RoomSpec& room, double t60) {
  if (t60 <= 0.0) throw InvalidInput("eyring_reflection: T60 must be positive");
  const double k = 24.0 * std::log(10.0) * room.volume() / (room.speed_of_sound * room.surface() * t60);
  const double one_minus_alpha = std::exp(-k);
  return std::sqrt(one_minus_alpha);
}

// Inverse of eyring_reflection, used as the analytic oracle in tests.
inline double eyring_t60(const RoomSpec& room, double beta) {
  const double one_minus_alpha = beta * beta;
  return 24.0 * std::log(10.0) * room.volume() / (-room.speed_of_sound * room.surface() * std::log(one_minus_alpha));
}

struct ArrayGeometry {
  std::vector<Point3> mic_positions;
  Point3 source_position = Point3::Zero();

  int mics() const { return static_cast<int>(mic_positions.size()); }
};

// Uniform linear array along `axis`, centred on `center`.
inline std::vector<Point3> ula_positions(int n, double spacing, const Point3& center, const Point3& axis = Point3::UnitX()) {
  std::vector<Point3> out;
  const Point3 a = axis.normalized();
  for (int i = 0; i < n; ++i) out.push_back(center + (i - 0.5 * (n - 1)) * spacing * a);
  return out;
}

inline bool inside_room(const RoomSpec& room, const Point3& p) {
  return (p.array() > 0.0).all() && (p.array() < room.dimensions.array()).all();
}

struct SimulationReport {
  std::vector<std::string> warnings;
  long images_used = 0;
};

inline constexpr int kSincTaps = 81;

namespace detail {

// Adds amp * windowed-sinc centred at fractional sample `delay`.
inline void add_fractional_impulse(double* h, int len, double delay, double amp) {
  constexpr int half = kSincTaps / 2;
  constexpr double window_half_width = half + 1.0;
  const int center = static_cast<int>(std::lround(delay));
  const int n0 = center - half;
  if (n0 >= len || center + half < 0) return;
  // sin(pi (n - delay)) alternates sign between consecutive n.
  const double x0 = n0 - delay;
  double s = std::sin(std::numbers::pi * x0);
  const std::complex<double> rot = std::polar(1.0, std::numbers::pi / window_half_width);
  std::complex<double> w = std::polar(1.0, std::numbers::pi * x0 / window_half_width);
  for (int k = 0; k < kSincTaps; ++k, s = -s, w *= rot) {
    const int n = n0 + k;
    if (n < 0 || n >= len) continue;
    const double x = n - delay;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : s / (std::numbers::pi * x);
    const double win = 0.5 * (1.0 + w.real());
    h[n] += amp * win * sinc;
  }
}

inline RirMatrix image_source_rir(const RoomSpec& room, const std::array<double, 6>& beta, const ArrayGeometry& geo,
                                  int K, int fs, SimulationReport* report) {
  if (K < 1) throw InvalidInput("simulate_rir: K must be >= 1");
  if (fs <= 0) throw InvalidInput("simulate_rir: sample rate must be positive");
  if ((room.dimensions.array() <= 0.0).any()) throw InvalidInput("simulate_rir: room dimensions must be positive");
  if (geo.mic_positions.empty()) throw InvalidInput("simulate_rir: no microphones");
  if (!inside_room(room, geo.source_position)) throw InvalidInput("simulate_rir: source outside the room");
  for (const auto& p : geo.mic_positions)
    if (!inside_room(room, p)) throw InvalidInput("simulate_rir: microphone outside the room");

  const double c = room.speed_of_sound;
  const Point3& L = room.dimensions;
  const Point3& s = geo.source_position;
  const double max_dist = (K + kSincTaps / 2 + 1) * c / fs;
  const int order = room.max_reflection_order;

  SimulationReport local;
  if (order >= 0 && room.target_t60) {
    const double reach = (order + 1) * L.minCoeff() / c;
    if (reach < std::min(static_cast<double>(K) / fs, *room.target_t60))
      local.warnings.push_back("max_reflection_order " + std::to_string(order) +
                               " truncates the decay before the T60 target / RIR length");
  }

  std::array<int, 3> nmax;
  for (int a = 0; a < 3; ++a) nmax[a] = static_cast<int>(std::ceil(max_dist / (2.0 * L[a]))) + 1;

  Matrix h = Matrix::Zero(K, geo.mics());
  for (int m = 0; m < geo.mics(); ++m) {
    const Point3& r = geo.mic_positions[m];
    double* col = h.col(m).data();
    for (int mx = -nmax[0]; mx <= nmax[0]; ++mx)
      for (int ux = 0; ux < 2; ++ux) {
        const double dx = (1 - 2 * ux) * s.x() - r.x() + 2.0 * mx * L.x();
        const int ox = std::abs(2 * mx - ux);
        if (order >= 0 && ox > order) continue;
        const double gx = std::pow(beta[0], std::abs(mx - ux)) * std::pow(beta[1], std::abs(mx));
        for (int my = -nmax[1]; my <= nmax[1]; ++my)
          for (int uy = 0; uy < 2; ++uy) {
            const double dy = (1 - 2 * uy) * s.y() - r.y() + 2.0 * my * L.y();
            const int oy = std::abs(2 * my - uy);
            if (order >= 0 && ox + oy > order) continue;
            if (std::abs(dx) > max_dist || std::abs(dy) > max_dist) continue;
            const double gy = std::pow(beta[2], std::abs(my - uy)) * std::pow(beta[3], std::abs(my));
            for (int mz = -nmax[2]; mz <= nmax[2]; ++mz)
              for (int uz = 0; uz < 2; ++uz) {
                const double dz = (1 - 2 * uz) * s.z() - r.z() + 2.0 * mz * L.z();
                const int oz = std::abs(2 * mz - uz);
                if (order >= 0 && ox + oy + oz > order) continue;
                const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                if (dist > max_dist) continue;
                const double gz = std::pow(beta[4], std::abs(mz - uz)) * std::pow(beta[5], std::abs(mz));
                const double gain = gx * gy * gz;
                if (gain == 0.0) continue;
                detail::add_fractional_impulse(col, K, fs * dist / c, gain / (4.0 * std::numbers::pi * dist));
                ++local.images_used;
              }
          }
      }
  }
  if (report) {
    report->images_used = local.images_used;
    report->warnings.insert(report->warnings.end(), local.warnings.begin(), local.warnings.end());
  }
  return RirMatrix(std::move(h), fs);
}

}  // namespace detail

// Returns a copy of `room` with explicit uniform reflection coefficients
// realising room.target_t60 (no-op when no target is set). The simulated fit
// probes the microphone nearest the array centroid over max(K, T60 fs) samples.
inline RoomSpec resolve_absorption(const RoomSpec& room, const ArrayGeometry& geo, int K, int fs,
                                   SimulationReport* report = nullptr) {
  if (!room.target_t60) return room;
  const double target = *room.target_t60;
  RoomSpec out = room;
  out.target_t60.reset();
  const double eyring = eyring_reflection(room, target);
  out.reflection = {eyring, eyring, eyring, eyring, eyring, eyring};
  if (room.absorption_fit == AbsorptionFit::eyring || geo.mic_positions.empty()) return out;

  Point3 centroid = Point3::Zero();
  for (const auto& p : geo.mic_positions) centroid += p;
  centroid /= static_cast<double>(geo.mic_positions.size());
  ArrayGeometry probe;
  probe.source_position = geo.source_position;
  probe.mic_positions = {*std::min_element(geo.mic_positions.begin(), geo.mic_positions.end(),
                                           [&](const Point3& a, const Point3& b) {
                                             return (a - centroid).norm() < (b - centroid).norm();
                                           })};
  const int probe_len = std::max(K, static_cast<int>(std::ceil(target * fs)));
  auto measure = [&](double b) -> double {
    RirMatrix h = detail::image_source_rir(room, {b, b, b, b, b, b}, probe, probe_len, fs, nullptr);
    std::vector<double> col(h.data.col(0).data(), h.data.col(0).data() + probe_len);
    // Inline Schroeder T20 so the simulator does not depend on the metrics module.
    std::vector<double> tail(probe_len);
    double acc = 0.0;
    for (int i = probe_len - 1; i >= 0; --i) tail[i] = (acc += col[i] * col[i]);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (int i = 0; i < probe_len; ++i) {
      const double db = 10.0 * std::log10(std::max(tail[i] / acc, 1e-40));
      if (db > -5.0) continue;
      if (db < -25.0) break;
      const double t = static_cast<double>(i) / fs;
      sx += t, sy += db, sxx += t * t, sxy += t * db, ++m;
    }
    if (m < 2) return INFINITY;
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return slope < 0.0 ? -60.0 / slope : INFINITY;
  };
  // Image-source decays are never faster than Eyring's, so its coefficient
  // is an upper bracket unless truncation distorts the probe.
  double lo = 0.02, hi = eyring;
  while (measure(hi) < target) {
    if (hi > 0.99) {
      if (report) report->warnings.push_back("target T60 not reachable by the simulated fit; using Eyring");
      return out;
    }
    hi = 1.0 - 0.5 * (1.0 - hi);
  }
  for (int it = 0; it < 16; ++it) {
    const double mid = 0.5 * (lo + hi);
    (measure(mid) < target ? lo : hi) = mid;
  }
  const double b = 0.5 * (lo + hi);
  out.reflection = {b, b, b, b, b, b};
  return out;
}

// One column per microphone; direct path and reflections are realised as
// windowed-sinc fractional delays with 1/(4 pi r) spreading.
inline RirMatrix simulate_rir(const RoomSpec& room, const ArrayGeometry& geo, int K, int fs,
                              SimulationReport* report = nullptr) {
  if (K < 1) throw InvalidInput("simulate_rir: K must be >= 1");
  if (fs <= 0) throw InvalidInput("simulate_rir: sample rate must be positive");
  if ((room.dimensions.array() <= 0.0).any()) throw InvalidInput("simulate_rir: room dimensions must be positive");
  if (report) *report = {};
  RoomSpec resolved = resolve_absorption(room, geo, K, fs, report);
  return detail::image_source_rir(room, resolved.reflection, geo, K, fs, report);
}

inline constexpr double kPinkCornerHz = 50.0;

namespace detail {

// 1/sqrt(f) amplitude above the corner, flat below it, zero at DC.
inline void pink_shape(ComplexVector& spec, int nfft, int fs) {
  const double corner_bin = std::max(1.0, kPinkCornerHz * nfft / fs);
  spec[0] = 0.0;
  for (std::size_t k = 1; k < spec.size(); ++k) spec[k] /= std::sqrt(std::max(static_cast<double>(k), corner_bin));
}

}  // namespace detail

// Unit-RMS pink noise: white Gaussian noise shaped in the frequency domain to
// -3 dB/octave above 50 Hz.
inline std::vector<double> generate_pink_noise(int length, unsigned long long seed, int fs = 8000) {
  if (length < 1) throw InvalidInput("generate_pink_noise: length must be >= 1");
  const int nfft = next_pow2(std::max(length, 2));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> white(nfft);
  for (auto& v : white) v = gauss(rng);
  ComplexVector spec = rfft(white, nfft);
  detail::pink_shape(spec, nfft, fs);
  std::vector<double> y = irfft(spec, nfft);
  y.resize(length);
  double e = 0.0;
  for (double v : y) e += v * v;
  const double rms = std::sqrt(e / length);
  if (rms > 0.0)
    for (auto& v : y) v /= rms;
  return y;
}

struct DiffuseNoiseOptions {
  int plane_waves = 256;
  double speed_of_sound = 343.0;
};

// Spherically isotropic field: superposition of independent pink plane waves
// from uniformly distributed directions. Returns T x N (column per mic).
inline Matrix generate_diffuse_noise(const std::vector<Point3>& mics, int length, int fs, unsigned long long seed,
                                     const DiffuseNoiseOptions& opt = {}) {
  if (mics.empty()) throw InvalidInput("generate_diffuse_noise: no microphones");
  if (length < 1) throw InvalidInput("generate_diffuse_noise: length must be >= 1");
  if (opt.plane_waves < 1) throw InvalidInput("generate_diffuse_noise: need at least one plane wave");
  const int n = static_cast<int>(mics.size());
  const int nfft = next_pow2(std::max(length, 2));
  const int bins = nfft / 2 + 1;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss;

  std::vector<ComplexVector> acc(n, ComplexVector(bins, 0.0));
  std::vector<double> white(nfft);
  for (int w = 0; w < opt.plane_waves; ++w) {
    const double z = 2.0 * uni(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * uni(rng);
    const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Point3 dir(rxy * std::cos(phi), rxy * std::sin(phi), z);
    for (auto& v : white) v = gauss(rng);
    ComplexVector spec = rfft(white, nfft);
    detail::pink_shape(spec, nfft, fs);
    for (int m = 0; m < n; ++m) {
      const double tau = -dir.dot(mics[m]) / opt.speed_of_sound * fs;  // samples
      const cd step = std::polar(1.0, -2.0 * std::numbers::pi * tau / nfft);
      cd ph = 1.0;
      auto& a = acc[m];
      for (int k = 0; k < bins; ++k, ph *= step) a[k] += spec[k] * ph;
    }
  }
  Matrix out(length, n);
  for (int m = 0; m < n; ++m) {
    std::vector<double> y = irfft(acc[m], nfft);
    for (int t = 0; t < length; ++t) out(t, m) = y[t];
  }
  // Unit RMS at the first microphone.
  const double rms = std::sqrt(out.col(0).squaredNorm() / length);
  if (rms > 0.0) out /= rms;
  return out;
}

enum class NoiseKind { none, directional, diffuse };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  RirMatrix noise_rirs;              // directional: interferer -> mics
  std::vector<Point3> mic_positions;  // diffuse
  DiffuseNoiseOptions diffuse;
};

// Columns are channels, rows are samples.
struct SceneSignals {
  Matrix clean;
  Matrix noise;  // structured (directional or diffuse) component
  Matrix white;
  int sample_rate = 8000;
  double noise_gain = 0.0;
  double white_gain = 0.0;

  Matrix mixture() const { return clean + noise + white; }
  Matrix interference() const { return noise + white; }
  int length() const { return static_cast<int>(clean.rows()); }
};

// Convolves each RIR column with the source (full linear convolution).
inline Matrix convolve_columns(const RirMatrix& rirs, std::span<const double> source) {
  const int len = static_cast<int>(source.size()) + rirs.samples() - 1;
  const int nfft = next_pow2(len);
  ComplexVector fs = rfft(source, nfft);
  Matrix out(len, rirs.mics());
  for (int m = 0; m < rirs.mics(); ++m) {
    ComplexVector fh = rfft(std::span<const double>(rirs.data.col(m).data(), rirs.samples()), nfft);
    for (std::size_t k = 0; k < fh.size(); ++k) fh[k] *= fs[k];
    std::vector<double> y = irfft(fh, nfft);
    for (int t = 0; t < len; ++t) out(t, m) = y[t];
  }
  return out;
}

struct RenderOptions {
  int reference_mic = 0;
  bool add_white = true;
};

// clean/noise energy ratio at the reference mic equals snr_db; white noise is
// set relative to the clean energy at the same mic.
inline SceneSignals render_scene(const RirMatrix& rirs, std::span<const double> source, const NoiseSpec& noise,
                                 double snr_db, double white_snr_db, unsigned long long seed,
                                 const RenderOptions& opt = {}) {
  if (!std::isfinite(snr_db) || !std::isfinite(white_snr_db)) throw InvalidInput("render_scene: SNR must be finite");
  if (static_cast<int>(source.size()) < rirs.samples())
    throw InvalidInput("render_scene: source shorter than the RIR length");
  if (opt.reference_mic < 0 || opt.reference_mic >= rirs.mics())
    throw InvalidInput("render_scene: reference mic out of range");
  double src_energy = 0.0;
  for (double v : source) src_energy += v * v;
  if (src_energy == 0.0) throw InvalidInput("render_scene: silent source signal, SNR undefined");

  SceneSignals sc;
  sc.sample_rate = rirs.sample_rate;
  sc.clean = convolve_columns(rirs, source);
  const int len = sc.length();
  const int n = rirs.mics();
  const double clean_e = sc.clean.col(opt.reference_mic).squaredNorm();
  if (clean_e == 0.0) throw InvalidInput("render_scene: clean signal silent at the reference mic");

  switch (noise.kind) {
    case NoiseKind::none:
      sc.noise = Matrix::Zero(len, n);
      break;
    case NoiseKind::directional: {
      if (noise.noise_rirs.mics() != n) throw InvalidInput("render_scene: noise RIR channel count mismatch");
      std::vector<double> pink = generate_pink_noise(static_cast<int>(source.size()), seed ^ 0x9e3779b97f4a7c15ULL,
                                                      rirs.sample_rate);
      Matrix full = convolve_columns(noise.noise_rirs, pink);
      sc.noise = full.topRows(std::min<Eigen::Index>(len, full.rows()));
      if (sc.noise.rows() < len) sc.noise.conservativeResize(len, n);
      break;
    }
    case NoiseKind::diffuse:
      if (static_cast<int>(noise.mic_positions.size()) != n)
        throw InvalidInput("render_scene: diffuse geometry channel count mismatch");
      sc.noise = generate_diffuse_noise(noise.mic_positions, len, rirs.sample_rate, seed ^ 0x9e3779b97f4a7c15ULL,
                                        noise.diffuse);
      break;
  }
  if (noise.kind != NoiseKind::none) {
    const double noise_e = sc.noise.col(opt.reference_mic).squaredNorm();
    if (noise_e == 0.0) throw InvalidInput("render_scene: structured noise silent at the reference mic");
    sc.noise_gain = std::sqrt(clean_e / noise_e * std::pow(10.0, -snr_db / 10.0));
    sc.noise *= sc.noise_gain;
  }

  sc.white = Matrix::Zero(len, n);
  if (opt.add_white) {
    std::mt19937_64 rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
    std::normal_distribution<double> gauss;
    for (int m = 0; m < n; ++m)
      for (int t = 0; t < len; ++t) sc.white(t, m) = gauss(rng);
    const double white_e = sc.white.col(opt.reference_mic).squaredNorm();
    sc.white_gain = std::sqrt(clean_e / white_e * std::pow(10.0, -white_snr_db / 10.0));
    sc.white *= sc.white_gain;
  }
  return sc;
}

// Bandlimited pink-noise bursts: stands in for speech (on/off activity).
inline std::vector<double> pink_bursts(int length, int fs, unsigned long long seed, double on_s = 0.6,
                                       double off_s = 0.25) {
  std::vector<double> x = generate_pink_noise(length, seed, fs);
  const int on = static_cast<int>(on_s * fs), off = static_cast<int>(off_s * fs);
  const int ramp = std::max(1, fs / 100);
  for (int t = 0; t < length; ++t) {
    const int phase = t % (on + off);
    double g = 0.0;
    if (phase < on) {
      g = 1.0;
      if (phase < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * phase / ramp);
      if (on - phase <= ramp) g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * (on - phase) / ramp));
    }
    x[t] *= g;
  }
  return x;
}

}  // namespace rirkit
