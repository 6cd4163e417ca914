#pragma once

// Frequency-domain array processing: sqrt-Hann STFT, ATF steering vectors
// from RIRs, noise covariance estimation, MVDR weights and the per-bin
// null-projection alignment distance between two RIR sets.

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Cholesky>

#include "rirkit/core.hpp"
#include "rirkit/fft.hpp"

namespace rirkit {

using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

struct StftConfig {
  int frame_length = 512;
  int hop = 256;
  int fft_size = 512;

  int bins() const { return fft_size / 2 + 1; }
};

// Periodic sqrt-Hann analysis/synthesis pair. The constructor rejects hops
// for which the squared window does not overlap-add to a constant.
class Stft {
 public:
  explicit Stft(StftConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.frame_length < 2 || cfg_.hop < 1 || cfg_.hop > cfg_.frame_length)
      throw InvalidInput("Stft: need frame_length >= 2 and 1 <= hop <= frame_length");
    if (cfg_.fft_size < cfg_.frame_length) throw InvalidInput("Stft: fft_size must be >= frame_length");
    window_.resize(cfg_.frame_length);
    for (int n = 0; n < cfg_.frame_length; ++n)
      window_[n] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg_.frame_length));
    std::vector<double> ola(cfg_.hop, 0.0);
    for (int n = 0; n < cfg_.frame_length; ++n) ola[n % cfg_.hop] += window_[n] * window_[n];
    for (double v : ola)
      if (std::abs(v - ola[0]) > 1e-10 * ola[0]) throw InvalidInput("Stft: window/hop pair violates the COLA condition");
    ola_gain_ = ola[0];
  }

  const StftConfig& config() const { return cfg_; }

  // Frames x bins. The signal is padded by frame - hop zeros on both sides so
  // every input sample is covered by a full set of overlapping frames.
  CMatrix analyze(std::span<const double> x) const {
    const int pad = cfg_.frame_length - cfg_.hop;
    const int total = static_cast<int>(x.size()) + 2 * pad;
    const int frames = std::max(1, (total - cfg_.frame_length + cfg_.hop - 1) / cfg_.hop + 1);
    CMatrix out(frames, cfg_.bins());
    std::vector<double> buf(cfg_.fft_size);
    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    ComplexVector spec;
    for (int f = 0; f < frames; ++f) {
      std::fill(buf.begin(), buf.end(), 0.0);
      for (int n = 0; n < cfg_.frame_length; ++n) {
        const int idx = f * cfg_.hop + n - pad;
        if (idx >= 0 && idx < static_cast<int>(x.size())) buf[n] = x[idx] * window_[n];
      }
      fft.fwd(spec, buf);
      for (int k = 0; k < cfg_.bins(); ++k) out(f, k) = spec[k];
    }
    return out;
  }

  std::vector<double> synthesize(const CMatrix& frames, int length) const {
    if (frames.cols() != cfg_.bins()) throw InvalidInput("Stft: bin count mismatch");
    const int pad = cfg_.frame_length - cfg_.hop;
    std::vector<double> acc(static_cast<std::size_t>(frames.rows()) * cfg_.hop + cfg_.frame_length, 0.0);
    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    ComplexVector spec(cfg_.bins());
    std::vector<double> buf;
    for (Eigen::Index f = 0; f < frames.rows(); ++f) {
      for (int k = 0; k < cfg_.bins(); ++k) spec[k] = frames(f, k);
      fft.inv(buf, spec, cfg_.fft_size);
      for (int n = 0; n < cfg_.frame_length; ++n) acc[f * cfg_.hop + n] += buf[n] * window_[n];
    }
    std::vector<double> out(length, 0.0);
    for (int i = 0; i < length && i + pad < static_cast<int>(acc.size()); ++i) out[i] = acc[i + pad] / ola_gain_;
    return out;
  }

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  double ola_gain_ = 1.0;
};

// Multichannel STFT stored per bin: bins[f] is channels x frames.
struct MultiStft {
  std::vector<CMatrix> bins;

  int channels() const { return bins.empty() ? 0 : static_cast<int>(bins[0].rows()); }
  int frames() const { return bins.empty() ? 0 : static_cast<int>(bins[0].cols()); }

  MultiStft select(const std::vector<int>& chans) const {
    MultiStft out;
    out.bins.reserve(bins.size());
    for (const auto& b : bins) {
      CMatrix s(static_cast<Eigen::Index>(chans.size()), b.cols());
      for (std::size_t i = 0; i < chans.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = b.row(chans[i]);
      out.bins.push_back(std::move(s));
    }
    return out;
  }
};

// Columns of `signals` are channels.
inline MultiStft multichannel_stft(const Matrix& signals, const Stft& stft) {
  MultiStft out;
  const int ch = static_cast<int>(signals.cols());
  for (int c = 0; c < ch; ++c) {
    CMatrix s = stft.analyze(std::span<const double>(signals.col(c).data(), signals.rows()));
    if (c == 0) out.bins.assign(s.cols(), CMatrix(ch, s.rows()));
    for (Eigen::Index k = 0; k < s.cols(); ++k) out.bins[k].row(c) = s.col(k).transpose();
  }
  return out;
}

// Per-bin complex vectors over channels with the bin -> Hz mapping.
struct SpectralField {
  std::vector<CVector> bins;
  int fft_size = 0;
  int sample_rate = 0;
  bool truncated = false;  // K exceeded fft_size

  int num_bins() const { return static_cast<int>(bins.size()); }
  double hz(int bin) const { return static_cast<double>(bin) * sample_rate / fft_size; }

  SpectralField select(const std::vector<int>& chans) const {
    SpectralField out = *this;
    for (auto& v : out.bins) {
      CVector s(static_cast<Eigen::Index>(chans.size()));
      for (std::size_t i = 0; i < chans.size(); ++i) s(static_cast<Eigen::Index>(i)) = v(chans[i]);
      v = std::move(s);
    }
    return out;
  }
};

// DFT of every RIR column (no normalisation: full ATF). Columns longer than
// fft_size are truncated and flagged.
inline SpectralField atf_steering(const RirMatrix& rirs, int fft_size) {
  if (fft_size < 2 || fft_size % 2) throw InvalidInput("atf_steering: fft size must be even and >= 2");
  SpectralField field;
  field.fft_size = fft_size;
  field.sample_rate = rirs.sample_rate;
  field.truncated = rirs.samples() > fft_size;
  const int bins = fft_size / 2 + 1;
  field.bins.assign(bins, CVector(rirs.mics()));
  for (int m = 0; m < rirs.mics(); ++m) {
    ComplexVector spec = rfft(std::span<const double>(rirs.data.col(m).data(), rirs.samples()), fft_size);
    for (int k = 0; k < bins; ++k) field.bins[k](m) = spec[k];
  }
  return field;
}

// Picks the DFT bins of a long ATF that sit at the STFT bin frequencies.
inline SpectralField resample_to_stft(const SpectralField& atf, const StftConfig& cfg) {
  if (atf.fft_size % cfg.fft_size) throw InvalidInput("resample_to_stft: ATF fft size must be a multiple of the STFT fft size");
  const int step = atf.fft_size / cfg.fft_size;
  SpectralField out;
  out.fft_size = cfg.fft_size;
  out.sample_rate = atf.sample_rate;
  out.truncated = atf.truncated;
  for (int k = 0; k < cfg.bins(); ++k) out.bins.push_back(atf.bins[k * step]);
  return out;
}

// ATF on the STFT grid computed from a DFT long enough for the whole RIR.
inline SpectralField steering_for_stft(const RirMatrix& rirs, const StftConfig& cfg) {
  int nfft = cfg.fft_size;
  while (nfft < rirs.samples()) nfft *= 2;
  return resample_to_stft(atf_steering(rirs, nfft), cfg);
}

inline constexpr double kDiagonalLoading = 1e-4;

struct NoiseCovariance {
  std::vector<CMatrix> bins;
};

// Sample covariance per bin plus diagonal loading delta * tr(Phi) / N.
inline NoiseCovariance estimate_noise_cov(const MultiStft& noise, double loading = kDiagonalLoading) {
  if (noise.bins.empty() || noise.frames() == 0) throw InvalidInput("estimate_noise_cov: no noise frames");
  NoiseCovariance cov;
  const int n = noise.channels();
  cov.bins.reserve(noise.bins.size());
  for (const auto& y : noise.bins) {
    CMatrix phi = (y * y.adjoint()) / static_cast<double>(y.cols());
    const double tr = phi.trace().real();
    phi.diagonal().array() += loading * tr / n;
    phi = 0.5 * (phi + phi.adjoint()).eval();
    cov.bins.push_back(std::move(phi));
  }
  return cov;
}

struct BeamformerWeights {
  std::vector<CVector> bins;
  std::vector<bool> null_bins;  // negligible steering energy: weights zeroed
};

inline constexpr double kNullSteeringRatio = 1e-8;

// w = Phi^{-1} d / (d^H Phi^{-1} d) through a Cholesky solve.
inline BeamformerWeights mvdr_weights(const SpectralField& steering, const NoiseCovariance& cov) {
  if (steering.bins.size() != cov.bins.size()) throw InvalidInput("mvdr_weights: bin count mismatch");
  double max_norm = 0.0;
  for (const auto& d : steering.bins) max_norm = std::max(max_norm, d.norm());
  BeamformerWeights w;
  w.bins.resize(steering.bins.size());
  w.null_bins.assign(steering.bins.size(), false);
  for (std::size_t k = 0; k < steering.bins.size(); ++k) {
    const CVector& d = steering.bins[k];
    const CMatrix& phi = cov.bins[k];
    if (phi.rows() != d.size()) throw InvalidInput("mvdr_weights: channel count mismatch");
    if (d.norm() <= kNullSteeringRatio * max_norm || d.norm() == 0.0) {
      w.bins[k] = CVector::Zero(d.size());
      w.null_bins[k] = true;
      continue;
    }
    Eigen::LLT<CMatrix> llt(phi);
    if (llt.info() != Eigen::Success) throw Error("mvdr_weights: noise covariance not positive definite at bin " + std::to_string(k));
    CVector x = llt.solve(d);
    const cd denom = d.dot(x);  // d^H Phi^{-1} d
    if (!(std::abs(denom) > 0.0) || !x.allFinite()) throw Error("mvdr_weights: singular covariance at bin " + std::to_string(k));
    w.bins[k] = x / denom;
  }
  return w;
}

// Per-bin w^H y, then inverse STFT.
inline std::vector<double> apply_beamformer(const BeamformerWeights& w, const MultiStft& y, const Stft& stft, int length) {
  if (w.bins.size() != y.bins.size()) throw InvalidInput("apply_beamformer: bin count mismatch");
  CMatrix out(y.frames(), static_cast<Eigen::Index>(y.bins.size()));
  for (std::size_t k = 0; k < y.bins.size(); ++k) {
    if (w.bins[k].size() != y.bins[k].rows()) throw InvalidInput("apply_beamformer: channel count mismatch");
    out.col(static_cast<Eigen::Index>(k)) = (w.bins[k].adjoint() * y.bins[k]).transpose();
  }
  return stft.synthesize(out, length);
}

struct NullProjectionDist {
  double sum = 0.0;            // sum over evaluated bins
  double mean = 0.0;           // sum / number of evaluated bins
  std::vector<double> per_bin;  // NaN where skipped
  int skipped = 0;
};

// Per bin: d = (I - h_hat h_hat^H / ||h_hat||^2) h and term ||d|| / ||h||.
// Bins with a zero-norm h or h_hat are skipped and counted; DC is excluded
// unless include_dc is set.
inline NullProjectionDist null_projection_dist(const RirMatrix& truth, const RirMatrix& est, int fft_size,
                                               bool include_dc = false) {
  if (truth.samples() != est.samples() || truth.mics() != est.mics())
    throw InvalidInput("null_projection_dist: shape mismatch");
  const SpectralField h = atf_steering(truth, fft_size);
  const SpectralField hh = atf_steering(est, fft_size);
  NullProjectionDist out;
  out.per_bin.assign(h.bins.size(), std::nan(""));
  int evaluated = 0;
  for (std::size_t k = include_dc ? 0 : 1; k < h.bins.size(); ++k) {
    const CVector& a = h.bins[k];
    const CVector& b = hh.bins[k];
    const double na = a.norm(), nb2 = b.squaredNorm();
    if (na == 0.0 || nb2 == 0.0) {
      ++out.skipped;
      continue;
    }
    const CVector d = a - b * (b.dot(a) / nb2);
    out.per_bin[k] = d.norm() / na;
    out.sum += out.per_bin[k];
    ++evaluated;
  }
  if (evaluated == 0) throw InvalidInput("null_projection_dist: every bin is degenerate");
  out.mean = out.sum / evaluated;
  return out;
}

}  // namespace rirkit
