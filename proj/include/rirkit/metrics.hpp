#pragma once

// Reconstruction metrics (NMSE, cosine distance), enhancement metrics
// (SI-SDR, SIR improvement) and energy decay analysis (EDC, T60).

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "rirkit/core.hpp"
#include "rirkit/fft.hpp"

namespace rirkit {

inline constexpr double kNmseFloorDb = -120.0;
inline constexpr double kSiSdrClampDb = 60.0;

namespace detail {

inline void check_same_shape(const Matrix& a, const Matrix& b, const MicMask& mask, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput(std::string(who) + ": shape mismatch between ground truth and estimate");
  if (mask.size() != a.cols()) throw InvalidInput(std::string(who) + ": mask width does not match matrix");
  if (mask.missing_count() == 0) throw InvalidInput(std::string(who) + ": no missing columns to score");
}

inline double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace detail

// Mean over missing columns of ||h_hat - h||^2 / ||h||^2, in dB.
inline double nmse(const Matrix& truth, const Matrix& est, const MicMask& mask) {
  detail::check_same_shape(truth, est, mask, "nmse");
  double acc = 0.0;
  const auto missing = mask.missing_indices();
  for (int i : missing) {
    const double ref = truth.col(i).squaredNorm();
    if (ref == 0.0) throw InvalidInput("nmse: zero-norm ground-truth column " + std::to_string(i));
    acc += (est.col(i) - truth.col(i)).squaredNorm() / ref;
  }
  acc /= static_cast<double>(missing.size());
  if (acc <= 0.0) return kNmseFloorDb;
  return std::max(10.0 * std::log10(acc), kNmseFloorDb);
}

struct CosineDistance {
  double value = 0.0;
  int zero_norm_estimates = 0;  // each counted as distance 1
};

inline CosineDistance cosine_distance(const Matrix& truth, const Matrix& est, const MicMask& mask) {
  detail::check_same_shape(truth, est, mask, "cosine_distance");
  CosineDistance cd;
  const auto missing = mask.missing_indices();
  for (int i : missing) {
    const double nh = truth.col(i).norm(), ne = est.col(i).norm();
    if (nh == 0.0) throw InvalidInput("cosine_distance: zero-norm ground-truth column " + std::to_string(i));
    if (ne == 0.0) {
      ++cd.zero_norm_estimates;
      cd.value += 1.0;
      continue;
    }
    const double cosv = truth.col(i).dot(est.col(i)) / (nh * ne);
    cd.value += 1.0 - cosv * cosv;
  }
  cd.value /= static_cast<double>(missing.size());
  return cd;
}

struct SiSdr {
  double db = 0.0;
  int lag = 0;  // estimate[n + lag] aligns with reference[n]
};

// Scale-invariant SDR after a bounded integer-lag alignment by
// cross-correlation peak. Result is clamped to +-60 dB.
inline SiSdr si_sdr(std::span<const double> reference, std::span<const double> estimate, int max_lag = 0) {
  const double ref_e = detail::energy(reference);
  if (ref_e == 0.0) throw InvalidInput("si_sdr: silent reference");
  if (max_lag < 0) throw InvalidInput("si_sdr: negative lag bound");
  SiSdr out;
  if (max_lag > 0) {
    std::vector<double> r = cross_correlation(reference, estimate, max_lag);
    int best = max_lag;
    for (int i = 0; i < static_cast<int>(r.size()); ++i)
      if (std::abs(r[i]) > std::abs(r[best])) best = i;
    out.lag = best - max_lag;
  }
  const int n = static_cast<int>(reference.size());
  std::vector<double> est(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const int j = i + out.lag;
    if (j >= 0 && j < static_cast<int>(estimate.size())) est[i] = estimate[j];
  }
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += est[i] * reference[i];
  const double alpha = dot / ref_e;
  double target_e = 0.0, resid_e = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = alpha * reference[i];
    target_e += t * t;
    resid_e += (est[i] - t) * (est[i] - t);
  }
  if (resid_e <= target_e * 1e-6) {
    out.db = kSiSdrClampDb;
  } else if (target_e <= resid_e * 1e-6) {
    out.db = -kSiSdrClampDb;
  } else {
    out.db = 10.0 * std::log10(target_e / resid_e);
  }
  return out;
}

// Output SIR minus input SIR at the reference microphone.
inline double sir_improvement(std::span<const double> speech_out, std::span<const double> noise_out,
                              std::span<const double> speech_ref, std::span<const double> noise_ref) {
  const double ys = detail::energy(speech_out), yn = detail::energy(noise_out);
  const double xs = detail::energy(speech_ref), xn = detail::energy(noise_ref);
  if (ys == 0.0 || yn == 0.0 || xs == 0.0 || xn == 0.0) throw InvalidInput("sir_improvement: silent segment");
  return 10.0 * std::log10((ys / yn) / (xs / xn));
}

inline constexpr double kEdcFloorDb = -400.0;

// Schroeder backward integral, normalised to 0 dB at n = 0.
inline std::vector<double> edc(std::span<const double> h) {
  const int n = static_cast<int>(h.size());
  std::vector<double> tail(n);
  double acc = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    acc += h[i] * h[i];
    tail[i] = acc;
  }
  if (acc == 0.0) throw InvalidInput("edc: all-zero impulse response");
  const double total = acc;
  std::vector<double> out(n);
  double prev = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = tail[i] > 0.0 ? 10.0 * std::log10(tail[i] / total) : kEdcFloorDb;
    v = std::max(v, kEdcFloorDb);
    // Guard against round-off making the curve tick upwards.
    if (i > 0 && v > prev) v = prev;
    out[i] = i == 0 ? 0.0 : v;
    prev = out[i];
  }
  return out;
}

struct T60Estimate {
  double seconds = 0.0;
  double slope_db_per_s = 0.0;
  bool reliable = true;
};

// T20 extrapolation: least-squares line over the -5..-25 dB range of the EDC,
// T60 = -60 / slope. Flagged unreliable when the curve never reaches -25 dB.
inline T60Estimate estimate_t60(std::span<const double> edc_db, int fs, double upper_db = -5.0,
                                double lower_db = -25.0) {
  if (fs <= 0) throw InvalidInput("estimate_t60: sample rate must be positive");
  const int n = static_cast<int>(edc_db.size());
  int start = -1, stop = n;
  for (int i = 0; i < n; ++i) {
    if (start < 0 && edc_db[i] <= upper_db) start = i;
    if (edc_db[i] < lower_db) {
      stop = i;
      break;
    }
  }
  T60Estimate est;
  est.reliable = stop < n;
  if (start < 0 || stop - start < 2) {
    est.reliable = false;
    est.seconds = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int m = stop - start;
  for (int i = start; i < stop; ++i) {
    const double t = static_cast<double>(i) / fs;
    sx += t;
    sy += edc_db[i];
    sxx += t * t;
    sxy += t * edc_db[i];
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  est.slope_db_per_s = slope;
  est.seconds = slope < 0.0 ? -60.0 / slope : std::numeric_limits<double>::infinity();
  if (!(slope < 0.0)) est.reliable = false;
  return est;
}

inline T60Estimate estimate_t60_from_rir(std::span<const double> h, int fs) {
  std::vector<double> curve = edc(h);
  return estimate_t60(curve, fs);
}

}  // namespace rirkit
