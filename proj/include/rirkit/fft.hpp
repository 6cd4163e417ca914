#pragma once

// Thin real-FFT helpers over Eigen's FFT module (kissfft backend) and FFT
// based linear convolution / cross-correlation.

#include <complex>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "rirkit/core.hpp"

namespace rirkit {

using cd = std::complex<double>;
using ComplexVector = std::vector<cd>;

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Half spectrum (nfft/2 + 1 bins) of x zero-padded or truncated to nfft.
inline ComplexVector rfft(std::span<const double> x, int nfft) {
  std::vector<double> buf(nfft, 0.0);
  std::copy_n(x.begin(), std::min<std::size_t>(x.size(), static_cast<std::size_t>(nfft)), buf.begin());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  ComplexVector out;
  fft.fwd(out, buf);
  return out;
}

// Inverse of rfft for a half spectrum of nfft/2 + 1 bins.
inline std::vector<double> irfft(const ComplexVector& spec, int nfft) {
  if (static_cast<int>(spec.size()) != nfft / 2 + 1) throw InvalidInput("irfft: spectrum size mismatch");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> out;
  fft.inv(out, spec, nfft);
  return out;
}

// Full linear convolution, length a + b - 1.
inline std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const int len = static_cast<int>(a.size() + b.size() - 1);
  const int nfft = next_pow2(len);
  ComplexVector fa = rfft(a, nfft), fb = rfft(b, nfft);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  std::vector<double> y = irfft(fa, nfft);
  y.resize(len);
  return y;
}

// r[lag] = sum_n y[n + lag] * x[n] for lag in [-max_lag, max_lag].
inline std::vector<double> cross_correlation(std::span<const double> x, std::span<const double> y, int max_lag) {
  const int len = static_cast<int>(std::max(x.size(), y.size()));
  const int nfft = next_pow2(len + max_lag + 1);
  ComplexVector fx = rfft(x, nfft), fy = rfft(y, nfft);
  for (std::size_t k = 0; k < fx.size(); ++k) fy[k] *= std::conj(fx[k]);
  std::vector<double> r = irfft(fy, nfft);
  std::vector<double> out(2 * max_lag + 1);
  for (int lag = -max_lag; lag <= max_lag; ++lag) out[lag + max_lag] = r[(lag + nfft) % nfft];
  return out;
}

}  // namespace rirkit
