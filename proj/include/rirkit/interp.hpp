#pragma once

// Spline interpolation across the microphone axis: every time sample k is
// interpolated independently from the measured microphones' values at k.

#include <algorithm>
#include <numeric>
#include <vector>

#include "rirkit/core.hpp"

namespace rirkit {

// Natural cubic spline (S'' = 0 at both ends) through strictly increasing
// knots, with linear extrapolation along the end slopes. Two knots give the
// line through them; three knots give the interpolating parabola.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw InvalidInput("NaturalCubicSpline: need >= 2 knots with matching values");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw InvalidInput("NaturalCubicSpline: knots must be strictly increasing");
    m_.assign(n, 0.0);
    if (n == 3) {
      // Parabola: constant second derivative equal to twice the 2nd divided difference.
      const double d01 = (y_[1] - y_[0]) / (x_[1] - x_[0]);
      const double d12 = (y_[2] - y_[1]) / (x_[2] - x_[1]);
      const double c2 = 2.0 * (d12 - d01) / (x_[2] - x_[0]);
      m_.assign(3, c2);
    } else if (n > 3) {
      solve_second_derivatives();
    }
  }

  double operator()(double x) const {
    const std::size_t n = x_.size();
    if (x < x_.front()) return y_.front() + slope_left() * (x - x_.front());
    if (x > x_.back()) return y_.back() + slope_right() * (x - x_.back());
    std::size_t i = std::upper_bound(x_.begin(), x_.end(), x) - x_.begin();
    i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
    return segment(i, x);
  }

  double second_derivative(double x, bool from_left) const {
    const std::size_t n = x_.size();
    if (x < x_.front() || x > x_.back()) return 0.0;
    std::size_t i = std::upper_bound(x_.begin(), x_.end(), x) - x_.begin();
    if (from_left && i > 0 && x == x_[i - 1]) --i;
    i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - x) / h, b = (x - x_[i]) / h;
    return a * m_[i] + b * m_[i + 1];
  }

  double slope_left() const {
    const double h = x_[1] - x_[0];
    return (y_[1] - y_[0]) / h - h * (2.0 * m_[0] + m_[1]) / 6.0;
  }
  double slope_right() const {
    const std::size_t n = x_.size();
    const double h = x_[n - 1] - x_[n - 2];
    return (y_[n - 1] - y_[n - 2]) / h + h * (2.0 * m_[n - 1] + m_[n - 2]) / 6.0;
  }

 private:
  double segment(std::size_t i, double x) const {
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - x) / h, b = (x - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
  }

  // Thomas algorithm on the interior equations
  // h_{i-1} M_{i-1} + 2 (h_{i-1} + h_i) M_i + h_i M_{i+1} = 6 (d_i - d_{i-1}).
  void solve_second_derivatives() {
    const std::size_t n = x_.size();
    const std::size_t m = n - 2;
    std::vector<double> diag(m), upper(m), rhs(m);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = k + 1;
      const double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
      diag[k] = 2.0 * (h0 + h1);
      upper[k] = h1;
      rhs[k] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
    }
    for (std::size_t k = 1; k < m; ++k) {
      const double lower = x_[k + 1] - x_[k];  // h_{i-1} for interior knot i = k + 1
      const double w = lower / diag[k - 1];
      diag[k] -= w * upper[k - 1];
      rhs[k] -= w * rhs[k - 1];
    }
    m_[m] = rhs[m - 1] / diag[m - 1];
    for (std::size_t k = m - 1; k-- > 0;) m_[k + 1] = (rhs[k] - upper[k] * m_[k + 2]) / diag[k];
    m_[0] = m_[n - 1] = 0.0;
  }

  std::vector<double> x_, y_, m_;
};

// Linear map from values at the knots to values at the query points
// (rows = queries, cols = knots). The spline is linear in the data, so the
// map is built column by column from unit impulses.
inline Matrix spline_weights(const std::vector<double>& knots, const std::vector<double>& queries) {
  Matrix w(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(knots.size()));
  std::vector<double> unit(knots.size(), 0.0);
  for (std::size_t j = 0; j < knots.size(); ++j) {
    unit[j] = 1.0;
    NaturalCubicSpline s(knots, unit);
    for (std::size_t q = 0; q < queries.size(); ++q)
      w(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j)) = s(queries[q]);
    unit[j] = 0.0;
  }
  return w;
}

// Reconstructs the missing columns of `h` (their contents are ignored) from
// the measured ones. `coords` gives each microphone's position along the
// interpolation axis.
inline RirMatrix sci_interpolate(const RirMatrix& h, const MicMask& mask, const std::vector<double>& coords) {
  if (mask.size() != h.mics()) throw InvalidInput("sci_interpolate: mask width does not match the RIR matrix");
  if (static_cast<int>(coords.size()) != h.mics())
    throw InvalidInput("sci_interpolate: one coordinate per microphone required");
  if (mask.is_all_measured()) return h;
  if (mask.measured_count() < 2) throw InvalidInput("sci_interpolate: at least 2 measured microphones required");

  std::vector<int> known = mask.measured_indices();
  std::sort(known.begin(), known.end(), [&](int a, int b) { return coords[a] < coords[b]; });
  const std::vector<int> missing = mask.missing_indices();
  std::vector<double> knots, queries;
  for (int i : known) knots.push_back(coords[i]);
  for (int i : missing) queries.push_back(coords[i]);

  const Matrix w = spline_weights(knots, queries);
  const Matrix est = select_columns(h.data, known) * w.transpose();
  RirMatrix out = h;
  for (std::size_t q = 0; q < missing.size(); ++q) out.data.col(missing[q]) = est.col(static_cast<Eigen::Index>(q));
  return out;
}

}  // namespace rirkit
