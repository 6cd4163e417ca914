#pragma once

// Shared domain types: the RIR matrix, the column availability mask, and the
// patch tiling / normalization used by the inpainting pipeline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rirkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed arguments (bad shapes, empty inputs, invalid configs).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// K x N impulse responses, one column per microphone.
struct RirMatrix {
  Matrix data;
  int sample_rate = 8000;

  RirMatrix() = default;
  RirMatrix(Matrix d, int fs) : data(std::move(d)), sample_rate(fs) { validate(); }

  int samples() const { return static_cast<int>(data.rows()); }
  int mics() const { return static_cast<int>(data.cols()); }

  void validate() const {
    if (data.rows() < 1 || data.cols() < 1)
      throw InvalidInput("RirMatrix: K and N must be >= 1");
    if (sample_rate <= 0) throw InvalidInput("RirMatrix: sample rate must be positive");
    if (!data.allFinite()) throw InvalidInput("RirMatrix: non-finite entries");
  }
};

// true = measured, false = missing.
class MicMask {
 public:
  MicMask() = default;
  explicit MicMask(std::vector<bool> flags) : flags_(std::move(flags)) {
    if (flags_.empty()) throw InvalidInput("MicMask: empty mask");
    if (measured_count() == 0) throw InvalidInput("MicMask: at least one microphone must be measured");
  }

  static MicMask all_measured(int n) { return MicMask(std::vector<bool>(n, true)); }

  static MicMask from_missing(int n, const std::vector<int>& missing) {
    std::vector<bool> f(n, true);
    for (int i : missing) {
      if (i < 0 || i >= n) throw InvalidInput("MicMask: index out of range");
      f[i] = false;
    }
    return MicMask(std::move(f));
  }

  static MicMask from_measured(int n, const std::vector<int>& measured) {
    std::vector<bool> f(n, false);
    for (int i : measured) {
      if (i < 0 || i >= n) throw InvalidInput("MicMask: index out of range");
      f[i] = true;
    }
    return MicMask(std::move(f));
  }

  int size() const { return static_cast<int>(flags_.size()); }
  bool measured(int i) const { return flags_[i]; }
  bool operator[](int i) const { return flags_[i]; }
  const std::vector<bool>& flags() const { return flags_; }

  int measured_count() const { return static_cast<int>(std::count(flags_.begin(), flags_.end(), true)); }
  int missing_count() const { return size() - measured_count(); }
  bool is_all_measured() const { return missing_count() == 0; }

  std::vector<int> measured_indices() const { return indices(true); }
  std::vector<int> missing_indices() const { return indices(false); }

  std::string to_string() const {
    std::string s;
    for (bool b : flags_) s += b ? '1' : '0';
    return s;
  }

  bool operator==(const MicMask&) const = default;

 private:
  std::vector<int> indices(bool value) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (flags_[i] == value) out.push_back(i);
    return out;
  }

  std::vector<bool> flags_;
};

// Keeps only the measured columns.
inline Matrix select_columns(const Matrix& m, const std::vector<int>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
  return out;
}

enum class PadPolicy { reflect, zero };

struct PatchGrid {
  int patch_height = 64;
  int patch_width = 64;
  int stride_rows = 32;
  int stride_cols = 32;
  PadPolicy pad = PadPolicy::reflect;

  void validate() const {
    if (patch_height < 1 || patch_width < 1) throw InvalidInput("PatchGrid: patch dimensions must be >= 1");
    if (stride_rows < 1 || stride_rows > patch_height || stride_cols < 1 || stride_cols > patch_width)
      throw InvalidInput("PatchGrid: stride must lie in [1, patch dimension]");
  }

  // Width (and column stride) clamp to the matrix width.
  PatchGrid clamped_to(int cols) const {
    PatchGrid g = *this;
    g.patch_width = std::min(patch_width, cols);
    g.stride_cols = std::min(stride_cols, g.patch_width);
    return g;
  }
};

struct PatchPlacement {
  int row = 0;
  int col = 0;
  bool operator==(const PatchPlacement&) const = default;
};

struct Tiling {
  std::vector<Matrix> patches;
  std::vector<PatchPlacement> placements;
  PatchGrid grid;  // effective grid after clamping
  int rows = 0;
  int cols = 0;
};

namespace detail {

// Start offsets along one axis: ceil((dim - patch) / stride) + 1 positions at
// multiples of the stride; the last one may overhang and gets padded.
inline std::vector<int> axis_offsets(int dim, int patch, int stride) {
  std::vector<int> out;
  if (dim <= patch) {
    out.push_back(0);
    return out;
  }
  int count = (dim - patch + stride - 1) / stride + 1;
  for (int i = 0; i < count; ++i) out.push_back(i * stride);
  return out;
}

// Mirror an out-of-range index back into [0, dim) without repeating the edge.
inline int reflect_index(int i, int dim) {
  if (dim == 1) return 0;
  int period = 2 * (dim - 1);
  i %= period;
  if (i < 0) i += period;
  return i < dim ? i : period - i;
}

}  // namespace detail

inline Tiling tile_patches(const Matrix& m, const PatchGrid& grid) {
  if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("tile_patches: empty matrix");
  grid.validate();
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());
  Tiling t;
  t.grid = grid.clamped_to(cols);
  t.rows = rows;
  t.cols = cols;
  const int ph = t.grid.patch_height, pw = t.grid.patch_width;
  for (int r0 : detail::axis_offsets(rows, ph, t.grid.stride_rows)) {
    for (int c0 : detail::axis_offsets(cols, pw, t.grid.stride_cols)) {
      Matrix p(ph, pw);
      for (int c = 0; c < pw; ++c) {
        for (int r = 0; r < ph; ++r) {
          int rr = r0 + r, cc = c0 + c;
          if (rr < rows && cc < cols) {
            p(r, c) = m(rr, cc);
          } else if (t.grid.pad == PadPolicy::zero) {
            p(r, c) = 0.0;
          } else {
            p(r, c) = m(detail::reflect_index(rr, rows), detail::reflect_index(cc, cols));
          }
        }
      }
      t.patches.push_back(std::move(p));
      t.placements.push_back({r0, c0});
    }
  }
  return t;
}

// Overlap-averaging reassembly; cells falling in padding are dropped.
inline Matrix untile_patches(const std::vector<Matrix>& patches, const std::vector<PatchPlacement>& placements,
                             int rows, int cols) {
  if (patches.size() != placements.size()) throw InvalidInput("untile_patches: patch/placement count mismatch");
  if (rows < 1 || cols < 1) throw InvalidInput("untile_patches: empty output shape");
  Matrix sum = Matrix::Zero(rows, cols);
  Matrix count = Matrix::Zero(rows, cols);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& pl = placements[i];
    if (pl.row < 0 || pl.col < 0 || pl.row >= rows || pl.col >= cols)
      throw InvalidInput("untile_patches: placement (" + std::to_string(pl.row) + "," + std::to_string(pl.col) +
                         ") outside output shape");
    const Matrix& p = patches[i];
    const int h = std::min<int>(static_cast<int>(p.rows()), rows - pl.row);
    const int w = std::min<int>(static_cast<int>(p.cols()), cols - pl.col);
    sum.block(pl.row, pl.col, h, w) += p.topLeftCorner(h, w);
    count.block(pl.row, pl.col, h, w).array() += 1.0;
  }
  if ((count.array() == 0.0).any()) throw InvalidInput("untile_patches: placements do not cover the output");
  return (sum.array() / count.array()).matrix();
}

inline Matrix untile_patches(const Tiling& t) { return untile_patches(t.patches, t.placements, t.rows, t.cols); }

inline constexpr double kGainFloor = 1e-8;

struct PatchScale {
  double offset = 0.0;
  double gain = 1.0;
};

inline PatchScale patch_scale(double lo, double hi) {
  PatchScale s;
  s.offset = 0.5 * (hi + lo);
  s.gain = std::max(0.5 * (hi - lo), kGainFloor);
  return s;
}

inline Matrix apply_scale(const Matrix& p, const PatchScale& s) { return (p.array() - s.offset) / s.gain; }

inline Matrix denormalize_patch(const Matrix& p, const PatchScale& s) { return p.array() * s.gain + s.offset; }

struct NormalizedPatch {
  Matrix patch;
  PatchScale scale;
};

inline NormalizedPatch normalize_patch(const Matrix& p) {
  if (p.size() == 0) throw InvalidInput("normalize_patch: empty patch");
  if (!p.allFinite()) throw InvalidInput("normalize_patch: non-finite values");
  PatchScale s = patch_scale(p.minCoeff(), p.maxCoeff());
  return {apply_scale(p, s), s};
}

// Range taken over the known columns only; unknown columns are mapped with the
// same affine transform and may leave [-1, 1].
inline NormalizedPatch normalize_patch(const Matrix& p, const std::vector<bool>& known_cols) {
  if (static_cast<Eigen::Index>(known_cols.size()) != p.cols())
    throw InvalidInput("normalize_patch: column mask width mismatch");
  double lo = INFINITY, hi = -INFINITY;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    if (!known_cols[c]) continue;
    lo = std::min(lo, p.col(c).minCoeff());
    hi = std::max(hi, p.col(c).maxCoeff());
  }
  if (!std::isfinite(lo)) return {p, PatchScale{0.0, 1.0}};
  PatchScale s = patch_scale(lo, hi);
  return {apply_scale(p, s), s};
}

}  // namespace rirkit
