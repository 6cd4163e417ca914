#pragma once

// Small residual CNN noise predictor with a hand-written backward pass.
// Activations are channels x pixels float matrices; a batch of B patches of
// H x W pixels occupies B * H * W consecutive columns (pixel = x * H + y
// within a patch). Convolutions are 3x3, zero padded, via im2col + GEMM.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "rirkit/core.hpp"

namespace rirkit::nn {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;

struct DenoiserConfig {
  int in_channels = 3;
  int channels = 32;
  int blocks = 4;
  int time_dim = 32;

  void validate() const {
    if (in_channels < 1 || channels < 1 || blocks < 0 || time_dim < 2 || time_dim % 2)
      throw InvalidInput("DenoiserConfig: positive channel counts and an even time_dim are required");
  }
};

namespace detail {

inline MatF silu(const MatF& x) { return (x.array() / (1.0f + (-x.array()).exp())).matrix(); }

// d silu / dx = s (1 + x (1 - s)) with s = sigmoid(x).
inline MatF silu_grad(const MatF& x) {
  const Eigen::ArrayXXf s = 1.0f / (1.0f + (-x.array()).exp());
  return (s * (1.0f + x.array() * (1.0f - s))).matrix();
}

// Row k * c + i of a column holds channel i of the neighbour at offset
// (k % 3 - 1, k / 3 - 1) in (y, x). For a fixed x offset the three y
// neighbours are adjacent pixels, so interior rows copy 3c floats at once.
inline void im2col(const MatF& src, int batch, int h, int w, MatF& cols) {
  const int c = static_cast<int>(src.rows());
  const int hw = h * w;
  cols.resize(9 * c, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) {
        float* dst = cols.data() + (static_cast<std::size_t>(b) * hw + x * h + y) * 9 * c;
        for (int dx = 0; dx < 3; ++dx) {
          float* d = dst + dx * 3 * c;
          const int sx = x + dx - 1;
          if (sx < 0 || sx >= w) {
            std::memset(d, 0, sizeof(float) * 3 * c);
            continue;
          }
          const float* col = src.data() + (static_cast<std::size_t>(b) * hw + sx * h) * c;
          if (y > 0 && y + 1 < h) {
            std::memcpy(d, col + (y - 1) * c, sizeof(float) * 3 * c);
            continue;
          }
          for (int dy = 0; dy < 3; ++dy) {
            const int sy = y + dy - 1;
            if (sy < 0 || sy >= h)
              std::memset(d + dy * c, 0, sizeof(float) * c);
            else
              std::memcpy(d + dy * c, col + sy * c, sizeof(float) * c);
          }
        }
      }
}

inline void col2im(const MatF& cols, int batch, int h, int w, int c, MatF& dst) {
  const int hw = h * w;
  dst.setZero(c, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) {
        const float* src = cols.data() + (static_cast<std::size_t>(b) * hw + x * h + y) * 9 * c;
        for (int dx = 0; dx < 3; ++dx) {
          const int sx = x + dx - 1;
          if (sx < 0 || sx >= w) continue;
          float* col = dst.data() + (static_cast<std::size_t>(b) * hw + sx * h) * c;
          const int lo = y > 0 ? 0 : 1, hi = y + 1 < h ? 3 : 2;
          const float* s = src + dx * 3 * c + lo * c;
          float* d = col + (y - 1 + lo) * c;
          for (int i = 0; i < (hi - lo) * c; ++i) d[i] += s[i];
        }
      }
}

inline MatF sinusoidal_embedding(const std::vector<int>& t, int dim) {
  MatF s(dim, static_cast<Eigen::Index>(t.size()));
  const int half = dim / 2;
  for (std::size_t b = 0; b < t.size(); ++b)
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / half);
      s(i, b) = static_cast<float>(std::sin(t[b] * f));
      s(half + i, b) = static_cast<float>(std::cos(t[b] * f));
    }
  return s;
}

}  // namespace detail

// Intermediate values kept by forward() for backward().
struct ForwardCache {
  int batch = 0, h = 0, w = 0;
  MatF temb_in, temb_pre, temb;  // sinusoid, pre-activation, activation
  MatF cols_in;
  std::vector<MatF> block_in, cols_a, pre, cols_v;
  MatF final_h, cols_out;
};

class Denoiser {
 public:
  Denoiser() = default;

  explicit Denoiser(DenoiserConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    layout();
    params_.assign(size_, 0.0f);
    std::mt19937_64 rng(seed);
    auto init = [&](std::size_t off, int rows, int fan_in, float gain) {
      std::normal_distribution<double> g(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
      for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * fan_in; ++i) params_[off + i] = static_cast<float>(g(rng));
    };
    const int c = cfg_.channels;
    init(off_.temb_w, c, cfg_.time_dim, 1.0f);
    init(off_.in_w, c, 9 * cfg_.in_channels, std::sqrt(2.0f));
    for (int b = 0; b < cfg_.blocks; ++b) {
      init(off_.blocks[b].w1, c, 9 * c, std::sqrt(2.0f));
      init(off_.blocks[b].w2, c, 9 * c, 0.1f);  // near-identity residual at start
      init(off_.blocks[b].tw, c, c, 1.0f);
    }
    init(off_.out_w, 1, 9 * c, 0.1f);
  }

  const DenoiserConfig& config() const { return cfg_; }
  std::size_t num_params() const { return size_; }
  std::vector<float>& params() { return params_; }
  const std::vector<float>& params() const { return params_; }

  void set_params(std::vector<float> p) {
    if (p.size() != size_) throw InvalidInput("Denoiser: parameter count mismatch");
    params_ = std::move(p);
  }

  // input: in_channels x (batch * h * w); t: one step index per patch.
  // Returns 1 x (batch * h * w).
  MatF forward(const MatF& input, int h, int w, const std::vector<int>& t, ForwardCache* cache = nullptr) const {
    const int batch = static_cast<int>(t.size());
    const int c = cfg_.channels;
    if (input.rows() != cfg_.in_channels || input.cols() != static_cast<Eigen::Index>(batch) * h * w)
      throw InvalidInput("Denoiser::forward: input shape mismatch");
    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    const bool keep = cache != nullptr;
    fc.batch = batch, fc.h = h, fc.w = w;

    MatF s = detail::sinusoidal_embedding(t, cfg_.time_dim);
    MatF z = (cmap(off_.temb_w, c, cfg_.time_dim) * s).colwise() + cvec(off_.temb_b, c);
    MatF e = detail::silu(z);

    MatF cols;
    detail::im2col(input, batch, h, w, cols);
    MatF hcur = (cmap(off_.in_w, c, 9 * cfg_.in_channels) * cols).colwise() + cvec(off_.in_b, c);
    if (keep) fc.temb_in = s, fc.temb_pre = z, fc.temb = e, fc.cols_in = std::move(cols);
    if (keep) fc.block_in.clear(), fc.cols_a.clear(), fc.pre.clear(), fc.cols_v.clear();

    const int hw = h * w;
    for (int b = 0; b < cfg_.blocks; ++b) {
      const auto& o = off_.blocks[b];
      MatF ca, cv;
      detail::im2col(detail::silu(hcur), batch, h, w, ca);
      MatF u = (cmap(o.w1, c, 9 * c) * ca).colwise() + cvec(o.b1, c);
      const MatF beta = (cmap(o.tw, c, c) * e).colwise() + cvec(o.tb, c);
      for (int i = 0; i < batch; ++i) u.middleCols(static_cast<Eigen::Index>(i) * hw, hw).colwise() += beta.col(i);
      detail::im2col(detail::silu(u), batch, h, w, cv);
      MatF r = (cmap(o.w2, c, 9 * c) * cv).colwise() + cvec(o.b2, c);
      if (keep) {
        fc.block_in.push_back(hcur);
        fc.cols_a.push_back(std::move(ca));
        fc.pre.push_back(std::move(u));
        fc.cols_v.push_back(std::move(cv));
      }
      hcur += r;
    }
    MatF co;
    detail::im2col(detail::silu(hcur), batch, h, w, co);
    MatF out = (cmap(off_.out_w, 1, 9 * c) * co).array() + params_[off_.out_b];
    if (keep) fc.final_h = std::move(hcur), fc.cols_out = std::move(co);
    return out;
  }

  // Accumulates dLoss/dparams into grad (same layout as params()).
  void backward(const ForwardCache& fc, const MatF& dout, std::vector<float>& grad) const {
    if (grad.size() != size_) grad.assign(size_, 0.0f);
    const int c = cfg_.channels, batch = fc.batch, h = fc.h, w = fc.w, hw = h * w;
    auto gmap = [&](std::size_t off, int rows, int cols) { return Eigen::Map<MatF>(grad.data() + off, rows, cols); };
    auto gvec = [&](std::size_t off, int n) { return Eigen::Map<VecF>(grad.data() + off, n); };

    gmap(off_.out_w, 1, 9 * c).noalias() += dout * fc.cols_out.transpose();
    grad[off_.out_b] += dout.sum();
    MatF dcols = cmap(off_.out_w, 1, 9 * c).transpose() * dout;
    MatF dh;
    detail::col2im(dcols, batch, h, w, c, dh);
    dh.array() *= detail::silu_grad(fc.final_h).array();

    MatF de = MatF::Zero(c, batch);
    for (int b = cfg_.blocks - 1; b >= 0; --b) {
      const auto& o = off_.blocks[b];
      gmap(o.w2, c, 9 * c).noalias() += dh * fc.cols_v[b].transpose();
      gvec(o.b2, c) += dh.rowwise().sum();
      dcols.noalias() = cmap(o.w2, c, 9 * c).transpose() * dh;
      MatF du;
      detail::col2im(dcols, batch, h, w, c, du);
      du.array() *= detail::silu_grad(fc.pre[b]).array();
      gmap(o.w1, c, 9 * c).noalias() += du * fc.cols_a[b].transpose();
      gvec(o.b1, c) += du.rowwise().sum();
      MatF dbeta(c, batch);
      for (int i = 0; i < batch; ++i) dbeta.col(i) = du.middleCols(static_cast<Eigen::Index>(i) * hw, hw).rowwise().sum();
      gmap(o.tw, c, c).noalias() += dbeta * fc.temb.transpose();
      gvec(o.tb, c) += dbeta.rowwise().sum();
      de.noalias() += cmap(o.tw, c, c).transpose() * dbeta;
      dcols.noalias() = cmap(o.w1, c, 9 * c).transpose() * du;
      MatF da;
      detail::col2im(dcols, batch, h, w, c, da);
      dh.array() += da.array() * detail::silu_grad(fc.block_in[b]).array();
    }
    gmap(off_.in_w, c, 9 * cfg_.in_channels).noalias() += dh * fc.cols_in.transpose();
    gvec(off_.in_b, c) += dh.rowwise().sum();
    const MatF dz = (de.array() * detail::silu_grad(fc.temb_pre).array()).matrix();
    gmap(off_.temb_w, c, cfg_.time_dim).noalias() += dz * fc.temb_in.transpose();
    gvec(off_.temb_b, c) += dz.rowwise().sum();
  }

 private:
  struct BlockOffsets {
    std::size_t w1, b1, w2, b2, tw, tb;
  };
  struct Offsets {
    std::size_t temb_w, temb_b, in_w, in_b, out_w, out_b;
    std::vector<BlockOffsets> blocks;
  };

  void layout() {
    const std::size_t c = cfg_.channels;
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      const std::size_t o = at;
      at += n;
      return o;
    };
    off_.temb_w = take(c * cfg_.time_dim);
    off_.temb_b = take(c);
    off_.in_w = take(c * 9 * cfg_.in_channels);
    off_.in_b = take(c);
    off_.blocks.clear();
    for (int b = 0; b < cfg_.blocks; ++b) {
      BlockOffsets o;
      o.w1 = take(c * 9 * c), o.b1 = take(c);
      o.w2 = take(c * 9 * c), o.b2 = take(c);
      o.tw = take(c * c), o.tb = take(c);
      off_.blocks.push_back(o);
    }
    off_.out_w = take(9 * c);
    off_.out_b = take(1);
    size_ = at;
  }

  Eigen::Map<const MatF> cmap(std::size_t off, int rows, int cols) const {
    return Eigen::Map<const MatF>(params_.data() + off, rows, cols);
  }
  Eigen::Map<const VecF> cvec(std::size_t off, int n) const { return Eigen::Map<const VecF>(params_.data() + off, n); }

  DenoiserConfig cfg_;
  Offsets off_{};
  std::size_t size_ = 0;
  std::vector<float> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm clip; <= 0 disables
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0f), v_(n, 0.0f) {}

  void step(std::vector<float>& params, const std::vector<float>& grad) {
    ++t_;
    double scale = 1.0;
    if (cfg_.clip_norm > 0) {
      double sq = 0.0;
      for (float g : grad) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float lr = static_cast<float>(cfg_.lr * std::sqrt(c2) / c1), eps = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float g = static_cast<float>(grad[i] * scale);
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
      params[i] -= lr * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<float> m_, v_;
  long t_ = 0;
};

}  // namespace rirkit::nn
