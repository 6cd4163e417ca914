#pragma once

// DDPM machinery on RIR patches: noise schedules, closed-form forward
// noising, epsilon-prediction training of the CNN in nn.hpp, ancestral
// reverse steps and RePaint-style masked inpainting, plus the end-to-end
// matrix -> patches -> inpaint -> matrix reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rirkit/core.hpp"
#include "rirkit/nn.hpp"

namespace rirkit {

using ColumnMask = std::vector<bool>;  // true = known column

enum class ScheduleKind { linear, cosine, custom };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::cosine: return "cosine";
    default: return "custom";
  }
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "custom") return ScheduleKind::custom;
  throw InvalidInput("unknown schedule kind '" + s + "'");
}

// Steps are 1-based: beta(t), alpha_bar(t) for t = 1..T, alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule from_betas(std::vector<double> betas, ScheduleKind kind = ScheduleKind::custom) {
    if (betas.empty()) throw InvalidInput("NoiseSchedule: at least one step required");
    NoiseSchedule s;
    s.kind_ = kind;
    s.beta_ = std::move(betas);
    double acc = 1.0;
    for (double b : s.beta_) {
      if (!(b > 0.0 && b < 1.0)) throw InvalidInput("NoiseSchedule: every beta must lie in (0, 1)");
      acc *= 1.0 - b;
      s.alpha_bar_.push_back(acc);
    }
    return s;
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  ScheduleKind kind() const { return kind_; }
  const std::vector<double>& betas() const { return beta_; }

  double beta(int t) const { return beta_.at(check(t) - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bar_.at(check(t) - 1);
  }
  // Variance of q(x_{t-1} | x_t, x_0); zero at t = 1.
  double posterior_variance(int t) const { return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)); }

 private:
  int check(int t) const {
    if (t < 1 || t > steps()) throw InvalidInput("NoiseSchedule: step " + std::to_string(t) + " outside [1, T]");
    return t;
  }

  ScheduleKind kind_ = ScheduleKind::custom;
  std::vector<double> beta_, alpha_bar_;
};

// Linear: beta from 1e-4 to 0.02 at T = 1000, both ends scaled by 1000 / T so
// shorter chains still end near pure noise. Cosine: alpha_bar follows
// cos^2 with offset 0.008, betas capped at 0.999.
inline NoiseSchedule make_schedule(int steps, ScheduleKind kind = ScheduleKind::linear) {
  if (steps < 2) throw InvalidInput("make_schedule: T must be >= 2");
  std::vector<double> b(steps);
  if (kind == ScheduleKind::linear) {
    const double scale = 1000.0 / steps;
    const double lo = 1e-4 * scale, hi = std::min(0.02 * scale, 0.999);
    for (int i = 0; i < steps; ++i) b[i] = lo + (hi - lo) * i / (steps - 1);
  } else if (kind == ScheduleKind::cosine) {
    auto f = [&](double t) {
      const double c = std::cos((t / steps + 0.008) / 1.008 * std::numbers::pi / 2);
      return c * c;
    };
    for (int i = 0; i < steps; ++i) b[i] = std::min(1.0 - f(i + 1) / f(i), 0.999);
  } else {
    throw InvalidInput("make_schedule: custom schedules come from NoiseSchedule::from_betas");
  }
  return NoiseSchedule::from_betas(std::move(b), kind);
}

inline Matrix forward_diffuse(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& s) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw InvalidInput("forward_diffuse: noise shape mismatch");
  if (t < 1) throw InvalidInput("forward_diffuse: t must be >= 1");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// One ancestral step from the predicted noise; z is ignored at t = 1.
inline Matrix reverse_step(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& s, const Matrix& z) {
  const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  Matrix mean = (x_t - coef * eps_hat) / std::sqrt(s.alpha(t));
  if (t > 1) mean += std::sqrt(s.posterior_variance(t)) * z;
  return mean;
}

// Batched noise predictor eps(x_t, t, M). known_data holds x0 on the known
// columns (other columns are zero).
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  virtual std::vector<Matrix> predict(const std::vector<Matrix>& x_t, int t, const std::vector<ColumnMask>& known,
                                      const std::vector<Matrix>& known_data) const = 0;
};

struct ModelConfig {
  nn::DenoiserConfig net{};
  int patch_rows = 64;
  int patch_cols = 16;
  bool conditional = true;  // feed mask * x0 as an extra input channel
};

class DiffusionModel : public EpsilonModel {
 public:
  DiffusionModel() = default;
  DiffusionModel(ModelConfig cfg, NoiseSchedule schedule, std::uint64_t seed) : cfg_(cfg), schedule_(std::move(schedule)) {
    cfg_.net.in_channels = cfg_.conditional ? 3 : 2;
    if (cfg_.patch_rows < 1 || cfg_.patch_cols < 1) throw InvalidInput("DiffusionModel: patch shape must be positive");
    net_ = nn::Denoiser(cfg_.net, seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  nn::Denoiser& net() { return net_; }
  const nn::Denoiser& net() const { return net_; }

  // Packs x_t, the mask and (if conditional) the known data into channels.
  nn::MatF pack(const std::vector<Matrix>& x_t, const std::vector<ColumnMask>& known,
                const std::vector<Matrix>& known_data, std::size_t begin, std::size_t end) const {
    const int h = static_cast<int>(x_t[begin].rows()), w = static_cast<int>(x_t[begin].cols());
    nn::MatF in(cfg_.net.in_channels, static_cast<Eigen::Index>(end - begin) * h * w);
    for (std::size_t b = begin; b < end; ++b) {
      if (x_t[b].rows() != h || x_t[b].cols() != w || static_cast<int>(known[b].size()) != w)
        throw InvalidInput("DiffusionModel: inconsistent patch shapes in batch");
      for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
          const Eigen::Index p = static_cast<Eigen::Index>(b - begin) * h * w + x * h + y;
          in(0, p) = static_cast<float>(x_t[b](y, x));
          in(1, p) = known[b][x] ? 1.0f : 0.0f;
          if (cfg_.conditional) in(2, p) = known[b][x] ? static_cast<float>(known_data[b](y, x)) : 0.0f;
        }
    }
    return in;
  }

  std::vector<Matrix> predict(const std::vector<Matrix>& x_t, int t, const std::vector<ColumnMask>& known,
                              const std::vector<Matrix>& known_data) const override {
    std::vector<Matrix> out;
    out.reserve(x_t.size());
    if (x_t.empty()) return out;
    const int h = static_cast<int>(x_t[0].rows()), w = static_cast<int>(x_t[0].cols());
    if (h != cfg_.patch_rows) throw InvalidInput("DiffusionModel: patch height differs from the trained height");
    const std::size_t chunk = std::max<std::size_t>(1, 32768 / static_cast<std::size_t>(h * w));
    for (std::size_t begin = 0; begin < x_t.size(); begin += chunk) {
      const std::size_t end = std::min(x_t.size(), begin + chunk);
      const nn::MatF y = net_.forward(pack(x_t, known, known_data, begin, end), h, w,
                                      std::vector<int>(end - begin, t));
      for (std::size_t b = begin; b < end; ++b) {
        Matrix m(h, w);
        for (int x = 0; x < w; ++x)
          for (int yy = 0; yy < h; ++yy) m(yy, x) = y(0, static_cast<Eigen::Index>(b - begin) * h * w + x * h + yy);
        out.push_back(std::move(m));
      }
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  NoiseSchedule schedule_;
  nn::Denoiser net_;
};

// ---------------------------------------------------------------- training

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 2e-3;
  double final_lr_fraction = 0.1;  // cosine decay target
  std::uint64_t seed = 0;
  bool flip_augment = true;
  bool renormalize_known = true;  // rescale each sample by its known columns
  bool masked_loss = true;        // conditional models: score unknown cells only
  double max_abs_normalized = 4.0;  // reject samples whose unknown part explodes
};

struct TrainResult {
  DiffusionModel model;
  std::vector<double> epoch_loss;
};

// Random training mask over w columns with 1..w-2 missing: a uniform subset,
// a contiguous measured block, or a regular comb, each with fixed odds.
inline ColumnMask sample_training_mask(int w, std::mt19937_64& rng) {
  if (w < 3) {
    ColumnMask m(w, true);
    if (w == 2) m[rng() % 2] = false;
    return m;
  }
  std::uniform_int_distribution<int> missing_d(1, w - 2);
  const int missing = missing_d(rng);
  const int measured = w - missing;
  ColumnMask m(w, false);
  const int kind = static_cast<int>(rng() % 5);
  if (kind <= 2) {
    std::vector<int> idx(w);
    for (int i = 0; i < w; ++i) idx[i] = i;
    for (int i = 0; i < measured; ++i) {
      std::uniform_int_distribution<int> pick(i, w - 1);
      std::swap(idx[i], idx[pick(rng)]);
      m[idx[i]] = true;
    }
  } else if (kind == 3) {
    std::uniform_int_distribution<int> start_d(0, w - measured);
    const int start = start_d(rng);
    for (int i = 0; i < measured; ++i) m[start + i] = true;
  } else {
    // Evenly spread measured columns including both ends when possible.
    for (int i = 0; i < measured; ++i) {
      const int c = measured == 1 ? static_cast<int>(rng() % w) : static_cast<int>(std::lround(i * (w - 1.0) / (measured - 1)));
      m[c] = true;
    }
  }
  if (std::count(m.begin(), m.end(), true) == 0) m[0] = true;
  return m;
}

inline TrainResult train_denoiser(const std::vector<Matrix>& patches, const NoiseSchedule& schedule,
                                  const ModelConfig& model_cfg, const TrainConfig& cfg,
                                  const std::function<void(int, double)>& on_epoch = {}) {
  if (patches.empty()) throw InvalidInput("train_denoiser: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw InvalidInput("train_denoiser: epochs and batch size must be positive");
  const int h = static_cast<int>(patches[0].rows()), w = static_cast<int>(patches[0].cols());
  for (const auto& p : patches)
    if (p.rows() != h || p.cols() != w) throw InvalidInput("train_denoiser: patches must share one shape");
  if (h != model_cfg.patch_rows) throw InvalidInput("train_denoiser: patch height differs from the model config");

  TrainResult res{DiffusionModel(model_cfg, schedule, cfg.seed), {}};
  DiffusionModel& model = res.model;
  const bool cond = model.config().conditional;
  nn::Adam adam(model.net().num_params(), nn::AdamConfig{cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> gauss;
  std::uniform_int_distribution<int> t_dist(1, schedule.steps());

  std::vector<std::size_t> order(patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t steps_per_epoch = (patches.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  long step = 0;
  std::vector<float> grad;
  nn::ForwardCache cache;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * cfg.batch_size, end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t n = end - begin;
      std::vector<Matrix> xt(n), x0k(n), eps(n);
      std::vector<ColumnMask> known(n);
      std::vector<int> ts(n);
      for (std::size_t i = 0; i < n; ++i) {
        Matrix p = patches[order[begin + i]];
        if (cfg.flip_augment && (rng() & 1)) p = p.rowwise().reverse().eval();
        ColumnMask m;
        Matrix x0;
        for (int attempt = 0;; ++attempt) {
          m = sample_training_mask(w, rng);
          x0 = cfg.renormalize_known ? normalize_patch(p, m).patch : p;
          if (attempt >= 8 || x0.cwiseAbs().maxCoeff() <= cfg.max_abs_normalized) break;
        }
        if (x0.cwiseAbs().maxCoeff() > cfg.max_abs_normalized) x0 = normalize_patch(p).patch, m.assign(w, true), m[0] = false;
        ts[i] = t_dist(rng);
        eps[i].resize(h, w);
        for (Eigen::Index c = 0; c < w; ++c)
          for (Eigen::Index r = 0; r < h; ++r) eps[i](r, c) = gauss(rng);
        xt[i] = forward_diffuse(x0, ts[i], eps[i], schedule);
        x0k[i] = x0;
        for (int c = 0; c < w; ++c)
          if (!m[c]) x0k[i].col(c).setZero();
        known[i] = std::move(m);
      }
      const nn::MatF in = model.pack(xt, known, x0k, 0, n);
      const nn::MatF out = model.net().forward(in, h, w, ts, &cache);
      nn::MatF dout(1, out.cols());
      double wsum = 0.0, loss = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < w; ++c) {
          const bool scored = !(cond && cfg.masked_loss) || !known[i][c];
          for (int r = 0; r < h; ++r) {
            const Eigen::Index p = static_cast<Eigen::Index>(i) * h * w + c * h + r;
            const double d = out(0, p) - eps[i](r, c);
            dout(0, p) = scored ? static_cast<float>(d) : 0.0f;
            if (scored) loss += d * d, wsum += 1.0;
          }
        }
      if (wsum == 0.0) continue;
      loss /= wsum;
      if (!std::isfinite(loss))
        throw Error("train_denoiser: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                    std::to_string(s + 1) + " (t range " + std::to_string(*std::min_element(ts.begin(), ts.end())) +
                    ".." + std::to_string(*std::max_element(ts.begin(), ts.end())) + ")");
      dout *= static_cast<float>(2.0 / wsum);
      std::fill(grad.begin(), grad.end(), 0.0f);
      model.net().backward(cache, dout, grad);
      const double progress = step / total_steps;
      adam.set_lr(cfg.learning_rate *
                  (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
      adam.step(model.net().params(), grad);
      ++step;
      loss_sum += loss;
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(steps_per_epoch));
    if (on_epoch) on_epoch(epoch + 1, res.epoch_loss.back());
  }
  return res;
}

// ---------------------------------------------------------------- sampling

struct RepaintOptions {
  int resample_jumps = 1;  // U: reverse/re-noise repetitions per step
  int num_samples = 1;     // independent chains averaged per patch
  std::uint64_t seed = 0;
};

struct InpaintResult {
  std::vector<Matrix> patches;
  std::vector<bool> unconditional;  // patch had no known column
};

// Known columns are re-imposed after every reverse step from the measured
// data diffused to level t-1 with fresh noise; at the last step the measured
// values themselves are copied.
inline InpaintResult repaint_inpaint_batch(const std::vector<Matrix>& patches, const std::vector<ColumnMask>& known,
                                           const EpsilonModel& model, const NoiseSchedule& s, const RepaintOptions& opt) {
  if (patches.size() != known.size()) throw InvalidInput("repaint_inpaint: one mask per patch required");
  if (opt.resample_jumps < 1 || opt.num_samples < 1) throw InvalidInput("repaint_inpaint: counts must be >= 1");
  InpaintResult res;
  res.patches = patches;
  res.unconditional.assign(patches.size(), false);

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (static_cast<Eigen::Index>(known[i].size()) != patches[i].cols())
      throw InvalidInput("repaint_inpaint: mask width does not match patch");
    const auto nk = std::count(known[i].begin(), known[i].end(), true);
    if (nk == static_cast<long>(known[i].size())) continue;  // nothing to fill
    res.unconditional[i] = nk == 0;
    active.push_back(i);
  }
  if (active.empty()) return res;

  const int S = opt.num_samples;
  std::vector<Matrix> x0k, x;
  std::vector<ColumnMask> m;
  for (std::size_t i : active)
    for (int k = 0; k < S; ++k) {
      Matrix d = patches[i];
      for (Eigen::Index c = 0; c < d.cols(); ++c)
        if (!known[i][c]) d.col(c).setZero();
      x0k.push_back(std::move(d));
      m.push_back(known[i]);
    }
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss;
  auto noise_like = [&](const Matrix& ref) {
    Matrix z(ref.rows(), ref.cols());
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      for (Eigen::Index r = 0; r < z.rows(); ++r) z(r, c) = gauss(rng);
    return z;
  };
  for (const auto& d : x0k) x.push_back(noise_like(d));

  for (int t = s.steps(); t >= 1; --t) {
    for (int u = 0; u < opt.resample_jumps; ++u) {
      const std::vector<Matrix> eps = model.predict(x, t, m, x0k);
      for (std::size_t b = 0; b < x.size(); ++b) {
        const Matrix z = t > 1 ? noise_like(x[b]) : Matrix::Zero(x[b].rows(), x[b].cols());
        Matrix next = reverse_step(x[b], t, eps[b], s, z);
        const Matrix kn = t > 1 ? forward_diffuse(x0k[b], t - 1, noise_like(x[b]), s) : x0k[b];
        for (Eigen::Index c = 0; c < next.cols(); ++c)
          if (m[b][c]) next.col(c) = kn.col(c);
        if (u + 1 < opt.resample_jumps && t > 1)
          next = std::sqrt(s.alpha(t)) * next + std::sqrt(s.beta(t)) * noise_like(next);
        x[b] = std::move(next);
      }
    }
  }

  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t i = active[a];
    Matrix acc = Matrix::Zero(patches[i].rows(), patches[i].cols());
    for (int k = 0; k < S; ++k) acc += x[a * S + k];
    acc /= S;
    for (Eigen::Index c = 0; c < acc.cols(); ++c)
      if (known[i][c]) acc.col(c) = patches[i].col(c);
    res.patches[i] = std::move(acc);
  }
  return res;
}

inline Matrix repaint_inpaint(const Matrix& patch, const ColumnMask& known, const EpsilonModel& model,
                              const NoiseSchedule& s, const RepaintOptions& opt = {}) {
  return repaint_inpaint_batch({patch}, {known}, model, s, opt).patches[0];
}

// ---------------------------------------------------------------- pipeline

struct ReconstructionResult {
  RirMatrix rir;
  int unconditional_patches = 0;
};

inline ReconstructionResult reconstruct_rir(const RirMatrix& measured, const MicMask& mask, const DiffusionModel& model,
                                            const PatchGrid& grid, const RepaintOptions& opt) {
  measured.validate();
  if (mask.size() != measured.mics()) throw InvalidInput("reconstruct_rir: mask width does not match the RIR matrix");
  const PatchGrid g = grid.clamped_to(measured.mics());
  if (g.patch_height != model.config().patch_rows)
    throw InvalidInput("reconstruct_rir: grid patch height " + std::to_string(g.patch_height) + " differs from the model's " +
                       std::to_string(model.config().patch_rows));
  Tiling tiles = tile_patches(measured.data, g);

  std::vector<Matrix> norm;
  std::vector<PatchScale> scales;
  std::vector<ColumnMask> known;
  for (std::size_t i = 0; i < tiles.patches.size(); ++i) {
    const PatchPlacement& pl = tiles.placements[i];
    ColumnMask k(g.patch_width);
    for (int c = 0; c < g.patch_width; ++c) {
      const int src = pl.col + c;
      if (src < measured.mics())
        k[c] = mask.measured(src);
      else
        k[c] = g.pad == PadPolicy::zero ? true : mask.measured(detail::reflect_index(src, measured.mics()));
    }
    NormalizedPatch np = normalize_patch(tiles.patches[i], k);
    norm.push_back(std::move(np.patch));
    scales.push_back(np.scale);
    known.push_back(std::move(k));
  }
  InpaintResult inp = repaint_inpaint_batch(norm, known, model, model.schedule(), opt);
  ReconstructionResult out;
  for (std::size_t i = 0; i < tiles.patches.size(); ++i) {
    tiles.patches[i] = denormalize_patch(inp.patches[i], scales[i]);
    out.unconditional_patches += inp.unconditional[i] ? 1 : 0;
  }
  out.rir = RirMatrix(untile_patches(tiles), measured.sample_rate);
  return out;
}

// ---------------------------------------------------------------- model file

// Layout: 8-byte magic "RIRDDPM1", u64 little-endian JSON header length,
// JSON header, then num_params float32 little-endian values.
inline constexpr char kModelMagic[8] = {'R', 'I', 'R', 'D', 'D', 'P', 'M', '1'};

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline nlohmann::json model_header(const DiffusionModel& m, const nlohmann::json& extra = {}) {
  const auto& c = m.config();
  nlohmann::json j;
  j["format_version"] = 1;
  j["net"] = {{"in_channels", c.net.in_channels}, {"channels", c.net.channels}, {"blocks", c.net.blocks},
              {"time_dim", c.net.time_dim}};
  j["patch"] = {{"rows", c.patch_rows}, {"cols", c.patch_cols}};
  j["conditional"] = c.conditional;
  j["schedule"] = {{"kind", to_string(m.schedule().kind())}, {"steps", m.schedule().steps()},
                   {"betas", m.schedule().betas()}};
  j["param_count"] = m.net().num_params();
  if (!extra.is_null()) j["train"] = extra;
  return j;
}

inline void save_model(const std::string& path, const DiffusionModel& m, const nlohmann::json& extra = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_model: cannot open '" + path + "' for writing");
  const std::string header = model_header(m, extra).dump();
  os.write(kModelMagic, 8);
  detail::write_u64_le(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (float f : m.net().params()) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!os) throw Error("save_model: write failed for '" + path + "'");
}

inline DiffusionModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("load_model: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& what, std::size_t off) -> InvalidInput {
    return InvalidInput("load_model: " + what + " at byte offset " + std::to_string(off) + " in '" + path + "'");
  };
  if (bytes.size() < 16) throw fail("file too short for the fixed header", bytes.size());
  if (!std::equal(kModelMagic, kModelMagic + 8, bytes.begin())) throw fail("bad magic", 0);
  const std::uint64_t hlen = detail::read_u64_le(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw fail("header length " + std::to_string(hlen) + " exceeds file", 8);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed JSON header (") + e.what() + ")", 16);
  }
  ModelConfig cfg;
  try {
    if (j.at("format_version").get<int>() != 1) throw fail("unsupported format_version", 16);
    cfg.net.channels = j.at("net").at("channels").get<int>();
    cfg.net.blocks = j.at("net").at("blocks").get<int>();
    cfg.net.time_dim = j.at("net").at("time_dim").get<int>();
    cfg.patch_rows = j.at("patch").at("rows").get<int>();
    cfg.patch_cols = j.at("patch").at("cols").get<int>();
    cfg.conditional = j.at("conditional").get<bool>();
    NoiseSchedule sched = NoiseSchedule::from_betas(j.at("schedule").at("betas").get<std::vector<double>>(),
                                                    schedule_kind_from_string(j.at("schedule").at("kind")));
    DiffusionModel m(cfg, std::move(sched), 0);
    const std::size_t n = j.at("param_count").get<std::size_t>();
    if (n != m.net().num_params()) throw fail("param_count disagrees with the architecture", 16);
    const std::size_t off = 16 + hlen;
    if (bytes.size() - off != 4 * n)
      throw fail("parameter blob holds " + std::to_string(bytes.size() - off) + " bytes, expected " + std::to_string(4 * n),
                 off);
    std::vector<float> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char* b = bytes.data() + off + 4 * i;
      const std::uint32_t u = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&p[i], &u, 4);
    }
    m.net().set_params(std::move(p));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("missing or mistyped header field (") + e.what() + ")", 16);
  }
}

}  // namespace rirkit
