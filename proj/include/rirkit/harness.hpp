#pragma once

// Experiment orchestration: array presets, mask presets, scene construction,
// training-set generation, reconstruction and beamforming evaluations, and
// the report that merges their tables.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rirkit/beamform.hpp"
#include "rirkit/config.hpp"
#include "rirkit/core.hpp"
#include "rirkit/diffusion.hpp"
#include "rirkit/interp.hpp"
#include "rirkit/io.hpp"
#include "rirkit/metrics.hpp"
#include "rirkit/roomsim.hpp"

namespace rirkit {

// splitmix64 finalizer; derives independent stream seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

// ---------------------------------------------------------------- arrays

// Microphone positions plus the straight (or polyline) runs along which the
// spline baseline interpolates. Each line lists mic indices in path order
// with their arc-length coordinates.
struct ArrayLayout {
  std::string preset;
  std::vector<Point3> positions;
  struct Line {
    std::vector<int> mics;
    std::vector<double> coords;
  };
  std::vector<Line> lines;

  int mics() const { return static_cast<int>(positions.size()); }
};

// ula16:      16 mics on a line along the array axis.
// three_rows: 3 parallel rows of 21 (row-major), rows offset perpendicular.
// frame:      L-shaped 41 mics: one 21-mic edge along the axis plus a
//             20-mic edge perpendicular to it, ordered as one path through
//             the shared corner.
// grid:       21 x 21 plane (row-major), one line per row.
// Planar layouts are centred on `center` in the horizontal plane.
inline ArrayLayout make_array(const std::string& preset, const Point3& center, double spacing, double axis_deg) {
  if (spacing <= 0.0) throw InvalidInput("make_array: spacing must be positive");
  const double a = axis_deg * std::numbers::pi / 180.0;
  const Point3 u(std::cos(a), std::sin(a), 0.0), v(-std::sin(a), std::cos(a), 0.0);
  ArrayLayout l;
  l.preset = preset;
  auto add_grid = [&](int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
      ArrayLayout::Line line;
      for (int c = 0; c < cols; ++c) {
        line.mics.push_back(l.mics());
        line.coords.push_back(c * spacing);
        l.positions.push_back(center + ((c - 0.5 * (cols - 1)) * u + (r - 0.5 * (rows - 1)) * v) * spacing);
      }
      l.lines.push_back(std::move(line));
    }
  };
  if (preset == "ula16") {
    add_grid(1, 16);
  } else if (preset == "three_rows") {
    add_grid(3, 21);
  } else if (preset == "grid") {
    add_grid(21, 21);
  } else if (preset == "frame") {
    // Corner at grid (0, 0) of a 21 x 21 plane; path runs from the far end
    // of the perpendicular edge into the corner and out along the axis edge.
    ArrayLayout::Line line;
    auto at = [&](int cu, int cv) { return center + ((cu - 10.0) * u + (cv - 10.0) * v) * spacing; };
    for (int cv = 20; cv >= 1; --cv) l.positions.push_back(at(0, cv));
    for (int cu = 0; cu <= 20; ++cu) l.positions.push_back(at(cu, 0));
    for (int i = 0; i < 41; ++i) {
      line.mics.push_back(i);
      line.coords.push_back(i * spacing);
    }
    l.lines.push_back(std::move(line));
  } else {
    throw InvalidInput("make_array: unknown preset '" + preset + "'");
  }
  return l;
}

// Layout for externally supplied positions: the configured preset's lines
// when the microphone count matches, otherwise one polyline in file order.
inline ArrayLayout layout_for_positions(const std::vector<Point3>& positions, const ArrayLayout& preset) {
  ArrayLayout l;
  if (static_cast<int>(positions.size()) == preset.mics()) {
    l = preset;
    l.positions = positions;
    for (auto& line : l.lines) {
      double acc = 0.0;
      for (std::size_t j = 0; j < line.mics.size(); ++j) {
        if (j) acc += (positions[line.mics[j]] - positions[line.mics[j - 1]]).norm();
        line.coords[j] = acc;
      }
    }
    return l;
  }
  l.preset = "custom";
  l.positions = positions;
  ArrayLayout::Line line;
  double acc = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (i) acc += (positions[i] - positions[i - 1]).norm();
    line.mics.push_back(static_cast<int>(i));
    line.coords.push_back(acc);
  }
  l.lines.push_back(std::move(line));
  return l;
}

// Spline baseline on a layout: natural cubic spline along each line. A line
// with a single measured mic repeats it; a line with none takes the nearest
// measured mic anywhere in the array.
inline RirMatrix sci_reconstruct(const RirMatrix& h, const MicMask& mask, const ArrayLayout& layout) {
  if (mask.size() != h.mics() || layout.mics() != h.mics())
    throw InvalidInput("sci_reconstruct: mask, layout and RIR widths differ");
  if (mask.is_all_measured()) return h;
  RirMatrix out = h;
  std::vector<bool> done(h.mics(), false);
  for (const auto& line : layout.lines) {
    std::vector<int> known;
    for (int m : line.mics)
      if (mask.measured(m)) known.push_back(m);
    if (known.size() >= 2) {
      std::vector<bool> f;
      for (int m : line.mics) f.push_back(mask.measured(m));
      RirMatrix sub(select_columns(h.data, line.mics), h.sample_rate);
      RirMatrix est = sci_interpolate(sub, MicMask(f), line.coords);
      for (std::size_t j = 0; j < line.mics.size(); ++j) {
        out.data.col(line.mics[j]) = est.data.col(static_cast<Eigen::Index>(j));
        done[line.mics[j]] = true;
      }
    } else if (known.size() == 1) {
      for (int m : line.mics) {
        if (!mask.measured(m)) out.data.col(m) = h.data.col(known[0]);
        done[m] = true;
      }
    }
  }
  for (int m = 0; m < h.mics(); ++m) {
    if (done[m] || mask.measured(m)) continue;
    int best = -1;
    double bd = INFINITY;
    for (int k : mask.measured_indices()) {
      const double d = (layout.positions[k] - layout.positions[m]).norm();
      if (d < bd) bd = d, best = k;
    }
    out.data.col(m) = h.data.col(best);
  }
  return out;
}

// ---------------------------------------------------------------- masks

// Fixed presets (N = 16 values listed; other widths scale proportionally):
//   mask0: 4 missing spread {3, 7, 10, 14}
//   mask1: odd indices missing
//   mask2: 4 measured spread {0, 5, 10, 15}
//   mask3: 4 measured on one side {0, 1, 2, 3}
//   all:   nothing missing
// random: round(ratio N) missing, uniform without replacement, per seed.
inline MicMask make_mask(const std::string& preset, int n, double ratio = 0.0, std::uint64_t seed = 0) {
  if (n < 1) throw InvalidInput("make_mask: N must be >= 1");
  const int quarter = std::max(1, static_cast<int>(std::lround(n / 4.0)));
  if (preset == "all") return MicMask::all_measured(n);
  if (preset == "mask0") {
    if (n == 16) return MicMask::from_missing(n, {3, 7, 10, 14});
    std::vector<int> miss;
    for (int j = 0; j < quarter; ++j) miss.push_back(static_cast<int>((j + 1.0) * n / (quarter + 1.0)));
    return MicMask::from_missing(n, miss);
  }
  if (preset == "mask1") {
    std::vector<int> miss;
    for (int i = 1; i < n; i += 2) miss.push_back(i);
    return MicMask::from_missing(n, miss);
  }
  if (preset == "mask2") {
    std::vector<int> meas;
    for (int j = 0; j < quarter; ++j)
      meas.push_back(quarter == 1 ? 0 : static_cast<int>(std::lround(j * (n - 1.0) / (quarter - 1.0))));
    return MicMask::from_measured(n, meas);
  }
  if (preset == "mask3") {
    std::vector<int> meas;
    for (int j = 0; j < quarter; ++j) meas.push_back(j);
    return MicMask::from_measured(n, meas);
  }
  if (preset == "random") {
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("make_mask: random ratio must lie in (0, 1)");
    const int missing = static_cast<int>(std::lround(ratio * n));
    if (missing >= n) throw InvalidInput("make_mask: ratio " + format_number(ratio, 3) + " leaves no measured microphone");
    // Partial Fisher-Yates with an explicit modulo draw so masks do not
    // depend on the standard library's distribution implementation.
    std::mt19937_64 rng(seed);
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < missing; ++i) {
      const std::uint64_t span = static_cast<std::uint64_t>(n - i);
      const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
      std::uint64_t r;
      do r = rng();
      while (r >= limit);
      std::swap(idx[i], idx[i + static_cast<int>(r % span)]);
    }
    return MicMask::from_missing(n, std::vector<int>(idx.begin(), idx.begin() + missing));
  }
  throw InvalidInput("make_mask: unknown preset '" + preset + "'");
}

// A mask name from the config: a fixed preset, "all", or "random:<ratio>[:<seed>]".
struct MaskSpec {
  std::string label;
  std::string preset;
  double ratio = 0.0;
  std::uint64_t seed = 0;
};

inline MaskSpec parse_mask_spec(const std::string& name) {
  MaskSpec s;
  s.label = name;
  if (name.rfind("random:", 0) != 0) {
    s.preset = name;
    return s;
  }
  s.preset = "random";
  const auto parts = [&] {
    std::vector<std::string> p;
    std::stringstream ss(name.substr(7));
    std::string item;
    while (std::getline(ss, item, ':')) p.push_back(item);
    return p;
  }();
  if (parts.empty() || parts.size() > 2) throw InvalidInput("mask '" + name + "': expected random:<ratio>[:<seed>]");
  s.ratio = detail::parse_double(parts[0]);
  if (parts.size() == 2) s.seed = static_cast<std::uint64_t>(detail::parse_int(parts[1]));
  return s;
}

inline MicMask mask_from_config(const ExperimentConfig& cfg, const MaskSpec& spec, int n) {
  if (auto it = cfg.mask_missing.find(spec.preset); it != cfg.mask_missing.end())
    return MicMask::from_missing(n, it->second);
  if (auto it = cfg.mask_measured.find(spec.preset); it != cfg.mask_measured.end())
    return MicMask::from_measured(n, it->second);
  return make_mask(spec.preset, n, spec.ratio, spec.seed);
}

// ---------------------------------------------------------------- scenes

struct Scene {
  RoomSpec room;  // reflection coefficients resolved
  ArrayLayout layout;
  Point3 source;
  Point3 interferer;
  RirMatrix target;      // source -> mics
  RirMatrix interference;  // directional interferer -> mics
  SimulationReport report;
};

inline void require_inside(const RoomSpec& room, const Point3& p, const std::string& what) {
  if (!inside_room(room, p))
    throw ConfigError(what + " (" + format_number(p.x(), 3) + ", " + format_number(p.y(), 3) + ", " +
                      format_number(p.z(), 3) + ") lies outside the room");
}

// Interferer at noise_distance from the array centre, noise_angle_deg from
// broadside (the horizontal direction from the centre to the source),
// rotated towards the array's first axis.
inline Point3 interferer_position(const ExperimentConfig& cfg) {
  Point3 b = cfg.source_position - cfg.array_center;
  b.z() = 0.0;
  if (b.norm() < 1e-9) throw ConfigError("source sits directly above or below the array centre; broadside undefined");
  b.normalize();
  const Point3 side(b.y(), -b.x(), 0.0);
  const double th = cfg.noise_angle_deg * std::numbers::pi / 180.0;
  return cfg.array_center + cfg.noise_distance * (std::cos(th) * b + std::sin(th) * side);
}

inline RoomSpec room_from_config(const ExperimentConfig& cfg) {
  RoomSpec room;
  room.dimensions = cfg.room_dimensions;
  room.target_t60 = cfg.room_t60;
  room.max_reflection_order = cfg.max_reflection_order;
  return room;
}

inline Scene build_scene(const ExperimentConfig& cfg) {
  Scene s;
  RoomSpec room = room_from_config(cfg);
  s.layout = make_array(cfg.array_preset, cfg.array_center, cfg.array_spacing, cfg.array_axis_deg);
  s.source = cfg.source_position;
  s.interferer = interferer_position(cfg);
  for (const auto& p : s.layout.positions) require_inside(room, p, "microphone");
  require_inside(room, s.source, "source");
  require_inside(room, s.interferer, "interferer");
  ArrayGeometry geo{s.layout.positions, s.source};
  s.room = resolve_absorption(room, geo, cfg.rir_length, cfg.sample_rate, &s.report);
  s.target = simulate_rir(s.room, geo, cfg.rir_length, cfg.sample_rate, &s.report);
  ArrayGeometry ngeo{s.layout.positions, s.interferer};
  s.interference = simulate_rir(s.room, ngeo, cfg.rir_length, cfg.sample_rate);
  return s;
}

// ---------------------------------------------------------------- training data

// Random shoebox room holding the configured array preset at a random
// position and azimuth, with a source 1-4 m from the array centre.
inline RirMatrix random_training_room(const ExperimentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    RoomSpec room;
    room.dimensions = Point3(4.0 + 4.0 * u(rng), 3.5 + 3.5 * u(rng), 2.5 + 1.0 * u(rng));
    room.target_t60 = cfg.train_t60_min + (cfg.train_t60_max - cfg.train_t60_min) * u(rng);
    const double axis = 360.0 * u(rng);
    const Point3 c(1.0 + (room.dimensions.x() - 2.0) * u(rng), 1.0 + (room.dimensions.y() - 2.0) * u(rng),
                   1.0 + 0.8 * u(rng));
    const ArrayLayout layout = make_array(cfg.array_preset, c, cfg.array_spacing, axis);
    const Point3 s(0.5 + (room.dimensions.x() - 1.0) * u(rng), 0.5 + (room.dimensions.y() - 1.0) * u(rng),
                   1.0 + 0.8 * u(rng));
    const double d = (s - c).norm();
    bool ok = d > 1.0 && d < 4.0;
    for (const auto& p : layout.positions)
      ok = ok && ((p.array() > 0.3).all() && (p.array() < room.dimensions.array() - 0.3).all());
    if (!ok) continue;
    return simulate_rir(room, ArrayGeometry{layout.positions, s}, cfg.rir_length, cfg.sample_rate);
  }
  throw Error("random_training_room: could not place the array in 1000 attempts");
}

inline std::vector<Matrix> make_training_patches(const ExperimentConfig& cfg,
                                                 const std::function<void(int, int)>& progress = {}) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x747261696eULL));
  std::vector<Matrix> patches;
  const int n = make_array(cfg.array_preset, Point3::Zero(), cfg.array_spacing, 0.0).mics();
  const PatchGrid g = cfg.grid.clamped_to(n);
  for (int r = 0; r < cfg.train_rooms; ++r) {
    RirMatrix h = random_training_room(cfg, rng);
    Tiling t = tile_patches(h.data, g);
    for (auto& p : t.patches) patches.push_back(std::move(p));
    if (progress) progress(r + 1, cfg.train_rooms);
  }
  return patches;
}

inline ModelConfig model_config(const ExperimentConfig& cfg, int n) {
  ModelConfig mc;
  mc.net.channels = cfg.net_channels;
  mc.net.blocks = cfg.net_blocks;
  mc.net.time_dim = cfg.net_time_dim;
  mc.conditional = cfg.conditional;
  const PatchGrid g = cfg.grid.clamped_to(n);
  mc.patch_rows = g.patch_height;
  mc.patch_cols = g.patch_width;
  return mc;
}

inline TrainResult train_from_config(const ExperimentConfig& cfg, const std::function<void(int, double)>& on_epoch = {},
                                     const std::function<void(int, int)>& on_room = {}) {
  const std::vector<Matrix> patches = make_training_patches(cfg, on_room);
  const int n = make_array(cfg.array_preset, Point3::Zero(), cfg.array_spacing, 0.0).mics();
  TrainConfig tc;
  tc.epochs = cfg.train_epochs;
  tc.batch_size = cfg.train_batch;
  tc.learning_rate = cfg.train_lr;
  tc.seed = mix_seed(cfg.seed, 0x6e6574ULL);
  return train_denoiser(patches, make_schedule(cfg.diffusion_steps, cfg.schedule), model_config(cfg, n), tc, on_epoch);
}

inline nlohmann::json train_metadata(const ExperimentConfig& cfg) {
  return {{"rooms", cfg.train_rooms},     {"epochs", cfg.train_epochs}, {"batch", cfg.train_batch},
          {"lr", cfg.train_lr},           {"seed", cfg.seed},           {"array", cfg.array_preset},
          {"t60_min", cfg.train_t60_min}, {"t60_max", cfg.train_t60_max}, {"rir_length", cfg.rir_length},
          {"sample_rate", cfg.sample_rate}};
}

// ---------------------------------------------------------------- experiment

inline std::string resolve_path(const std::string& dir, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute() || dir.empty()) return p;
  return (std::filesystem::path(dir) / path).string();
}

// Holds the simulated scene, the optional diffusion model and a cache of
// reconstructions shared by the evaluations.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::string out_dir) : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)) {}

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& out_dir() const { return out_dir_; }

  const Scene& scene() {
    if (!scene_) scene_ = build_scene(cfg_);
    return *scene_;
  }

  void set_model(DiffusionModel m) { model_ = std::make_shared<DiffusionModel>(std::move(m)); }

  const DiffusionModel& model() {
    if (!model_) {
      const std::string path = resolve_path(out_dir_, cfg_.model_path);
      if (!std::filesystem::exists(path))
        throw ConfigError("diffusion backend selected but model file '" + path + "' does not exist (run `train` first)");
      model_ = std::make_shared<DiffusionModel>(load_model(path));
    }
    return *model_;
  }

  MicMask mask(const MaskSpec& spec) { return mask_from_config(cfg_, spec, scene().layout.mics()); }

  // Reconstruction of the scene's target RIRs under a mask, cached by label.
  const RirMatrix& reconstruct(const MaskSpec& spec, const std::string& backend) {
    const std::string key = spec.label + "|" + backend;
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const MicMask m = mask(spec);
    RirMatrix est = reconstruct_with(scene().target, m, backend, spec.label);
    return cache_.emplace(key, std::move(est)).first->second;
  }

  RirMatrix reconstruct_with(const RirMatrix& h, const MicMask& m, const std::string& backend, const std::string& label) {
    return reconstruct_with(h, m, backend, label, scene().layout);
  }

  RirMatrix reconstruct_with(const RirMatrix& h, const MicMask& m, const std::string& backend, const std::string& label,
                             const ArrayLayout& layout) {
    if (m.is_all_measured()) return h;
    if (backend == "sci") return sci_reconstruct(h, m, layout);
    if (backend == "diffusion") {
      RepaintOptions ro;
      ro.resample_jumps = cfg_.resample_jumps;
      ro.num_samples = cfg_.num_samples;
      ro.seed = mix_seed(cfg_.seed, hash_string(label));
      return reconstruct_rir(h, m, model(), cfg_.grid, ro).rir;
    }
    throw InvalidInput("unknown backend '" + backend + "'");
  }

  // Optional progress sink for long loops.
  std::function<void(const std::string&)> log;

 private:
  ExperimentConfig cfg_;
  std::string out_dir_;
  std::optional<Scene> scene_;
  std::shared_ptr<DiffusionModel> model_;
  std::map<std::string, RirMatrix> cache_;
};

// ---------------------------------------------------------------- reconstruction eval

struct ReconRow {
  std::string mask;
  double ratio = 0.0;  // missing fraction
  std::string backend;
  int missing = 0;
  int seeds = 1;
  double nmse_db = NAN;
  double cd = NAN;
  double dist_sum = NAN;
  double dist_mean = NAN;
  std::string flag;
};

struct ReconEval {
  std::vector<ReconRow> rows;

  CsvTable table() const {
    CsvTable t;
    t.header = {"mask", "mask_ratio", "backend", "missing", "seeds", "nmse_db", "cd", "dist_sum", "dist_mean", "flag"};
    for (const auto& r : rows)
      t.add({r.mask, format_number(r.ratio, 4), r.backend, std::to_string(r.missing), std::to_string(r.seeds),
             format_number(r.nmse_db), format_number(r.cd), format_number(r.dist_sum), format_number(r.dist_mean),
             r.flag});
    t.sort_rows();
    return t;
  }

  // Long format for NMSE/CD/Dist against mask ratio (random masks only).
  CsvTable plot() const {
    CsvTable t;
    t.header = {"mask_ratio", "metric", "method", "value"};
    for (const auto& r : rows) {
      if (r.mask != "random") continue;
      t.add({format_number(r.ratio, 4), "nmse_db", r.backend, format_number(r.nmse_db)});
      t.add({format_number(r.ratio, 4), "cd", r.backend, format_number(r.cd)});
      t.add({format_number(r.ratio, 4), "dist_mean", r.backend, format_number(r.dist_mean)});
    }
    t.sort_rows();
    return t;
  }

  const ReconRow& find(const std::string& mask, const std::string& backend, double ratio = -1.0) const {
    for (const auto& r : rows)
      if (r.mask == mask && r.backend == backend && (ratio < 0.0 || std::abs(r.ratio - ratio) < 1e-9)) return r;
    throw InvalidInput("no reconstruction row for " + mask + "/" + backend);
  }
};

struct ReconScore {
  double nmse_db = NAN, cd = NAN, dist_sum = NAN, dist_mean = NAN;
};

inline ReconScore score_reconstruction(const RirMatrix& truth, const RirMatrix& est, const MicMask& m, int dist_fft) {
  ReconScore s;
  const NullProjectionDist d = null_projection_dist(truth, est, dist_fft);
  s.dist_sum = d.sum;
  s.dist_mean = d.mean;
  if (!m.is_all_measured()) {
    s.nmse_db = nmse(truth.data, est.data, m);
    s.cd = cosine_distance(truth.data, est.data, m).value;
  }
  return s;
}

inline std::string random_label(double ratio, std::uint64_t seed) {
  return "random:" + format_number(ratio, 4) + ":" + std::to_string(seed);
}

inline ReconEval run_reconstruction_eval(Experiment& ex) {
  const ExperimentConfig& cfg = ex.config();
  const Scene& sc = ex.scene();
  const int n = sc.layout.mics();
  const int dist_fft = next_pow2(cfg.rir_length);
  ReconEval out;
  for (const auto& backend : cfg.backends) {
    for (const auto& name : cfg.masks) {
      const MaskSpec spec = parse_mask_spec(name);
      const MicMask m = ex.mask(spec);
      ReconRow row;
      row.mask = name;
      row.backend = backend;
      row.missing = m.missing_count();
      row.ratio = static_cast<double>(row.missing) / n;
      if (m.is_all_measured()) {
        row.flag = "no_missing_columns";
        row.dist_sum = row.dist_mean = 0.0;
      } else {
        const auto t0 = std::chrono::steady_clock::now();
        const ReconScore s = score_reconstruction(sc.target, ex.reconstruct(spec, backend), m, dist_fft);
        row.nmse_db = s.nmse_db, row.cd = s.cd, row.dist_sum = s.dist_sum, row.dist_mean = s.dist_mean;
        if (ex.log)
          ex.log(backend + " " + name + ": NMSE " + format_number(s.nmse_db, 2) + " dB, Dist " +
                 format_number(s.dist_mean, 3) + " (" +
                 format_number(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1) + " s)");
      }
      out.rows.push_back(row);
    }
    for (double ratio : cfg.random_ratios) {
      ReconRow row;
      row.mask = "random";
      row.ratio = ratio;
      row.backend = backend;
      row.seeds = cfg.random_seeds;
      double nm = 0.0, cd = 0.0, ds = 0.0, dm = 0.0;
      for (int k = 0; k < cfg.random_seeds; ++k) {
        MaskSpec spec{random_label(ratio, k), "random", ratio, mix_seed(cfg.seed, 1000 + k)};
        const MicMask m = ex.mask(spec);
        row.missing = m.missing_count();
        const ReconScore s = score_reconstruction(sc.target, ex.reconstruct(spec, backend), m, dist_fft);
        nm += s.nmse_db, cd += s.cd, ds += s.dist_sum, dm += s.dist_mean;
      }
      row.nmse_db = nm / cfg.random_seeds;
      row.cd = cd / cfg.random_seeds;
      row.dist_sum = ds / cfg.random_seeds;
      row.dist_mean = dm / cfg.random_seeds;
      if (ex.log)
        ex.log(backend + " random " + format_number(ratio, 2) + ": NMSE " + format_number(row.nmse_db, 2) + " dB, CD " +
               format_number(row.cd, 3));
      out.rows.push_back(row);
    }
  }
  return out;
}

// ---------------------------------------------------------------- beamforming eval

struct BeamformRow {
  std::string noise;
  std::string mask;
  std::string variant;  // Mics, Full, Missing, Inpainted
  std::string backend;  // reconstruction backend for Inpainted, "-" otherwise
  double sir_db = 0.0;
  double si_sdr_db = 0.0;
  int snrs = 0;
};

struct BeamformEval {
  std::vector<BeamformRow> rows;

  CsvTable table() const {
    CsvTable t;
    t.header = {"noise", "mask", "variant", "backend", "snr_count", "sir_db", "si_sdr_db"};
    for (const auto& r : rows)
      t.add({r.noise, r.mask, r.variant, r.backend, std::to_string(r.snrs), format_number(r.sir_db),
             format_number(r.si_sdr_db)});
    t.sort_rows();
    return t;
  }

  const BeamformRow& find(const std::string& noise, const std::string& mask, const std::string& variant,
                          const std::string& backend = "-") const {
    for (const auto& r : rows)
      if (r.noise == noise && r.mask == mask && r.variant == variant && r.backend == backend) return r;
    throw InvalidInput("no beamforming row for " + noise + "/" + mask + "/" + variant + "/" + backend);
  }
};

struct BeamformScore {
  double sir_db = 0.0;
  double si_sdr_db = 0.0;
  std::vector<double> output;
};

// Scores one beamformer on one rendered scene. The covariance comes from the
// interference component alone (oracle noise-only segments).
struct BeamformScene {
  SceneSignals signals;
  MultiStft speech;
  MultiStft interference;
  std::vector<double> dry;
  int length = 0;

  BeamformScore mics(int max_lag) const {
    BeamformScore s;
    const Matrix in = signals.interference();
    std::span<const double> cs(signals.clean.col(0).data(), length), ns(in.col(0).data(), length);
    s.sir_db = sir_improvement(cs, ns, cs, ns);
    s.output.resize(length);
    for (int t = 0; t < length; ++t) s.output[t] = signals.clean(t, 0) + in(t, 0);
    s.si_sdr_db = si_sdr(dry, s.output, max_lag).db;
    return s;
  }

  BeamformScore mvdr(const RirMatrix& steering_rirs, const std::vector<int>& chans, const Stft& stft, int max_lag) const {
    const SpectralField d = steering_for_stft(steering_rirs, stft.config()).select(chans);
    const BeamformerWeights w = mvdr_weights(d, estimate_noise_cov(interference.select(chans)));
    const std::vector<double> ys = apply_beamformer(w, speech.select(chans), stft, length);
    const std::vector<double> yn = apply_beamformer(w, interference.select(chans), stft, length);
    const Matrix in = signals.interference();
    BeamformScore s;
    s.sir_db = sir_improvement(ys, yn, std::span<const double>(signals.clean.col(0).data(), length),
                               std::span<const double>(in.col(0).data(), length));
    s.output.resize(length);
    for (int t = 0; t < length; ++t) s.output[t] = ys[t] + yn[t];
    s.si_sdr_db = si_sdr(dry, s.output, max_lag).db;
    return s;
  }
};

inline BeamformScene render_beamform_scene(Experiment& ex, const std::string& noise_type, double snr_db,
                                           std::uint64_t seed, const Stft& stft) {
  const ExperimentConfig& cfg = ex.config();
  const Scene& sc = ex.scene();
  const int len = static_cast<int>(cfg.signal_seconds * cfg.sample_rate);
  BeamformScene b;
  b.dry = pink_bursts(len, cfg.sample_rate, mix_seed(cfg.seed, 0x737263ULL));
  NoiseSpec noise;
  if (noise_type == "directional") {
    noise.kind = NoiseKind::directional;
    noise.noise_rirs = sc.interference;
  } else {
    noise.kind = NoiseKind::diffuse;
    noise.mic_positions = sc.layout.positions;
  }
  b.signals = render_scene(sc.target, b.dry, noise, snr_db, cfg.white_snr_db, seed);
  b.length = b.signals.length();
  b.dry.resize(b.length, 0.0);
  b.speech = multichannel_stft(b.signals.clean, stft);
  b.interference = multichannel_stft(b.signals.interference(), stft);
  return b;
}

inline std::string snr_tag(double snr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+06.1f", snr);
  return buf;
}

inline BeamformEval run_beamforming_eval(Experiment& ex, const std::string& wav_dir = {}) {
  const ExperimentConfig& cfg = ex.config();
  const Scene& sc = ex.scene();
  const Stft stft(cfg.stft);
  const int n = sc.layout.mics();
  const int max_lag = cfg.rir_length / 4;
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  if (!wav_dir.empty()) std::filesystem::create_directories(wav_dir);

  struct Acc {
    double sir = 0.0, sisdr = 0.0;
    int count = 0;
  };
  std::map<std::tuple<std::string, std::string, std::string, std::string>, Acc> acc;
  auto add = [&](const std::string& noise, const std::string& mask, const std::string& variant,
                 const std::string& backend, const BeamformScore& s, double snr) {
    Acc& a = acc[{noise, mask, variant, backend}];
    a.sir += s.sir_db, a.sisdr += s.si_sdr_db, ++a.count;
    if (!wav_dir.empty()) {
      std::string file = noise + "_snr" + snr_tag(snr) + "_" + mask + "_" + variant;
      if (backend != "-") file += "-" + backend;
      for (char& c : file)
        if (c == ':') c = '_';
      write_wav(resolve_path(wav_dir, file + ".wav"), s.output, cfg.sample_rate);
    }
  };

  std::vector<std::string> inpaint_backends;
  for (const auto& b : cfg.backends) inpaint_backends.push_back(b);

  for (std::size_t ni = 0; ni < cfg.noise_types.size(); ++ni) {
    const std::string& noise = cfg.noise_types[ni];
    for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
      const double snr = cfg.snr_db[si];
      const BeamformScene bs = render_beamform_scene(ex, noise, snr, mix_seed(cfg.seed, 0x100 * (ni + 1) + si), stft);
      if (!wav_dir.empty() && ni == 0 && si == 0) write_wav(resolve_path(wav_dir, "clean_source.wav"), bs.dry, cfg.sample_rate);
      const BeamformScore mics = bs.mics(max_lag);
      const BeamformScore full = bs.mvdr(sc.target, all, stft, max_lag);
      for (const auto& name : cfg.masks) {
        const MaskSpec spec = parse_mask_spec(name);
        const MicMask m = ex.mask(spec);
        add(noise, name, "Mics", "-", mics, snr);
        add(noise, name, "Full", "-", full, snr);
        add(noise, name, "Missing", "-", bs.mvdr(sc.target, m.measured_indices(), stft, max_lag), snr);
        for (const auto& b : inpaint_backends)
          add(noise, name, "Inpainted", b, bs.mvdr(ex.reconstruct(spec, b), all, stft, max_lag), snr);
      }
      if (ex.log) ex.log("beamforming " + noise + " SNR " + format_number(snr, 1) + " dB done");
    }
  }
  BeamformEval out;
  for (const auto& [key, a] : acc) {
    const auto& [noise, mask, variant, backend] = key;
    out.rows.push_back({noise, mask, variant, backend, a.sir / a.count, a.sisdr / a.count, a.count});
  }
  return out;
}

// ---------------------------------------------------------------- simulate outputs

inline CsvTable edc_table(const std::vector<std::pair<std::string, const RirMatrix*>>& sets, const std::vector<int>& mics,
                          int decimate = 4) {
  CsvTable t;
  t.header = {"method", "mic", "time_s", "edc_db"};
  for (const auto& [method, h] : sets)
    for (int m : mics) {
      const std::vector<double> e = edc(std::span<const double>(h->data.col(m).data(), h->samples()));
      for (std::size_t i = 0; i < e.size(); i += decimate)
        t.add({method, std::to_string(m), format_number(static_cast<double>(i) / h->sample_rate), format_number(e[i], 4)});
    }
  return t;
}

inline CsvTable t60_table(const std::vector<std::pair<std::string, const RirMatrix*>>& sets, const std::vector<int>& mics) {
  CsvTable t;
  t.header = {"method", "mic", "t60_s", "reliable"};
  for (const auto& [method, h] : sets)
    for (int m : mics) {
      const T60Estimate e = estimate_t60_from_rir(std::span<const double>(h->data.col(m).data(), h->samples()), h->sample_rate);
      t.add({method, std::to_string(m), format_number(e.seconds), e.reliable ? "1" : "0"});
    }
  return t;
}

// ---------------------------------------------------------------- report

// Merges whichever evaluation tables exist in `dir` into a markdown summary
// and a single long-format plot table. Returns the files written.
inline std::vector<std::string> write_report(const std::string& dir) {
  const std::string recon_path = resolve_path(dir, "recon_eval.csv");
  const std::string bf_path = resolve_path(dir, "beamform_eval.csv");
  const bool have_recon = std::filesystem::exists(recon_path), have_bf = std::filesystem::exists(bf_path);
  if (!have_recon && !have_bf)
    throw InvalidInput("report: neither recon_eval.csv nor beamform_eval.csv found in '" + dir + "'");

  CsvTable plot;
  plot.header = {"table", "noise", "mask", "mask_ratio", "method", "metric", "value"};
  std::string md = "# Results\n";
  if (have_bf) {
    const CsvTable t = CsvTable::read(bf_path);
    const int cn = t.column("noise"), cm = t.column("mask"), cv = t.column("variant"), cb = t.column("backend"),
              cs = t.column("sir_db"), cq = t.column("si_sdr_db");
    md += "\n## Beamforming (mean over SNRs)\n\n| noise | mask | variant | SIR [dB] | SI-SDR [dB] |\n|---|---|---|---|---|\n";
    for (const auto& r : t.rows) {
      const std::string method = r[cb] == "-" ? r[cv] : r[cv] + "-" + r[cb];
      md += "| " + r[cn] + " | " + r[cm] + " | " + method + " | " + r[cs] + " | " + r[cq] + " |\n";
      plot.add({"beamform", r[cn], r[cm], "", method, "sir_db", r[cs]});
      plot.add({"beamform", r[cn], r[cm], "", method, "si_sdr_db", r[cq]});
    }
  }
  if (have_recon) {
    const CsvTable t = CsvTable::read(recon_path);
    const int cm = t.column("mask"), cr = t.column("mask_ratio"), cb = t.column("backend"), cn = t.column("nmse_db"),
              cc = t.column("cd"), cd = t.column("dist_mean"), cf = t.column("flag");
    md += "\n## Reconstruction\n\n| mask | ratio | backend | NMSE [dB] | CD | Dist | flag |\n|---|---|---|---|---|---|---|\n";
    for (const auto& r : t.rows) {
      md += "| " + r[cm] + " | " + r[cr] + " | " + r[cb] + " | " + r[cn] + " | " + r[cc] + " | " + r[cd] + " | " + r[cf] +
            " |\n";
      plot.add({"recon", "", r[cm], r[cr], r[cb], "nmse_db", r[cn]});
      plot.add({"recon", "", r[cm], r[cr], r[cb], "cd", r[cc]});
      plot.add({"recon", "", r[cm], r[cr], r[cb], "dist_mean", r[cd]});
    }
  }
  plot.sort_rows();
  const std::string md_path = resolve_path(dir, "report.md"), plot_path = resolve_path(dir, "report_plot.csv");
  detail::write_file(md_path, std::vector<unsigned char>(md.begin(), md.end()));
  plot.write(plot_path);
  return {md_path, plot_path};
}

}  // namespace rirkit
