#pragma once

// Flat key = value experiment configuration. One assignment per line, '#'
// starts a comment, lists are comma separated. Every error names the line.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rirkit/beamform.hpp"
#include "rirkit/core.hpp"
#include "rirkit/diffusion.hpp"
#include "rirkit/roomsim.hpp"

namespace rirkit {

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

struct ConfigEntry {
  std::string value;
  int line = 0;
};

// Raw key/value pairs with their source lines.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    cfg.source_ = source;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      const std::string text = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) cfg.fail(line, "expected 'key = value'");
      const std::string key = detail::trim(text.substr(0, eq));
      const std::string value = detail::trim(text.substr(eq + 1));
      if (key.empty()) cfg.fail(line, "missing key before '='");
      if (auto it = cfg.entries_.find(key); it != cfg.entries_.end())
        cfg.fail(line, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second.line) + ")");
      cfg.entries_[key] = {value, line};
    }
    return cfg;
  }

  static KeyValueConfig parse_string(const std::string& text, const std::string& source = "<config>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  const std::map<std::string, ConfigEntry>& entries() const { return entries_; }
  const std::string& source() const { return source_; }

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + what);
  }

 private:
  std::string source_;
  std::map<std::string, ConfigEntry> entries_;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int sample_rate = 8000;
  int rir_length = 2048;

  Point3 room_dimensions{6.0, 5.5, 2.8};
  double room_t60 = 0.3;
  int max_reflection_order = -1;

  std::string array_preset = "ula16";
  Point3 array_center{3.1, 1.5, 1.4};
  double array_spacing = 0.04;
  double array_axis_deg = 0.0;  // rotation of the array's first axis about z, from +x
  Point3 source_position{3.1, 3.5, 1.4};

  double noise_angle_deg = 60.0;  // from broadside (array centre towards the source)
  double noise_distance = 2.0;
  std::vector<std::string> noise_types{"directional", "diffuse"};
  std::vector<double> snr_db{-10.0, -5.0, 0.0, 5.0, 10.0};
  double white_snr_db = 40.0;
  double signal_seconds = 4.0;

  std::vector<std::string> masks{"mask0", "mask1", "mask2", "mask3"};
  std::map<std::string, std::vector<int>> mask_missing;   // overrides, by preset name
  std::map<std::string, std::vector<int>> mask_measured;
  std::vector<double> random_ratios{0.3, 0.5, 0.7, 0.9};
  int random_seeds = 5;

  std::vector<std::string> backends{"sci", "diffusion"};
  std::string model_path = "model.bin";  // relative paths resolve against the output directory
  int resample_jumps = 1;
  int num_samples = 1;

  PatchGrid grid{};
  StftConfig stft{};

  int train_rooms = 200;
  int train_epochs = 12;
  int train_batch = 16;
  double train_lr = 2e-3;
  int diffusion_steps = 100;
  ScheduleKind schedule = ScheduleKind::linear;
  int net_channels = 32;
  int net_blocks = 4;
  int net_time_dim = 32;
  bool conditional = true;
  double train_t60_min = 0.2;
  double train_t60_max = 0.5;

  // `reconstruct` subcommand.
  std::string reconstruct_input = "ground_truth.rir";
  std::string reconstruct_mask = "mask0";
  std::string reconstruct_backend = "diffusion";

  bool export_wav = true;

  bool wants_backend(const std::string& b) const {
    return std::find(backends.begin(), backends.end(), b) != backends.end();
  }

  void validate() const;
  static ExperimentConfig from_kv(const KeyValueConfig& kv);
  static ExperimentConfig load(const std::string& path) { return from_kv(KeyValueConfig::load(path)); }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::string type;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidInput("'" + s + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(v)) throw InvalidInput("'" + s + "' is not a finite number");
  return v;
}

inline long long parse_int(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw InvalidInput("'" + s + "' is not an integer");
  }
  if (used != s.size()) throw InvalidInput("'" + s + "' is not an integer");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw InvalidInput("'" + s + "' is not a boolean");
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_double(item));
  return out;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(static_cast<int>(parse_int(item)));
  return out;
}

inline Point3 parse_point(const std::string& s) {
  const auto v = parse_doubles(s);
  if (v.size() != 3) throw InvalidInput("expected three comma-separated numbers");
  return {v[0], v[1], v[2]};
}

inline int parse_positive(const std::string& s) {
  const long long v = parse_int(s);
  if (v < 1 || v > 1'000'000'000) throw InvalidInput("expected a positive integer, got '" + s + "'");
  return static_cast<int>(v);
}

inline const std::vector<ConfigField>& config_schema() {
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = {
      {"seed", "int", [](C& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int(v)); }},
      {"sample_rate", "int", [](C& c, const std::string& v) { c.sample_rate = parse_positive(v); }},
      {"rir_length", "int", [](C& c, const std::string& v) { c.rir_length = parse_positive(v); }},
      {"room.dimensions", "x,y,z", [](C& c, const std::string& v) { c.room_dimensions = parse_point(v); }},
      {"room.t60", "seconds", [](C& c, const std::string& v) { c.room_t60 = parse_double(v); }},
      {"room.max_order", "int", [](C& c, const std::string& v) { c.max_reflection_order = static_cast<int>(parse_int(v)); }},
      {"array.preset", "ula16|three_rows|frame|grid", [](C& c, const std::string& v) { c.array_preset = v; }},
      {"array.center", "x,y,z", [](C& c, const std::string& v) { c.array_center = parse_point(v); }},
      {"array.spacing", "metres", [](C& c, const std::string& v) { c.array_spacing = parse_double(v); }},
      {"array.axis_deg", "degrees", [](C& c, const std::string& v) { c.array_axis_deg = parse_double(v); }},
      {"source.position", "x,y,z", [](C& c, const std::string& v) { c.source_position = parse_point(v); }},
      {"noise.angle_deg", "degrees", [](C& c, const std::string& v) { c.noise_angle_deg = parse_double(v); }},
      {"noise.distance", "metres", [](C& c, const std::string& v) { c.noise_distance = parse_double(v); }},
      {"noise.types", "list of directional|diffuse", [](C& c, const std::string& v) { c.noise_types = split_list(v); }},
      {"snr_db", "list of dB", [](C& c, const std::string& v) { c.snr_db = parse_doubles(v); }},
      {"white_snr_db", "dB", [](C& c, const std::string& v) { c.white_snr_db = parse_double(v); }},
      {"signal.seconds", "seconds", [](C& c, const std::string& v) { c.signal_seconds = parse_double(v); }},
      {"masks", "list of mask0..mask3|all", [](C& c, const std::string& v) { c.masks = split_list(v); }},
      {"random.ratios", "list in (0,1)", [](C& c, const std::string& v) { c.random_ratios = parse_doubles(v); }},
      {"random.seeds", "int", [](C& c, const std::string& v) { c.random_seeds = parse_positive(v); }},
      {"backends", "list of sci|diffusion", [](C& c, const std::string& v) { c.backends = split_list(v); }},
      {"model.path", "path", [](C& c, const std::string& v) { c.model_path = v; }},
      {"repaint.resample_jumps", "int", [](C& c, const std::string& v) { c.resample_jumps = parse_positive(v); }},
      {"repaint.num_samples", "int", [](C& c, const std::string& v) { c.num_samples = parse_positive(v); }},
      {"patch.height", "int", [](C& c, const std::string& v) { c.grid.patch_height = parse_positive(v); }},
      {"patch.width", "int", [](C& c, const std::string& v) { c.grid.patch_width = parse_positive(v); }},
      {"patch.stride_rows", "int", [](C& c, const std::string& v) { c.grid.stride_rows = parse_positive(v); }},
      {"patch.stride_cols", "int", [](C& c, const std::string& v) { c.grid.stride_cols = parse_positive(v); }},
      {"patch.pad", "reflect|zero",
       [](C& c, const std::string& v) {
         if (v == "reflect")
           c.grid.pad = PadPolicy::reflect;
         else if (v == "zero")
           c.grid.pad = PadPolicy::zero;
         else
           throw InvalidInput("pad policy must be reflect or zero");
       }},
      {"stft.frame", "int", [](C& c, const std::string& v) { c.stft.frame_length = parse_positive(v); }},
      {"stft.hop", "int", [](C& c, const std::string& v) { c.stft.hop = parse_positive(v); }},
      {"stft.fft", "int", [](C& c, const std::string& v) { c.stft.fft_size = parse_positive(v); }},
      {"train.rooms", "int", [](C& c, const std::string& v) { c.train_rooms = parse_positive(v); }},
      {"train.epochs", "int", [](C& c, const std::string& v) { c.train_epochs = parse_positive(v); }},
      {"train.batch", "int", [](C& c, const std::string& v) { c.train_batch = parse_positive(v); }},
      {"train.lr", "float", [](C& c, const std::string& v) { c.train_lr = parse_double(v); }},
      {"train.t60_min", "seconds", [](C& c, const std::string& v) { c.train_t60_min = parse_double(v); }},
      {"train.t60_max", "seconds", [](C& c, const std::string& v) { c.train_t60_max = parse_double(v); }},
      {"diffusion.steps", "int", [](C& c, const std::string& v) { c.diffusion_steps = parse_positive(v); }},
      {"diffusion.schedule", "linear|cosine", [](C& c, const std::string& v) { c.schedule = schedule_kind_from_string(v); }},
      {"net.channels", "int", [](C& c, const std::string& v) { c.net_channels = parse_positive(v); }},
      {"net.blocks", "int", [](C& c, const std::string& v) { c.net_blocks = parse_positive(v); }},
      {"net.time_dim", "int", [](C& c, const std::string& v) { c.net_time_dim = parse_positive(v); }},
      {"net.conditional", "bool", [](C& c, const std::string& v) { c.conditional = parse_bool(v); }},
      {"reconstruct.input", "path", [](C& c, const std::string& v) { c.reconstruct_input = v; }},
      {"reconstruct.mask", "mask name", [](C& c, const std::string& v) { c.reconstruct_mask = v; }},
      {"reconstruct.backend", "sci|diffusion", [](C& c, const std::string& v) { c.reconstruct_backend = v; }},
      {"export_wav", "bool", [](C& c, const std::string& v) { c.export_wav = parse_bool(v); }},
  };
  return fields;
}

inline bool known_mask_name(const std::string& m) {
  return m == "mask0" || m == "mask1" || m == "mask2" || m == "mask3" || m == "all" || m.rfind("random:", 0) == 0;
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (sample_rate < 1 || rir_length < 1) throw ConfigError("sample_rate and rir_length must be positive");
  if ((room_dimensions.array() <= 0.0).any()) throw ConfigError("room.dimensions must be positive");
  if (room_t60 <= 0.0) throw ConfigError("room.t60 must be positive");
  if (array_spacing <= 0.0) throw ConfigError("array.spacing must be positive");
  if (array_preset != "ula16" && array_preset != "three_rows" && array_preset != "frame" && array_preset != "grid")
    throw ConfigError("array.preset must be one of ula16, three_rows, frame, grid");
  if (noise_distance <= 0.0) throw ConfigError("noise.distance must be positive");
  for (const auto& n : noise_types)
    if (n != "directional" && n != "diffuse") throw ConfigError("noise.types: unknown noise type '" + n + "'");
  if (snr_db.empty()) throw ConfigError("snr_db must list at least one SNR");
  if (signal_seconds <= 0.0) throw ConfigError("signal.seconds must be positive");
  if (static_cast<long>(signal_seconds * sample_rate) < rir_length)
    throw ConfigError("signal.seconds must cover at least one RIR length");
  for (const auto& m : masks)
    if (!detail::known_mask_name(m)) throw ConfigError("masks: unknown mask '" + m + "'");
  if (!detail::known_mask_name(reconstruct_mask)) throw ConfigError("reconstruct.mask: unknown mask '" + reconstruct_mask + "'");
  for (double r : random_ratios)
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("random.ratios must lie strictly between 0 and 1");
  if (backends.empty()) throw ConfigError("backends must list sci and/or diffusion");
  for (const auto& b : backends)
    if (b != "sci" && b != "diffusion") throw ConfigError("backends: unknown backend '" + b + "'");
  if (reconstruct_backend != "sci" && reconstruct_backend != "diffusion")
    throw ConfigError("reconstruct.backend must be sci or diffusion");
  if (diffusion_steps < 2) throw ConfigError("diffusion.steps must be >= 2");
  if (!(train_t60_min > 0.0 && train_t60_min <= train_t60_max)) throw ConfigError("train.t60_min/max out of order");
  if (!(train_lr > 0.0)) throw ConfigError("train.lr must be positive");
  try {
    grid.validate();
    Stft probe(stft);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  ExperimentConfig cfg;
  const auto& schema = detail::config_schema();
  for (const auto& [key, entry] : kv.entries()) {
    // mask.<name>.missing / mask.<name>.measured override a fixed preset.
    if (key.rfind("mask.", 0) == 0) {
      const auto dot = key.rfind('.');
      const std::string name = key.substr(5, dot - 5), what = key.substr(dot + 1);
      if (dot <= 5 || (what != "missing" && what != "measured") || !detail::known_mask_name(name) || name == "all" ||
          name.rfind("random", 0) == 0)
        kv.fail(entry.line, "unknown key '" + key + "'");
      try {
        (what == "missing" ? cfg.mask_missing : cfg.mask_measured)[name] = detail::parse_ints(entry.value);
      } catch (const InvalidInput& e) {
        kv.fail(entry.line, key + ": " + e.what());
      }
      continue;
    }
    auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& f) { return f.key == key; });
    if (it == schema.end()) kv.fail(entry.line, "unknown key '" + key + "'");
    try {
      it->set(cfg, entry.value);
    } catch (const InvalidInput& e) {
      kv.fail(entry.line, key + " (" + it->type + "): " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(kv.source() + ": " + e.what());
  }
  return cfg;
}

}  // namespace rirkit
