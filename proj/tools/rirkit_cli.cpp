// rirkit: simulate scenes, train the diffusion prior, reconstruct missing
// RIRs and run the reconstruction / beamforming evaluations.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rirkit/harness.hpp"

namespace fs = std::filesystem;
using namespace rirkit;

namespace {

struct Options {
  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::string input, mask, backend;
  bool quiet = false;
};

void log_line(const Options& o, const std::string& s) {
  if (!o.quiet) std::fprintf(stderr, "%s\n", s.c_str());
}

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.mask.empty()) {
    if (!detail::known_mask_name(o.mask)) throw ConfigError("--mask: unknown mask '" + o.mask + "'");
    cfg.reconstruct_mask = o.mask;
  }
  if (!o.backend.empty()) {
    if (o.backend != "sci" && o.backend != "diffusion") throw ConfigError("--backend must be sci or diffusion");
    cfg.reconstruct_backend = o.backend;
  }
  if (!o.input.empty()) cfg.reconstruct_input = o.input;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  detail::write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

std::vector<int> iota(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

nlohmann::json point_json(const Point3& p) { return {p.x(), p.y(), p.z()}; }

void cmd_simulate(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  Experiment ex(cfg, o.out_dir);
  const Scene& sc = ex.scene();
  const std::string gt = resolve_path(o.out_dir, "ground_truth.rir");
  const std::string ir = resolve_path(o.out_dir, "interferer.rir");
  export_rir_archive(gt, {sc.target, sc.layout.positions, sc.source});
  export_rir_archive(ir, {sc.interference, sc.layout.positions, sc.interferer});
  const std::vector<int> mics = iota(sc.layout.mics());
  edc_table({{"truth", &sc.target}}, mics).write(resolve_path(o.out_dir, "edc_truth.csv"));
  t60_table({{"truth", &sc.target}}, mics).write(resolve_path(o.out_dir, "t60_truth.csv"));

  nlohmann::json m;
  m["array"] = cfg.array_preset;
  m["mics"] = sc.layout.mics();
  m["sample_rate"] = cfg.sample_rate;
  m["rir_length"] = cfg.rir_length;
  m["seed"] = cfg.seed;
  m["room"] = {{"dimensions", point_json(sc.room.dimensions)},
               {"target_t60", cfg.room_t60},
               {"reflection", sc.room.reflection[0]}};
  m["source"] = point_json(sc.source);
  m["interferer"] = point_json(sc.interferer);
  m["images_used"] = sc.report.images_used;
  m["warnings"] = sc.report.warnings;
  m["files"] = {"ground_truth.rir", "interferer.rir", "edc_truth.csv", "t60_truth.csv"};
  write_text(resolve_path(o.out_dir, "manifest.json"), m.dump(2) + "\n");
  log_line(o, "wrote " + gt + " (" + std::to_string(sc.target.samples()) + " x " + std::to_string(sc.target.mics()) + ")");
}

void cmd_train(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  CsvTable log;
  log.header = {"epoch", "loss"};
  const TrainResult tr = train_from_config(
      cfg,
      [&](int epoch, double loss) {
        log.add({std::to_string(epoch), format_number(loss)});
        log_line(o, "epoch " + std::to_string(epoch) + " loss " + format_number(loss, 5));
      },
      [&](int r, int total) {
        if (r == total || r % 10 == 0) log_line(o, "simulated " + std::to_string(r) + "/" + std::to_string(total) + " rooms");
      });
  const std::string path = resolve_path(o.out_dir, cfg.model_path);
  save_model(path, tr.model, train_metadata(cfg));
  log.write(resolve_path(o.out_dir, "train_log.csv"));
  log_line(o, "wrote " + path);
}

void cmd_reconstruct(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  Experiment ex(cfg, o.out_dir);
  const RirArchive in = import_rir_archive(resolve_path(o.out_dir, cfg.reconstruct_input));
  const ArrayLayout preset = make_array(cfg.array_preset, cfg.array_center, cfg.array_spacing, cfg.array_axis_deg);
  const ArrayLayout layout = layout_for_positions(in.mic_positions, preset);
  const MaskSpec spec = parse_mask_spec(cfg.reconstruct_mask);
  const MicMask mask = mask_from_config(cfg, spec, in.rirs.mics());
  const RirMatrix est = ex.reconstruct_with(in.rirs, mask, cfg.reconstruct_backend, spec.label, layout);
  export_rir_archive(resolve_path(o.out_dir, "reconstructed.rir"), {est, in.mic_positions, in.source_position});

  // The input's hidden columns serve as the reference for scoring.
  CsvTable t;
  t.header = {"mask", "backend", "missing", "nmse_db", "cd", "dist_mean"};
  const ReconScore s = score_reconstruction(in.rirs, est, mask, next_pow2(in.rirs.samples()));
  t.add({cfg.reconstruct_mask, cfg.reconstruct_backend, std::to_string(mask.missing_count()), format_number(s.nmse_db),
         format_number(s.cd), format_number(s.dist_mean)});
  t.write(resolve_path(o.out_dir, "reconstruct_metrics.csv"));
  const std::vector<int> missing = mask.missing_indices();
  CsvTable e = edc_table({{"truth", &in.rirs}, {cfg.reconstruct_backend, &est}}, missing);
  e.write(resolve_path(o.out_dir, "edc_compare.csv"));
  t60_table({{"truth", &in.rirs}, {cfg.reconstruct_backend, &est}}, missing)
      .write(resolve_path(o.out_dir, "t60_compare.csv"));
  log_line(o, "reconstructed " + std::to_string(mask.missing_count()) + " of " + std::to_string(mask.size()) +
                  " columns with " + cfg.reconstruct_backend);
}

void cmd_eval_recon(const Options& o) {
  Experiment ex(load_config(o), o.out_dir);
  ex.log = [&](const std::string& s) { log_line(o, s); };
  const ReconEval r = run_reconstruction_eval(ex);
  r.table().write(resolve_path(o.out_dir, "recon_eval.csv"));
  r.plot().write(resolve_path(o.out_dir, "recon_plot.csv"));
}

void cmd_eval_beamform(const Options& o) {
  Experiment ex(load_config(o), o.out_dir);
  ex.log = [&](const std::string& s) { log_line(o, s); };
  const BeamformEval r = run_beamforming_eval(ex, ex.config().export_wav ? resolve_path(o.out_dir, "wav") : "");
  r.table().write(resolve_path(o.out_dir, "beamform_eval.csv"));
}

void cmd_report(const Options& o) {
  for (const auto& f : write_report(o.out_dir)) log_line(o, "wrote " + f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Room impulse response reconstruction and beamforming experiments"};
  app.require_subcommand(1);
  Options o;
  auto global = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config file (key = value)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--out-dir", o.out_dir, "Output directory (created if missing)");
    sub->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
  };
  struct Command {
    const char* name;
    const char* help;
    void (*run)(const Options&);
  };
  const Command commands[] = {
      {"simulate", "Simulate the configured scene and write the ground-truth archive", cmd_simulate},
      {"train", "Train the diffusion prior on random simulated rooms", cmd_train},
      {"reconstruct", "Reconstruct masked columns of an RIR archive", cmd_reconstruct},
      {"eval-recon", "NMSE / CD / Dist for every mask and backend", cmd_eval_recon},
      {"eval-beamform", "MVDR variants under directional and diffuse noise", cmd_eval_beamform},
      {"report", "Merge evaluation tables into a report and plot data", cmd_report},
  };
  void (*selected)(const Options&) = nullptr;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    global(sub);
    if (std::string(c.name) == "reconstruct") {
      sub->add_option("--input", o.input, "Input archive (relative paths resolve against --out-dir)");
      sub->add_option("--mask", o.mask, "mask0..mask3, all or random:<ratio>[:<seed>]");
      sub->add_option("--backend", o.backend, "sci or diffusion");
    }
    sub->callback([&o, &selected, run = c.run] { selected = run; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << app.help();
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    fs::create_directories(o.out_dir);
    selected(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
