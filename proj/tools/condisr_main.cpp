#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "condisr/engine.hpp"
#include "condisr/image_io.hpp"
#include "condisr/report.hpp"

namespace fs = std::filesystem;
using namespace condisr;

namespace {

Config load_config_or_die(const std::string& path) {
  std::vector<std::string> errors;
  Config cfg = Config::from_file(path, &errors);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
    throw ConfigError("invalid config: " + path);
  }
  return cfg;
}

void prepare_out_dir(const std::string& out, bool force) {
  if (fs::exists(fs::path(out) / "results.csv") && !force)
    throw ConfigError("output directory already holds results: " + out +
                      " (pass --force to overwrite)");
  fs::create_directories(out);
}

void write_artifacts(const std::string& out, const Config& cfg, const ProtocolResult& result) {
  write_results_csv((fs::path(out) / "results.csv").string(), result.table);
  write_results_json((fs::path(out) / "results.json").string(), result.table, result.records);
  write_runs_csv((fs::path(out) / "runs.csv").string(), result.records);
  std::ofstream md(fs::path(out) / "results.md");
  md << results_markdown(result.table);
  std::ofstream snap(fs::path(out) / "config.resolved");
  snap << cfg.resolved();
}

int cmd_validate(const std::string& config_path) {
  std::vector<std::string> errors;
  Config cfg = Config::from_file(config_path, &errors);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
    return ConfigError::exit_code;
  }
  std::cout << cfg.resolved();
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out, bool force,
            const std::string& methods_override) {
  Config cfg = load_config_or_die(config_path);
  if (!methods_override.empty()) cfg.set("train.methods", methods_override);
  prepare_out_dir(out, force);
  ExperimentConfig exp = experiment_from_config(cfg);
  fs::create_directories(fs::path(out) / "checkpoints");
  exp.checkpoint_dir = (fs::path(out) / "checkpoints").string();
  Logger log((fs::path(out) / "run.log").string(), false);
  log.line("loading domains (" + exp.data_kind + ")");
  std::vector<DomainDataset> domains = load_domains(exp);
  log.line("running protocol: " + std::to_string(exp.methods.size()) + " methods, " +
           std::to_string(exp.seeds.size()) + " seeds");
  ProtocolResult result = run_protocol(exp, domains, &log);
  write_artifacts(out, cfg, result);
  std::cout << results_markdown(result.table);
  if (result.any_failed) {
    std::cerr << "warning: some runs aborted; affected cells are marked missing\n";
    return TrainAbort::exit_code;
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& which, const std::string& out,
               bool force) {
  if (which != "resolution" && which != "style")
    throw ConfigError("unknown ablation '" + which + "' (expected 'resolution' or 'style')");
  Config cfg = load_config_or_die(config_path);
  prepare_out_dir(out, force);
  ExperimentConfig exp = experiment_from_config(cfg);
  Logger log((fs::path(out) / "run.log").string(), false);
  std::vector<DomainDataset> domains = load_domains(exp);
  ProtocolResult result = which == "resolution" ? run_resolution_ablation(exp, domains, &log)
                                                : run_style_ablation(exp, domains, &log);
  write_artifacts(out, cfg, result);
  std::cout << results_markdown(result.table);
  if (result.any_failed) {
    std::cerr << "warning: some runs aborted; affected cells are marked missing\n";
    return TrainAbort::exit_code;
  }
  return 0;
}

Network<real_t> network_from_checkpoint(const std::string& checkpoint, const ModelConfig& mc) {
  auto entries = read_checkpoint(checkpoint);
  bool with_gate = entries.count("gate.theta") > 0;
  bool with_decoder = false;
  for (const auto& [name, _] : entries)
    if (name.rfind("decoder.", 0) == 0) with_decoder = true;
  Network<real_t> net = build_network<real_t>(mc, with_gate, with_decoder, 0);
  ParamSet<real_t> ps = net.params();
  load_checkpoint(checkpoint, ps);
  return net;
}

int cmd_gradcam(const std::string& checkpoint, const std::string& image_path,
                const std::string& layer, const std::string& out_path,
                const std::string& config_path) {
  Config cfg = config_path.empty() ? Config() : load_config_or_die(config_path);
  ExperimentConfig exp = experiment_from_config(cfg);
  Network<real_t> net = network_from_checkpoint(checkpoint, exp.model);

  auto run_one = [&](const std::string& in_file, const std::string& out_file) {
    ImageU8 img = read_png(in_file);
    if (img.width != kImageSide || img.height != kImageSide)
      throw DataError("image is not 96x96: " + in_file);
    Tensor<double> x({kImageChannels, kImageSide, kImageSide});
    for (int y = 0; y < kImageSide; ++y)
      for (int xx = 0; xx < kImageSide; ++xx)
        for (int ch = 0; ch < 3; ++ch)
          x[ch * kImageSide * kImageSide + y * kImageSide + xx] =
              img.pixels[(static_cast<std::size_t>(y) * kImageSide + xx) * 3 + ch] / 255.0;
    Tensor<float> heat = gradcam(net, x, layer, exp);
    write_gradcam_overlay(out_file, x, heat);
  };

  if (fs::is_directory(image_path)) {
    fs::create_directories(out_path);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(image_path))
      if (entry.path().extension() == ".png") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      run_one(f.string(), (fs::path(out_path) / (f.stem().string() + "_cam.png")).string());
    std::cout << "wrote " << files.size() << " overlays to " << out_path << "\n";
  } else {
    if (fs::path(out_path).has_parent_path())
      fs::create_directories(fs::path(out_path).parent_path());
    run_one(image_path, out_path);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_make_synthetic(const std::string& config_path, const std::string& out) {
  Config cfg = load_config_or_die(config_path);
  ExperimentConfig exp = experiment_from_config(cfg);
  SyntheticDomainConfig sc;
  sc.samples_per_domain = exp.samples_per_domain;
  std::vector<DomainDataset> domains = generate_synthetic_domains(sc, exp.data_seed);
  export_wilds_layout(domains, out);
  std::ofstream snap(fs::path(out) / "config.resolved");
  snap << cfg.resolved();
  long total = 0;
  for (const auto& d : domains) total += static_cast<long>(d.size());
  std::cout << "wrote " << total << " patches across " << domains.size() << " domains to " << out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-domain-generalization toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, methods, which, checkpoint, image_path, layer, out_path;
  bool force = false;

  auto* validate = app.add_subcommand("validate", "check a config file and print it resolved");
  validate->add_option("config", config_path, "config file")->required();

  auto* run = app.add_subcommand("run", "train and evaluate with the leave-one-domain-in protocol");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_flag("--force", force, "overwrite an existing output directory");
  run->add_option("--methods", methods, "comma-separated method override");

  auto* ablate = app.add_subcommand("ablate", "run the resolution or style ablation");
  ablate->add_option("--config", config_path, "config file")->required();
  ablate->add_option("--which", which, "resolution | style")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_flag("--force", force, "overwrite an existing output directory");

  auto* cam = app.add_subcommand("gradcam", "write a Grad-CAM overlay for an image or directory");
  cam->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cam->add_option("--image", image_path, "input PNG or directory of PNGs")->required();
  cam->add_option("--layer", layer, "layer name (e.g. stem, block1)")->required();
  cam->add_option("--out", out_path, "output PNG or directory")->required();
  cam->add_option("--config", config_path, "config used to build the model");

  auto* synth = app.add_subcommand("make-synthetic", "export the synthetic benchmark as PNGs");
  synth->add_option("--config", config_path, "config file")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : ConfigError::exit_code;
  }

  try {
    if (app.got_subcommand(validate)) return cmd_validate(config_path);
    if (app.got_subcommand(run)) return cmd_run(config_path, out_dir, force, methods);
    if (app.got_subcommand(ablate)) return cmd_ablate(config_path, which, out_dir, force);
    if (app.got_subcommand(cam))
      return cmd_gradcam(checkpoint, image_path, layer, out_path, config_path);
    if (app.got_subcommand(synth)) return cmd_make_synthetic(config_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ConfigError::exit_code;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return DataError::exit_code;
  } catch (const TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return TrainAbort::exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
