#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "ccisac/harness.hpp"

using namespace ccisac;

namespace {

int fail(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"kind", kind}, {"message", message}}.dump() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV beam tracking experiments"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoints, vsi, oracle;
  std::uint64_t seed = 0;
  int workers = 0;
  std::vector<int> levels;
  std::vector<double> snr;
  std::vector<std::string> losses, estimators;
  bool quiet = false;

  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--checkpoints", checkpoints, "checkpoint directory (default: output directory)");
  app.add_option("--level", levels, "codebook levels");
  app.add_option("--snr", snr, "transmit SNR values in dB");
  app.add_option("--loss", losses, "loss presets: none, few, many");
  app.add_option("--estimator", estimators, "mmfe, echo_only, kf, vision_only");
  app.add_option("--vsi", vsi, "vision source: v2eda or truth");
  app.add_option("--oracle", oracle, "detection: echo or geometric");
  app.add_option("--workers", workers, "worker threads");
  app.add_flag("-q,--quiet", quiet, "no progress output");

  const std::vector<std::pair<std::string, std::string>> verbs{
      {"train", "train V2EDA, MMFE and Echo-Only; calibrate the Kalman baseline"},
      {"steer", "vision-aided beam steering versus hierarchical search"},
      {"track", "beam tracking comparison across channel cases"},
      {"coherence", "beam coherence time table"},
      {"budget", "frame budget for measured scan counts"},
      {"export-codebook", "write codebook beam tables"}};
  for (const auto& [name, help] : verbs) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("ConfigError", e.what());
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (app.count("--seed")) cfg.seed = seed;
    if (!out.empty()) cfg.out_dir = out;
    if (!checkpoints.empty()) cfg.checkpoint_dir = checkpoints;
    if (!levels.empty()) cfg.levels = levels;
    if (!snr.empty()) cfg.snr_db = snr;
    if (!losses.empty()) {
      cfg.loss_presets.clear();
      for (const auto& l : losses) cfg.loss_presets.push_back(parse_loss_preset(l));
    }
    if (!estimators.empty()) cfg.estimators = estimators;
    if (!vsi.empty()) cfg.vsi_source = vsi;
    if (!oracle.empty()) cfg.oracle = oracle;
    if (workers > 0) cfg.workers = workers;
    cfg.validate();

    const std::string verb = app.get_subcommands().front()->get_name();
    Progress log;
    if (!quiet) log = [](const std::string& s) { std::cerr << s << "\n"; };
    const auto man = run_verb(verb, cfg, log);
    for (const auto& [key, path] : man.artifacts) std::cout << key << ": " << path << "\n";
    return 0;
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("Error", e.what());
  }
}
