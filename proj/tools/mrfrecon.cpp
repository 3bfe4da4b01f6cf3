// mrfrecon: simulate, pretrain, reconstruct and evaluate MRF experiments.

#include "experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <optional>

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> mode;
  std::optional<std::size_t> iterations;
  std::optional<double> snr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t jobs = 1;
};

mrf::ExperimentConfig resolve(const Overrides& o) {
  mrf::ExperimentConfig cfg = o.config.empty() ? mrf::ExperimentConfig{} : mrf::load_config(o.config);
  if (o.mode) {
    cfg.recon.modes = {mrf::parse_mode(*o.mode)};
  }
  if (o.iterations) {
    cfg.recon.iterations = *o.iterations;
  }
  if (o.snr) {
    cfg.acquisition.snr_db = {*o.snr};
  }
  if (o.seed) {
    cfg.seed = *o.seed;
  }
  if (o.out) {
    cfg.out = *o.out;
  }
  cfg.validate();
  return cfg;
}

int run(const std::string& command, const Overrides& o) {
  const mrf::ExperimentConfig cfg = resolve(o);
  if (command == "simulate" || command == "all") {
    mrf::cmd_simulate(cfg);
  }
  if (command == "pretrain" || (command == "all" && std::any_of(cfg.recon.modes.begin(), cfg.recon.modes.end(),
                                                                 [](mrf::Mode m) { return m != mrf::Mode::match; }))) {
    mrf::cmd_pretrain(cfg);
  }
  if (command == "reconstruct" || command == "all") {
    mrf::cmd_reconstruct(cfg, o.jobs);
  }
  if (command == "evaluate" || command == "all") {
    mrf::cmd_evaluate(cfg);
  }
  return mrf::kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRF reconstruction experiments: simulate, pretrain, reconstruct, evaluate"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "INI experiment file (defaults are built in)")->check(CLI::ExistingFile);
  app.add_option("--mode", o.mode, "reconstruction mode, overrides [recon] modes")
      ->check(CLI::IsMember({"bardip", "dipmrf", "match"}));
  app.add_option("--iterations", o.iterations, "reconstruction iterations")->check(CLI::PositiveNumber);
  app.add_option("--snr", o.snr, "single SNR in dB, overrides [acquisition] snr_db");
  app.add_option("--seed", o.seed, "root seed");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--jobs", o.jobs, "parallel reconstruction workers")->check(CLI::PositiveNumber);

  std::string command;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"simulate", "phantoms, dictionary, basis, trajectory and k-space"},
           {"pretrain", "train the BDAE on the dictionary"},
           {"reconstruct", "run the configured reconstruction modes"},
           {"evaluate", "metrics, convergence curves and previews"},
           {"all", "every stage in order"}}) {
    app.add_subcommand(name, help)->fallthrough()->callback([&command, n = name] { command = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mrf::kExitOk : mrf::kExitConfig;
  }

  try {
    return run(command, o);
  } catch (const mrf::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return mrf::kExitConfig;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return mrf::kExitConfig;
  } catch (const bardip::TrainingDiverged& e) {
    fmt::print(stderr, "diverged: {}\n", e.what());
    return mrf::kExitDiverged;
  } catch (const mrf::ArtifactError& e) {
    fmt::print(stderr, "missing or stale artifact: {}\n", e.what());
    return mrf::kExitArtifact;
  } catch (const bardip::FormatError& e) {
    fmt::print(stderr, "missing or stale artifact: {}\n", e.what());
    return mrf::kExitArtifact;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return mrf::kExitFailure;
  }
}
