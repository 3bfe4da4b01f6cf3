#pragma once

#include "bardip/bdae.hpp"
#include "bardip/reconstruct.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mrf {

namespace fs = std::filesystem;

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitArtifact = 4;

struct ConfigError : bardip::Error {
  using Error::Error;
};

// An upstream artifact is missing, or no longer matches the manifest.
struct ArtifactError : bardip::Error {
  using Error::Error;
};

enum class Mode { bardip, dipmrf, match };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct SequenceSection {
  std::size_t timeframes = 200;
  double tr_ms = 10.0;
  double te_ms = 1.908;
  double ti_ms = 18.0;
  fs::path schedule; // CSV; empty means the built-in schedule
};

struct DictionarySection {
  double t1_first = 100, t1_last = 3000, t1_step = 100;
  double t2_first = 10, t2_last = 300, t2_step = 10;
  std::size_t channels = 5;
};

struct PhantomSection {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t slices = 1;
};

struct TrajectorySection {
  std::size_t samples = 600;
  double density_exponent = 2.0;
  int rotations = 8;
};

struct AcquisitionSection {
  std::size_t coils = 1;
  std::vector<double> snr_db{40.0};
};

struct BdaeSection {
  std::size_t epochs = 1000;
  std::size_t batch_size = 64;
  std::size_t hidden = 300;
  double lr = 1e-3;
  double lr_final = 1e-5;
  double noise_sigma = 0.01;
  double lambda_e = 0.1;
};

struct ReconSection {
  std::vector<Mode> modes{Mode::match, Mode::dipmrf, Mode::bardip};
  double lambda = 10.0;
  double lr = 3e-4;
  std::size_t iterations = 1000;
  std::size_t log_every = 50;
  std::size_t unet_levels = 4;
  std::size_t unet_base = 16;
  bool precondition_x0 = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  fs::path out = "mrf-out";
  SequenceSection sequence;
  DictionarySection dictionary;
  PhantomSection phantom;
  TrajectorySection trajectory;
  AcquisitionSection acquisition;
  BdaeSection bdae;
  ReconSection recon;

  /// Throws ConfigError on out-of-range values or a missing schedule file.
  void validate() const;

  /// Canonical key/value dump of the sections a stage depends on.
  nlohmann::json simulate_inputs() const;
  nlohmann::json pretrain_inputs() const;
  nlohmann::json recon_inputs(Mode mode) const;
};

/// Reads an INI file ([section] then key = value). Unknown keys are errors.
ExperimentConfig load_config(const fs::path& path);

/// Seed for a named stream, derived from the root seed by SHA-256.
std::uint64_t derive_seed(std::uint64_t root, const std::string& label);

std::string sha256_file(const fs::path& path);

/// Per-stage record of config inputs and artifact hashes, stored as
/// <out>/manifest.json. Paths are relative to the output directory.
class Manifest {
public:
  explicit Manifest(fs::path out_dir);

  void record(const std::string& stage, const nlohmann::json& inputs, const std::vector<fs::path>& outputs,
              const nlohmann::json& seeds = nlohmann::json::object());

  /// Throws ArtifactError unless `stage` was recorded with these inputs and
  /// its outputs are present with the recorded hashes.
  void verify(const std::string& stage, const nlohmann::json& inputs) const;

  bool has(const std::string& stage) const;
  std::vector<std::string> stages_with_prefix(const std::string& prefix) const;
  const nlohmann::json& json() const { return doc_; }

private:
  void save() const;

  fs::path dir_;
  nlohmann::json doc_;
};

/// Output layout.
struct Layout {
  fs::path root;

  fs::path dictionary() const { return root / "dictionary.mrfd"; }
  fs::path schedule() const { return root / "schedule.csv"; }
  fs::path trajectory() const { return root / "trajectory.mrft"; }
  fs::path phantom(std::size_t slice) const;
  fs::path kspace(std::size_t slice, double snr_db) const;
  fs::path bdae() const { return root / "bdae.mrfm"; }
  fs::path bdae_eval() const { return root / "bdae_eval.csv"; }
  fs::path run_dir(Mode m, std::size_t slice, double snr_db) const;
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path convergence() const { return root / "convergence.csv"; }
};

std::string snr_tag(double snr_db);

void cmd_simulate(const ExperimentConfig& cfg);
void cmd_pretrain(const ExperimentConfig& cfg);
void cmd_reconstruct(const ExperimentConfig& cfg, std::size_t jobs);
void cmd_evaluate(const ExperimentConfig& cfg);

} // namespace mrf
