#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "contraj/checkpoint.hpp"
#include "contraj/continual.hpp"
#include "contraj/data.hpp"
#include "contraj/metrics.hpp"
#include "contraj/runlog.hpp"

namespace contraj::experiment {

/// Flat key=value configuration with dotted section names. Every key mirrors
/// a field below; unknown keys are rejected. Values left unset fall back to
/// the per-dataset defaults at run time.
struct ExperimentConfig {
  std::filesystem::path dataset_path;
  continual::MethodConfig method;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir;
  std::optional<int> iterations;  // resolved by dataset when unset
  std::optional<double> lr;

  /// Keys explicitly present in the config source, for manifest echoing.
  std::map<std::string, std::string> resolved_keys;
};

/// Parses the flat key=value format ('#' comments, blank lines allowed).
ExperimentConfig parse_config_file(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
/// Applies one key=value pair; throws ContractError on unknown keys.
void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Paper-table defaults (iterations, learning rate) by trajectory dimension;
/// applied only where the config left the value unset.
void apply_dataset_defaults(ExperimentConfig& cfg, int dim, bool pose);

/// Writes the fully resolved configuration; feeding the manifest back in
/// reproduces the run's error fields.
void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& path);

struct TrainOutputs {
  std::vector<std::filesystem::path> runlogs;      // one per seed
  std::vector<std::filesystem::path> checkpoints;  // one per seed
  std::filesystem::path manifest;
};

/// Runs the sequence for every seed (fanned out across CONTRAJ_WORKERS
/// threads), writing runlog_seed<S>.jsonl and checkpoint_seed<S>.ckpt.
TrainOutputs run_train(const ExperimentConfig& cfg);

/// Rolls out every task of a checkpoint on a dataset and writes per-demo
/// errors as JSON. Returns the errors per task.
std::vector<continual::EvalErrors> run_eval(const std::filesystem::path& checkpoint_path,
                                            const std::filesystem::path& dataset_path,
                                            const std::filesystem::path& out_json);

struct MetricsOptions {
  std::optional<double> dtw_threshold;
  std::optional<double> quat_threshold;
  std::optional<long> cross_model_max_size;
};

struct MetricsOutputs {
  metrics::CLReport median_report;
  std::vector<metrics::CLReport> per_seed;
  double stability = 1.0;
};

/// Accuracy matrices and CL reports from one or more runlogs (multi-seed),
/// written as JSON and CSV under out_dir.
MetricsOutputs run_metrics(const std::vector<std::filesystem::path>& runlogs,
                           const std::filesystem::path& dataset_path,
                           const std::filesystem::path& out_dir, const MetricsOptions& opt);

enum class StabilityMode { Perturb, Horizon };

struct StabilityOptions {
  StabilityMode mode = StabilityMode::Perturb;
  int task = -1;  // -1 = all tasks
  double radius = 25.0;
  int samples = 100;
  int extra_steps = 200;
  std::uint64_t seed = 1;
};

struct StabilityResult {
  int task = 0;
  std::vector<double> deltas;  // original units
};

std::vector<StabilityResult> run_stability(const std::filesystem::path& checkpoint_path,
                                           const std::filesystem::path& dataset_path,
                                           const StabilityOptions& opt,
                                           const std::filesystem::path& out_json);

/// Goal distance probes for one already-loaded model/task pair; used by the
/// acceptance suite and by run_stability.
std::vector<double> stability_deltas(const continual::TaskModel& model,
                                     const data::Task& task, const data::NormalizedTask& nt,
                                     const StabilityOptions& opt);

}  // namespace contraj::experiment
