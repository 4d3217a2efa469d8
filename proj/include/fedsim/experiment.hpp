#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/metrics.hpp"

namespace fedsim {

/// Command-line knobs that override or extend whatever the config says.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::size_t> workers;
  bool strict_star_aggregation = false;
  bool relay_via_server = false;
};

/// One fully resolved run: everything run_strategy needs plus the name of
/// the directory its outputs land in.
struct PlannedRun {
  std::string name;
  RunConfig run;
};

struct ExperimentConfig {
  std::optional<DomainShiftSpec> synthetic;
  std::optional<std::filesystem::path> manifest;
  double split_ratio = 0.8;
  MlpConfig model;  // input_dim / num_classes filled from the data
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir = "results";
  std::vector<PlannedRun> runs;
};

/// Parses and validates a config file. Unknown keys anywhere are errors.
/// Sweeps are expanded into the returned run list.
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const CliOverrides& overrides = {});

/// Builds the federation once, executes every planned run against it, and
/// writes results.csv, ledger.csv and summary.json per run. Returns the run
/// directories in execution order.
std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& cfg);

/// Convenience wrapper: load + run.
std::vector<std::filesystem::path> run_experiment(
    const std::filesystem::path& config_path, const CliOverrides& overrides = {});

/// Prints a comparison table built from summary.json files, sorted by
/// strategy name. Returns the table as the printed string.
std::string compare_summaries(const std::vector<std::filesystem::path>& paths);

/// Materializes a synthetic federation as manifest + feature files.
void gen_data(const DomainShiftSpec& spec, const std::filesystem::path& out);

}  // namespace fedsim
