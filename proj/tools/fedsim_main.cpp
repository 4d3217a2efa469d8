#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Deterministic single-process simulator of federated learning "
               "over heterogeneous clients"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t workers = 0;
  fedsim::CliOverrides overrides;

  CLI::App* run = app.add_subcommand("run", "Execute an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")
      ->required();
  CLI::Option* seed_opt =
      run->add_option("--seed", seed, "Override the config's master seed");
  CLI::Option* out_opt =
      run->add_option("--out", out_dir, "Override the output directory");
  CLI::Option* workers_opt = run->add_option(
      "--workers", workers, "Worker threads for concurrent client updates");
  run->add_flag("--strict-star-aggregation",
                overrides.strict_star_aggregation,
                "Keep the literal 1/K factor in the star topology's final "
                "aggregation (shrinks weights; for comparison only)");
  run->add_flag("--relay-via-server", overrides.relay_via_server,
                "Log cyclic handoffs as uploads to the server instead of "
                "direct client-to-client transfers");

  std::vector<std::string> summaries;
  CLI::App* cmp =
      app.add_subcommand("compare", "Tabulate summary.json files side by side");
  cmp->add_option("summaries", summaries, "summary.json paths")
      ->required()
      ->expected(-1);

  fedsim::DomainShiftSpec spec;
  std::vector<std::size_t> samples;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Write a synthetic federation (manifest + feature files)");
  gen->add_option("--clients", spec.num_clients, "Number of clients")
      ->capture_default_str();
  gen->add_option("--classes", spec.num_classes, "Number of classes")
      ->capture_default_str();
  gen->add_option("--dim", spec.feature_dim, "Feature dimension")
      ->capture_default_str();
  gen->add_option("--samples", samples,
                  "Samples per client (one value, or one per client)");
  gen->add_option("--shift", spec.shift_scale,
                  "Domain shift magnitude (0 = identical domains)")
      ->capture_default_str();
  gen->add_option("--skew", spec.label_skew,
                  "Label skew in [0,1) (0 = balanced classes)")
      ->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      if (*seed_opt) overrides.seed = seed;
      if (*out_opt) overrides.out_dir = out_dir;
      if (*workers_opt) overrides.workers = workers;
      auto dirs = fedsim::run_experiment(config_path, overrides);
      for (const auto& d : dirs) std::cout << d.string() << '\n';
    } else if (cmp->parsed()) {
      std::vector<std::filesystem::path> paths(summaries.begin(),
                                               summaries.end());
      fedsim::compare_summaries(paths);
    } else {
      if (!samples.empty()) spec.samples_per_client = samples;
      fedsim::gen_data(spec, gen_out);
      std::cout << "wrote " << spec.num_clients << " clients to " << gen_out
                << '\n';
    }
  } catch (const fedsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fedsim::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
