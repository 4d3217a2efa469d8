#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/protocol.hpp"

namespace fedsim {

enum class Strategy {
  kFedAvg,
  kRingFed,
  kFedCyclic,
  kFedStar,
  kLocalOnly,
  kCentralized,
};

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

struct RunConfig {
  Strategy strategy = Strategy::kFedAvg;
  std::size_t rounds = 1;
  std::size_t periods = 1;  // fed_star and ringfed only
  double gamma = 0.8;       // ringfed only
  SgdConfig sgd;            // sgd.epochs is the per-visit epoch count E
  std::uint64_t master_seed = 0;
  std::size_t eval_every = 1;
  std::size_t workers = 1;
  // Reproduces the shrinking 1/K factor in the source description of the
  // star topology's final aggregation instead of the size-weighted mean.
  bool strict_star_aggregation = false;
  // Log cyclic handoffs as uploads to the server instead of direct
  // client-to-client transfers (same event count either way).
  bool relay_via_server = false;
  // Re-draw the cyclic visiting order each round (default: index order).
  bool permute_cyclic_order = false;

  void validate() const;
};

/// Metrics snapshot taken after a round completes. Global metrics come from
/// the union of all test views; client_accuracies holds one per-client test
/// accuracy in federation order.
struct RoundTrace {
  std::size_t round = 0;  // 1-based
  double global_accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> client_accuracies;
  std::size_t cumulative_transfers = 0;
};

struct RunResult {
  WeightVector final_weights;                // empty for local_only
  std::vector<WeightVector> client_weights;  // local_only: one per client
  std::vector<RoundTrace> traces;
  CommLedger ledger;
};

/// Model weights every strategy starts from. Derived only from the
/// architecture and the master seed, so strategies sharing a seed are
/// paired on w_init automatically.
WeightVector initial_weights(const MlpConfig& arch, std::uint64_t master_seed);

RunResult run_fedavg(const Federation& fed, const MlpConfig& arch,
                     const RunConfig& cfg);
RunResult run_fed_cyclic(const Federation& fed, const MlpConfig& arch,
                         const RunConfig& cfg);
RunResult run_fed_star(const Federation& fed, const MlpConfig& arch,
                       const RunConfig& cfg);
RunResult run_ringfed(const Federation& fed, const MlpConfig& arch,
                      const RunConfig& cfg);
RunResult run_local_only(const Federation& fed, const MlpConfig& arch,
                         const RunConfig& cfg);
RunResult run_centralized(const Federation& fed, const MlpConfig& arch,
                          const RunConfig& cfg);

RunResult run_strategy(const Federation& fed, const MlpConfig& arch,
                       const RunConfig& cfg);

}  // namespace fedsim
