#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/mlp.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

inline constexpr const char* kServer = "SERVER";

/// One weight transfer between two endpoints (client ids or SERVER).
struct CommEvent {
  std::size_t round = 0;  // 1-based
  std::optional<std::size_t> period;
  std::string from;
  std::string to;
  std::size_t payload_dim = 0;
};

struct CommLedger {
  std::vector<CommEvent> events;

  std::size_t total_transfers() const { return events.size(); }
  std::size_t total_payload() const;
  std::size_t transfers_in_round(std::size_t round) const;
};

void log_transfer(CommLedger& ledger, std::size_t round,
                  std::optional<std::size_t> period, std::string from,
                  std::string to, std::size_t payload_dim);

/// A client's slice of the simulation: its data, its current weights, and a
/// private rng stream. The stream seed depends only on the master seed and
/// the client id, so scheduling order can never leak into results.
struct ClientState {
  std::string client_id;
  const ClientDataset* data = nullptr;
  MlpConfig arch;
  WeightVector weights;
  RngStream rng{0};

  std::size_t train_size() const { return data->train_idx.size(); }
};

std::vector<ClientState> make_client_states(const Federation& fed,
                                            const MlpConfig& arch,
                                            const WeightVector& w_init,
                                            std::uint64_t master_seed);

struct GlobalState {
  std::size_t round = 0;
  WeightVector global_weights;
  MlpConfig arch;
  SgdConfig sgd;
};

/// Runs cfg.epochs epochs of minibatch SGD on the client's train view,
/// starting from `incoming`. Advances the client's rng; does not touch any
/// ledger (orchestrators log transfers).
WeightVector client_update(ClientState& state, const WeightVector& incoming,
                           const SgdConfig& cfg);

/// Size-proportional weight average: coefficients sizes/sum(sizes). The
/// combination is anchored at the largest coefficient, which makes two
/// cases exact in floating point: identical inputs return that input
/// bit-for-bit, and a one-hot coefficient vector returns the selected
/// input bit-for-bit.
WeightVector aggregate_weighted(std::span<const WeightVector> weights,
                                std::span<const std::size_t> sizes);

/// General convex combination with non-negative coefficients (normalized
/// internally); same anchoring and exactness guarantees as above.
WeightVector convex_combine(std::span<const WeightVector> weights,
                            std::span<const double> coeffs);

/// Percentage of argmax-correct predictions on the given view, in [0,100].
/// Dropout is disabled; argmax ties resolve to the lowest class index.
double evaluate_accuracy(const WeightVector& weights, const MlpConfig& arch,
                         const ClientDataset& ds, Split view);

/// K x K matrix with entry (k, j) = 1 - Acc(w_j on client k's train view)/100,
/// including the self term j = k. Rows can be computed in parallel (pure
/// reads); workers > 1 shards rows without changing the result.
Matrix weightage_matrix(std::span<const WeightVector> all_weights,
                        std::span<const ClientState> clients,
                        std::size_t workers = 1);

/// Row-normalized weightage blend for client k. A row summing to less than
/// 1e-12 means every model already fits this client's train data, so all of
/// them are equally useful and the uniform mean is returned instead.
WeightVector pre_aggregate(std::size_t k, const Matrix& weightage,
                           std::span<const WeightVector> all_weights);

}  // namespace fedsim
