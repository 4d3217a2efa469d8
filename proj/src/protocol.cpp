#include "fedsim/protocol.hpp"

#include <algorithm>
#include <thread>

#include "fedsim/errors.hpp"

namespace fedsim {

std::size_t CommLedger::total_payload() const {
  std::size_t sum = 0;
  for (const auto& e : events) sum += e.payload_dim;
  return sum;
}

std::size_t CommLedger::transfers_in_round(std::size_t round) const {
  std::size_t n = 0;
  for (const auto& e : events) n += (e.round == round) ? 1 : 0;
  return n;
}

void log_transfer(CommLedger& ledger, std::size_t round,
                  std::optional<std::size_t> period, std::string from,
                  std::string to, std::size_t payload_dim) {
  ledger.events.push_back(
      {round, period, std::move(from), std::move(to), payload_dim});
}

std::vector<ClientState> make_client_states(const Federation& fed,
                                            const MlpConfig& arch,
                                            const WeightVector& w_init,
                                            std::uint64_t master_seed) {
  if (w_init.dim() != arch.param_count()) {
    throw ShapeError("initial weights do not match the architecture");
  }
  std::vector<ClientState> states;
  states.reserve(fed.num_clients());
  for (const auto& ds : fed.clients) {
    ClientState st;
    st.client_id = ds.client_id;
    st.data = &ds;
    st.arch = arch;
    st.weights = w_init;
    st.rng = RngStream(master_seed ^ fnv1a64(ds.client_id));
    states.push_back(std::move(st));
  }
  return states;
}

WeightVector client_update(ClientState& state, const WeightVector& incoming,
                           const SgdConfig& cfg) {
  if (incoming.dim() != state.arch.param_count()) {
    throw ShapeError("incoming weights do not match the architecture");
  }
  if (state.data->train_idx.empty()) {
    throw ProtocolError("client '" + state.client_id +
                        "' has an empty train view");
  }
  MlpModel model = unflatten(incoming, state.arch);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    model = sgd_epoch(std::move(model), state.data->features,
                      state.data->labels, state.data->view(Split::Train), cfg,
                      state.rng);
  }
  return flatten(model);
}

WeightVector convex_combine(std::span<const WeightVector> weights,
                            std::span<const double> coeffs) {
  if (weights.empty()) throw ProtocolError("nothing to aggregate");
  if (weights.size() != coeffs.size()) {
    throw ShapeError("coefficient count does not match weight count");
  }
  std::size_t dim = weights[0].dim();
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j].dim() != dim) {
      throw ShapeError("weight vectors have mixed dimensions");
    }
    if (!(coeffs[j] >= 0.0)) {
      throw ProtocolError("aggregation coefficients must be non-negative");
    }
    total += coeffs[j];
  }
  if (!(total > 0.0)) {
    throw ProtocolError("aggregation coefficients sum to zero");
  }

  // Anchoring at the largest coefficient and accumulating differences makes
  // identical inputs (and one-hot coefficient vectors) reproduce exactly.
  std::size_t anchor = 0;
  for (std::size_t j = 1; j < weights.size(); ++j) {
    if (coeffs[j] > coeffs[anchor]) anchor = j;
  }
  WeightVector out = weights[anchor];
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (j == anchor) continue;
    double c = coeffs[j] / total;
    if (c == 0.0) continue;
    const auto& w = weights[j].values;
    for (std::size_t i = 0; i < dim; ++i) {
      out.values[i] += c * (w[i] - weights[anchor].values[i]);
    }
  }
  return out;
}

WeightVector aggregate_weighted(std::span<const WeightVector> weights,
                                std::span<const std::size_t> sizes) {
  if (weights.empty()) throw ProtocolError("nothing to aggregate");
  if (weights.size() != sizes.size()) {
    throw ShapeError("size count does not match weight count");
  }
  std::vector<double> coeffs(sizes.size());
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] == 0) {
      throw ProtocolError("aggregation sizes must be positive");
    }
    coeffs[j] = static_cast<double>(sizes[j]);
  }
  return convex_combine(weights, coeffs);
}

double evaluate_accuracy(const WeightVector& weights, const MlpConfig& arch,
                         const ClientDataset& ds, Split view) {
  std::span<const std::size_t> idx = ds.view(view);
  if (idx.empty()) {
    throw ProtocolError("client '" + ds.client_id +
                        "' has an empty evaluation view");
  }
  MlpModel model = unflatten(weights, arch);
  Matrix batch = gather_rows(ds.features, idx);
  std::vector<int> pred = predict_classes(model, batch);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    correct += (pred[i] == ds.labels[idx[i]]) ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(idx.size());
}

Matrix weightage_matrix(std::span<const WeightVector> all_weights,
                        std::span<const ClientState> clients,
                        std::size_t workers) {
  std::size_t K = clients.size();
  if (K < 2) throw ProtocolError("weightage matrix needs at least 2 clients");
  if (all_weights.size() != K) {
    throw ShapeError("weight count does not match client count");
  }
  Matrix M(K, K);
  auto fill_row = [&](std::size_t k) {
    for (std::size_t j = 0; j < K; ++j) {
      double acc = evaluate_accuracy(all_weights[j], clients[k].arch,
                                     *clients[k].data, Split::Train);
      M.at(k, j) = 1.0 - acc / 100.0;
    }
  };
  if (workers <= 1 || K == 1) {
    for (std::size_t k = 0; k < K; ++k) fill_row(k);
  } else {
    std::size_t n = std::min(workers, K);
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < K; k += n) fill_row(k);
      });
    }
    for (auto& th : pool) th.join();
  }
  return M;
}

WeightVector pre_aggregate(std::size_t k, const Matrix& weightage,
                           std::span<const WeightVector> all_weights) {
  if (weightage.rows != all_weights.size() ||
      weightage.cols != all_weights.size()) {
    throw ShapeError("weightage matrix does not match weight count");
  }
  if (k >= all_weights.size()) {
    throw ProtocolError("client index outside the federation");
  }
  std::span<const double> row = weightage.row(k);
  double sum = 0.0;
  for (double v : row) sum += v;
  if (sum < 1e-12) {
    // Every model fits this client's train data; all are equally useful.
    std::vector<double> uniform(all_weights.size(), 1.0);
    return convex_combine(all_weights, uniform);
  }
  return convex_combine(all_weights, row);
}

}  // namespace fedsim
