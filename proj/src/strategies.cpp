#include "fedsim/strategies.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

namespace {

std::vector<std::size_t> train_sizes(std::span<const ClientState> states) {
  std::vector<std::size_t> sizes;
  sizes.reserve(states.size());
  for (const auto& st : states) sizes.push_back(st.train_size());
  return sizes;
}

bool should_record(std::size_t round, const RunConfig& cfg) {
  return round % cfg.eval_every == 0 || round == cfg.rounds;
}

/// Runs the per-round body for rounds 1..R, annotating protocol failures
/// with the round they happened in.
template <typename Body>
void rounds_loop(std::size_t rounds, Body&& body) {
  for (std::size_t r = 1; r <= rounds; ++r) {
    try {
      body(r);
    } catch (const ProtocolError& e) {
      throw ProtocolError("round " + std::to_string(r) + ": " + e.what());
    }
  }
}

RoundTrace trace_global(std::size_t round, const WeightVector& w,
                        const MlpConfig& arch, const Federation& fed,
                        const CommLedger& ledger) {
  RoundTrace t;
  t.round = round;
  EvalReport rep = global_eval(w, arch, fed);
  t.global_accuracy = rep.accuracy;
  t.macro_f1 = rep.macro_f1;
  t.weighted_f1 = rep.weighted_f1;
  t.client_accuracies.reserve(fed.num_clients());
  for (const auto& ds : fed.clients) {
    t.client_accuracies.push_back(evaluate_accuracy(w, arch, ds, Split::Test));
  }
  t.cumulative_transfers = ledger.total_transfers();
  return t;
}

RoundTrace trace_per_client(std::size_t round,
                            std::span<const WeightVector> weights,
                            const MlpConfig& arch, const Federation& fed,
                            const CommLedger& ledger) {
  RoundTrace t;
  t.round = round;
  ConfusionMatrix pooled(fed.num_classes);
  t.client_accuracies.reserve(fed.num_clients());
  for (std::size_t k = 0; k < fed.num_clients(); ++k) {
    const auto& ds = fed.clients[k];
    pooled.add(
        confusion_on_view(weights[k], arch, ds, Split::Test, fed.num_classes));
    t.client_accuracies.push_back(
        evaluate_accuracy(weights[k], arch, ds, Split::Test));
  }
  EvalReport rep = report(pooled);
  t.global_accuracy = rep.accuracy;
  t.macro_f1 = rep.macro_f1;
  t.weighted_f1 = rep.weighted_f1;
  t.cumulative_transfers = ledger.total_transfers();
  return t;
}

/// Runs client_update for every client, sharded across worker threads.
/// Each client only touches its own state and output slot, so the result
/// does not depend on the worker count or completion order.
void parallel_updates(std::vector<ClientState>& states,
                      std::span<const WeightVector> incoming,
                      const SgdConfig& sgd, std::size_t workers,
                      std::vector<WeightVector>& out) {
  std::size_t K = states.size();
  out.resize(K);
  std::size_t n = std::min(std::max<std::size_t>(workers, 1), K);
  if (n <= 1) {
    for (std::size_t k = 0; k < K; ++k) {
      out[k] = client_update(states[k], incoming[k], sgd);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < K; k += n) {
          out[k] = client_update(states[k], incoming[k], sgd);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// gamma * a + (1 - gamma) * b, written so that the endpoints and the
/// identical-input case reproduce their operand exactly.
WeightVector ring_merge(const WeightVector& a, const WeightVector& b,
                        double gamma) {
  if (gamma == 1.0) return a;
  if (gamma == 0.0) return b;
  WeightVector out;
  out.values.resize(a.dim());
  if (gamma >= 0.5) {
    double t = 1.0 - gamma;
    for (std::size_t i = 0; i < a.dim(); ++i) {
      out.values[i] = a.values[i] + t * (b.values[i] - a.values[i]);
    }
  } else {
    for (std::size_t i = 0; i < a.dim(); ++i) {
      out.values[i] = b.values[i] + gamma * (a.values[i] - b.values[i]);
    }
  }
  return out;
}

void require_clients(const Federation& fed, std::size_t minimum,
                     const char* what) {
  if (fed.num_clients() < minimum) {
    throw ProtocolError(std::string(what) + " needs at least " +
                        std::to_string(minimum) + " clients");
  }
}

}  // namespace

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kFedAvg: return "fedavg";
    case Strategy::kRingFed: return "ringfed";
    case Strategy::kFedCyclic: return "fed_cyclic";
    case Strategy::kFedStar: return "fed_star";
    case Strategy::kLocalOnly: return "local_only";
    case Strategy::kCentralized: return "centralized";
  }
  throw ConfigError("unknown strategy value");
}

Strategy parse_strategy(const std::string& name) {
  if (name == "fedavg") return Strategy::kFedAvg;
  if (name == "ringfed") return Strategy::kRingFed;
  if (name == "fed_cyclic") return Strategy::kFedCyclic;
  if (name == "fed_star") return Strategy::kFedStar;
  if (name == "local_only") return Strategy::kLocalOnly;
  if (name == "centralized") return Strategy::kCentralized;
  throw ConfigError("unknown strategy '" + name + "'");
}

void RunConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  if (periods < 1) throw ConfigError("periods must be at least 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must lie in [0, 1]");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  sgd.validate();
}

WeightVector initial_weights(const MlpConfig& arch,
                             std::uint64_t master_seed) {
  MlpConfig cfg = arch;
  cfg.seed = splitmix64(master_seed ^ seed_tag::kModelInit);
  return flatten(make_model(cfg));
}

RunResult run_fedavg(const Federation& fed, const MlpConfig& arch,
                     const RunConfig& cfg) {
  cfg.validate();
  require_clients(fed, 1, "fedavg");
  WeightVector w = initial_weights(arch, cfg.master_seed);
  auto states = make_client_states(fed, arch, w, cfg.master_seed);
  const auto sizes = train_sizes(states);
  const std::size_t dim = w.dim();

  RunResult res;
  std::vector<WeightVector> updated(states.size());
  rounds_loop(cfg.rounds, [&](std::size_t r) {
    for (const auto& st : states) {
      log_transfer(res.ledger, r, std::nullopt, kServer, st.client_id, dim);
    }
    for (std::size_t k = 0; k < states.size(); ++k) {
      updated[k] = client_update(states[k], w, cfg.sgd);
    }
    for (const auto& st : states) {
      log_transfer(res.ledger, r, std::nullopt, st.client_id, kServer, dim);
    }
    w = aggregate_weighted(updated, sizes);
    if (should_record(r, cfg)) {
      res.traces.push_back(trace_global(r, w, arch, fed, res.ledger));
    }
  });
  res.final_weights = std::move(w);
  return res;
}

RunResult run_fed_cyclic(const Federation& fed, const MlpConfig& arch,
                         const RunConfig& cfg) {
  cfg.validate();
  require_clients(fed, 1, "fed_cyclic");
  WeightVector w = initial_weights(arch, cfg.master_seed);
  auto states = make_client_states(fed, arch, w, cfg.master_seed);
  const std::size_t K = states.size();
  const std::size_t dim = w.dim();
  RngStream schedule(cfg.master_seed ^ seed_tag::kSchedule);
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);

  RunResult res;
  rounds_loop(cfg.rounds, [&](std::size_t r) {
    if (cfg.permute_cyclic_order) schedule.shuffle(order);
    for (std::size_t pos = 0; pos < K; ++pos) {
      ClientState& st = states[order[pos]];
      w = client_update(st, w, cfg.sgd);
      // One handoff per client; the last visit hands the weights back to
      // the round's first client.
      std::string to = cfg.relay_via_server
                           ? std::string(kServer)
                           : states[order[(pos + 1) % K]].client_id;
      log_transfer(res.ledger, r, std::nullopt, st.client_id, std::move(to),
                   dim);
    }
    if (should_record(r, cfg)) {
      res.traces.push_back(trace_global(r, w, arch, fed, res.ledger));
    }
  });
  res.final_weights = std::move(w);
  return res;
}

RunResult run_fed_star(const Federation& fed, const MlpConfig& arch,
                       const RunConfig& cfg) {
  cfg.validate();
  require_clients(fed, 2, "fed_star");
  WeightVector w = initial_weights(arch, cfg.master_seed);
  auto states = make_client_states(fed, arch, w, cfg.master_seed);
  const std::size_t K = states.size();
  const auto sizes = train_sizes(states);
  const std::size_t dim = w.dim();

  RunResult res;
  std::vector<WeightVector> cur(K);
  std::vector<WeightVector> upd(K);
  rounds_loop(cfg.rounds, [&](std::size_t r) {
    for (std::size_t k = 0; k < K; ++k) {
      log_transfer(res.ledger, r, std::nullopt, kServer, states[k].client_id,
                   dim);
      cur[k] = w;
    }
    for (std::size_t p = 1; p <= cfg.periods; ++p) {
      parallel_updates(states, cur, cfg.sgd, cfg.workers, upd);
      for (std::size_t j = 0; j < K; ++j) {
        for (std::size_t k = 0; k < K; ++k) {
          if (k == j) continue;
          log_transfer(res.ledger, r, p, states[j].client_id,
                       states[k].client_id, dim);
        }
      }
      Matrix M = weightage_matrix(upd, states, cfg.workers);
      for (std::size_t k = 0; k < K; ++k) {
        cur[k] = pre_aggregate(k, M, upd);
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      log_transfer(res.ledger, r, std::nullopt, states[k].client_id, kServer,
                   dim);
    }
    w = aggregate_weighted(cur, sizes);
    if (cfg.strict_star_aggregation) {
      // Literal reading of the source description: the final mean carries
      // an extra 1/K factor, shrinking the weights every round.
      for (double& v : w.values) v /= static_cast<double>(K);
    }
    if (should_record(r, cfg)) {
      res.traces.push_back(trace_global(r, w, arch, fed, res.ledger));
    }
  });
  res.final_weights = std::move(w);
  return res;
}

RunResult run_ringfed(const Federation& fed, const MlpConfig& arch,
                      const RunConfig& cfg) {
  cfg.validate();
  require_clients(fed, 2, "ringfed");
  WeightVector w = initial_weights(arch, cfg.master_seed);
  auto states = make_client_states(fed, arch, w, cfg.master_seed);
  const std::size_t K = states.size();
  const auto sizes = train_sizes(states);
  const std::size_t dim = w.dim();

  RunResult res;
  std::vector<WeightVector> cur(K);
  std::vector<WeightVector> upd(K);
  rounds_loop(cfg.rounds, [&](std::size_t r) {
    for (std::size_t k = 0; k < K; ++k) {
      log_transfer(res.ledger, r, std::nullopt, kServer, states[k].client_id,
                   dim);
      cur[k] = w;
    }
    for (std::size_t p = 1; p <= cfg.periods; ++p) {
      parallel_updates(states, cur, cfg.sgd, cfg.workers, upd);
      for (std::size_t k = 0; k < K; ++k) {
        std::size_t prev = (k + K - 1) % K;
        log_transfer(res.ledger, r, p, states[prev].client_id,
                     states[k].client_id, dim);
        cur[k] = ring_merge(upd[k], upd[prev], cfg.gamma);
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      log_transfer(res.ledger, r, std::nullopt, states[k].client_id, kServer,
                   dim);
    }
    w = aggregate_weighted(cur, sizes);
    if (should_record(r, cfg)) {
      res.traces.push_back(trace_global(r, w, arch, fed, res.ledger));
    }
  });
  res.final_weights = std::move(w);
  return res;
}

RunResult run_local_only(const Federation& fed, const MlpConfig& arch,
                         const RunConfig& cfg) {
  cfg.validate();
  require_clients(fed, 1, "local_only");
  WeightVector w0 = initial_weights(arch, cfg.master_seed);
  auto states = make_client_states(fed, arch, w0, cfg.master_seed);

  RunResult res;
  res.client_weights.assign(states.size(), w0);
  rounds_loop(cfg.rounds, [&](std::size_t r) {
    for (std::size_t k = 0; k < states.size(); ++k) {
      res.client_weights[k] =
          client_update(states[k], res.client_weights[k], cfg.sgd);
    }
    if (should_record(r, cfg)) {
      res.traces.push_back(
          trace_per_client(r, res.client_weights, arch, fed, res.ledger));
    }
  });
  return res;
}

RunResult run_centralized(const Federation& fed, const MlpConfig& arch,
                          const RunConfig& cfg) {
  cfg.validate();
  require_clients(fed, 1, "centralized");
  // With a single client the pooled dataset keeps that client's id, so the
  // training stream (and hence the whole run) matches local_only exactly.
  ClientDataset pooled = pool_clients(
      fed, fed.num_clients() == 1 ? fed.clients[0].client_id : "pooled");
  WeightVector w = initial_weights(arch, cfg.master_seed);
  ClientState st;
  st.client_id = pooled.client_id;
  st.data = &pooled;
  st.arch = arch;
  st.weights = w;
  st.rng = RngStream(cfg.master_seed ^ fnv1a64(pooled.client_id));

  RunResult res;
  rounds_loop(cfg.rounds, [&](std::size_t r) {
    w = client_update(st, w, cfg.sgd);
    if (should_record(r, cfg)) {
      res.traces.push_back(trace_global(r, w, arch, fed, res.ledger));
    }
  });
  res.final_weights = std::move(w);
  return res;
}

RunResult run_strategy(const Federation& fed, const MlpConfig& arch,
                       const RunConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::kFedAvg: return run_fedavg(fed, arch, cfg);
    case Strategy::kRingFed: return run_ringfed(fed, arch, cfg);
    case Strategy::kFedCyclic: return run_fed_cyclic(fed, arch, cfg);
    case Strategy::kFedStar: return run_fed_star(fed, arch, cfg);
    case Strategy::kLocalOnly: return run_local_only(fed, arch, cfg);
    case Strategy::kCentralized: return run_centralized(fed, arch, cfg);
  }
  throw ConfigError("unknown strategy value");
}

}  // namespace fedsim
