#include "fedsim/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

using nlohmann::json;

std::string g10(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string gshort(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) bad(where, "unknown key '" + key + "'");
  }
}

std::size_t get_count(const json& v, const std::string& where) {
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() < 1) {
    bad(where, "must be a positive integer");
  }
  return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& where) {
  if (!v.is_number()) bad(where, "must be a number");
  return v.get<double>();
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) bad(where, "must be a string");
  return v.get<std::string>();
}

DomainShiftSpec parse_synthetic(const json& obj, const std::string& where) {
  if (!obj.is_object()) bad(where, "must be an object");
  check_keys(obj, where,
             {"num_clients", "num_classes", "feature_dim",
              "samples_per_client", "shift_scale", "label_skew"});
  DomainShiftSpec spec;
  if (obj.contains("num_clients")) {
    spec.num_clients = get_count(obj["num_clients"], where + ".num_clients");
  }
  if (obj.contains("num_classes")) {
    spec.num_classes = get_count(obj["num_classes"], where + ".num_classes");
  }
  if (obj.contains("feature_dim")) {
    spec.feature_dim = get_count(obj["feature_dim"], where + ".feature_dim");
  }
  if (obj.contains("samples_per_client")) {
    const json& s = obj["samples_per_client"];
    spec.samples_per_client.clear();
    if (s.is_array()) {
      for (const auto& v : s) {
        spec.samples_per_client.push_back(
            get_count(v, where + ".samples_per_client[]"));
      }
    } else {
      spec.samples_per_client.push_back(
          get_count(s, where + ".samples_per_client"));
    }
  }
  if (obj.contains("shift_scale")) {
    spec.shift_scale = get_real(obj["shift_scale"], where + ".shift_scale");
  }
  if (obj.contains("label_skew")) {
    spec.label_skew = get_real(obj["label_skew"], where + ".label_skew");
  }
  return spec;
}

struct RawRun {
  Strategy strategy;
  RunConfig run;
};

RawRun parse_run(const json& obj, const std::string& where,
                 const SgdConfig& base_sgd, std::size_t base_eval_every) {
  if (!obj.is_object()) bad(where, "must be an object");
  check_keys(obj, where,
             {"strategy", "rounds", "periods", "gamma", "epochs",
              "learning_rate", "batch_size", "eval_every"});
  if (!obj.contains("strategy")) bad(where, "missing 'strategy'");
  if (!obj.contains("rounds")) bad(where, "missing 'rounds'");

  RawRun out;
  out.run.sgd = base_sgd;
  out.run.eval_every = base_eval_every;
  out.strategy = parse_strategy(get_string(obj["strategy"], where + ".strategy"));
  out.run.strategy = out.strategy;
  out.run.rounds = get_count(obj["rounds"], where + ".rounds");
  if (obj.contains("periods")) {
    out.run.periods = get_count(obj["periods"], where + ".periods");
  }
  if (obj.contains("gamma")) {
    out.run.gamma = get_real(obj["gamma"], where + ".gamma");
  }
  if (obj.contains("epochs")) {
    out.run.sgd.epochs = get_count(obj["epochs"], where + ".epochs");
  }
  if (obj.contains("learning_rate")) {
    out.run.sgd.learning_rate =
        get_real(obj["learning_rate"], where + ".learning_rate");
  }
  if (obj.contains("batch_size")) {
    out.run.sgd.batch_size = get_count(obj["batch_size"], where + ".batch_size");
  }
  if (obj.contains("eval_every")) {
    out.run.eval_every = get_count(obj["eval_every"], where + ".eval_every");
  }
  return out;
}

void write_results_csv(const std::filesystem::path& path,
                       const PlannedRun& planned, const RunResult& res,
                       std::uint64_t seed) {
  std::ofstream file(path);
  if (!file) throw Error("cannot write " + path.string());
  file << "strategy,seed,lr,gamma,P,E,R,round,global_acc,macro_f1,"
          "weighted_f1,client_accs,transfers\n";
  const RunConfig& rc = planned.run;
  std::string prefix = strategy_name(rc.strategy) + "," +
                       std::to_string(seed) + "," + g10(rc.sgd.learning_rate) +
                       "," + g10(rc.gamma) + "," + std::to_string(rc.periods) +
                       "," + std::to_string(rc.sgd.epochs) + "," +
                       std::to_string(rc.rounds);
  for (const RoundTrace& t : res.traces) {
    file << prefix << ',' << t.round << ',' << g10(t.global_accuracy) << ','
         << g10(t.macro_f1) << ',' << g10(t.weighted_f1) << ",\"[";
    for (std::size_t k = 0; k < t.client_accuracies.size(); ++k) {
      if (k) file << ',';
      file << g10(t.client_accuracies[k]);
    }
    file << "]\"," << t.cumulative_transfers << '\n';
  }
  if (!file) throw Error("failed writing " + path.string());
}

void write_ledger_csv(const std::filesystem::path& path,
                      const CommLedger& ledger) {
  std::ofstream file(path);
  if (!file) throw Error("cannot write " + path.string());
  file << "round,period,from,to,payload_dim\n";
  for (const CommEvent& e : ledger.events) {
    file << e.round << ',';
    if (e.period) file << *e.period;
    file << ',' << e.from << ',' << e.to << ',' << e.payload_dim << '\n';
  }
  if (!file) throw Error("failed writing " + path.string());
}

void write_summary(const std::filesystem::path& path,
                   const PlannedRun& planned, const RunResult& res,
                   std::uint64_t seed) {
  const RunConfig& rc = planned.run;
  const RoundTrace& last = res.traces.back();
  json s;
  s["strategy"] = strategy_name(rc.strategy);
  s["run_name"] = planned.name;
  s["seed"] = seed;
  s["lr"] = rc.sgd.learning_rate;
  s["gamma"] = rc.gamma;
  s["P"] = rc.periods;
  s["E"] = rc.sgd.epochs;
  s["R"] = rc.rounds;
  s["final"] = {{"global_acc", last.global_accuracy},
                {"macro_f1", last.macro_f1},
                {"weighted_f1", last.weighted_f1}};
  s["client_accs"] = last.client_accuracies;
  json thresholds;
  for (double th : {50.0, 75.0, 90.0}) {
    auto hit = rounds_to_threshold(res.traces, th);
    std::string key = gshort(th);
    if (hit) {
      thresholds[key] = *hit;
    } else {
      thresholds[key] = nullptr;
    }
  }
  s["rounds_to_threshold"] = thresholds;
  s["total_transfers"] = res.ledger.total_transfers();
  s["total_payload"] = res.ledger.total_payload();
  s["generated_at"] = utc_now();

  std::ofstream file(path);
  if (!file) throw Error("cannot write " + path.string());
  file << s.dump(2) << '\n';
  if (!file) throw Error("failed writing " + path.string());
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const CliOverrides& overrides) {
  std::ifstream file(path);
  if (!file) throw ConfigError("cannot open config: " + path.string());
  json doc;
  try {
    doc = json::parse(file);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const std::string where = path.filename().string();
  if (!doc.is_object()) bad(where, "config must be a JSON object");
  check_keys(doc, where,
             {"data", "model", "sgd", "run", "sweep", "master_seed",
              "output_dir", "split_ratio", "eval_every"});

  ExperimentConfig cfg;
  if (doc.contains("master_seed")) {
    if (!doc["master_seed"].is_number_unsigned()) {
      bad(where, "'master_seed' must be a non-negative integer");
    }
    cfg.master_seed = doc["master_seed"].get<std::uint64_t>();
  }
  if (overrides.seed) cfg.master_seed = *overrides.seed;

  if (doc.contains("output_dir")) {
    cfg.output_dir = get_string(doc["output_dir"], where + ".output_dir");
  }
  if (overrides.out_dir) cfg.output_dir = *overrides.out_dir;

  if (doc.contains("split_ratio")) {
    cfg.split_ratio = get_real(doc["split_ratio"], where + ".split_ratio");
    if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) {
      bad(where, "'split_ratio' must lie in (0, 1)");
    }
  }

  if (!doc.contains("data") || !doc["data"].is_object()) {
    bad(where, "missing 'data' object");
  }
  const json& data = doc["data"];
  check_keys(data, where + ".data", {"synthetic", "manifest"});
  if (data.contains("synthetic") == data.contains("manifest")) {
    bad(where, "'data' needs exactly one of 'synthetic' or 'manifest'");
  }
  if (data.contains("synthetic")) {
    cfg.synthetic = parse_synthetic(data["synthetic"], where + ".data.synthetic");
    cfg.synthetic->seed = cfg.master_seed;
  } else {
    std::filesystem::path m =
        get_string(data["manifest"], where + ".data.manifest");
    if (m.is_relative()) m = path.parent_path() / m;
    cfg.manifest = m;
  }

  if (doc.contains("model")) {
    const json& model = doc["model"];
    if (!model.is_object()) bad(where, "'model' must be an object");
    check_keys(model, where + ".model", {"hidden_dims", "dropout"});
    if (model.contains("hidden_dims")) {
      if (!model["hidden_dims"].is_array()) {
        bad(where, "'model.hidden_dims' must be an array");
      }
      cfg.model.hidden_dims.clear();
      for (const auto& v : model["hidden_dims"]) {
        cfg.model.hidden_dims.push_back(
            get_count(v, where + ".model.hidden_dims[]"));
      }
    }
    if (model.contains("dropout")) {
      cfg.model.dropout_rate = get_real(model["dropout"], where + ".model.dropout");
    }
  }

  SgdConfig base_sgd;
  if (doc.contains("sgd")) {
    const json& sgd = doc["sgd"];
    if (!sgd.is_object()) bad(where, "'sgd' must be an object");
    check_keys(sgd, where + ".sgd", {"learning_rate", "batch_size", "epochs"});
    if (sgd.contains("learning_rate")) {
      base_sgd.learning_rate =
          get_real(sgd["learning_rate"], where + ".sgd.learning_rate");
    }
    if (sgd.contains("batch_size")) {
      base_sgd.batch_size = get_count(sgd["batch_size"], where + ".sgd.batch_size");
    }
    if (sgd.contains("epochs")) {
      base_sgd.epochs = get_count(sgd["epochs"], where + ".sgd.epochs");
    }
  }
  std::size_t base_eval_every = 1;
  if (doc.contains("eval_every")) {
    base_eval_every = get_count(doc["eval_every"], where + ".eval_every");
  }

  if (!doc.contains("run")) bad(where, "missing 'run'");
  std::vector<RawRun> raw;
  if (doc["run"].is_array()) {
    if (doc["run"].empty()) bad(where, "'run' list is empty");
    for (std::size_t i = 0; i < doc["run"].size(); ++i) {
      raw.push_back(parse_run(doc["run"][i],
                              where + ".run[" + std::to_string(i) + "]",
                              base_sgd, base_eval_every));
    }
  } else {
    raw.push_back(parse_run(doc["run"], where + ".run", base_sgd,
                            base_eval_every));
  }

  // Expand the optional sweep axis into the cross-product of runs.
  std::vector<std::pair<std::string, RunConfig>> expanded;
  if (doc.contains("sweep")) {
    const json& sweep = doc["sweep"];
    if (!sweep.is_object()) bad(where, "'sweep' must be an object");
    check_keys(sweep, where + ".sweep", {"axis", "values"});
    if (!sweep.contains("axis") || !sweep.contains("values")) {
      bad(where, "'sweep' needs 'axis' and 'values'");
    }
    std::string axis = get_string(sweep["axis"], where + ".sweep.axis");
    const json& values = sweep["values"];
    if (!values.is_array() || values.empty()) {
      bad(where, "'sweep.values' must be a non-empty array");
    }
    for (const RawRun& r : raw) {
      for (const auto& v : values) {
        RunConfig rc = r.run;
        std::string name;
        if (axis == "learning_rate") {
          rc.sgd.learning_rate = get_real(v, where + ".sweep.values[]");
          name = strategy_name(rc.strategy) + "_lr" +
                 gshort(rc.sgd.learning_rate);
        } else if (axis == "gamma") {
          rc.gamma = get_real(v, where + ".sweep.values[]");
          name = strategy_name(rc.strategy) + "_gamma" + gshort(rc.gamma);
        } else if (axis == "strategy") {
          rc.strategy = parse_strategy(
              get_string(v, where + ".sweep.values[]"));
          name = strategy_name(rc.strategy);
        } else {
          bad(where, "'sweep.axis' must be one of learning_rate, gamma, "
                     "strategy");
        }
        expanded.emplace_back(std::move(name), rc);
      }
    }
  } else {
    for (const RawRun& r : raw) {
      expanded.emplace_back(strategy_name(r.strategy), r.run);
    }
  }

  // Apply global knobs, then make directory names unique.
  std::map<std::string, std::size_t> seen;
  for (auto& [name, rc] : expanded) {
    rc.master_seed = cfg.master_seed;
    if (overrides.workers) rc.workers = *overrides.workers;
    rc.strict_star_aggregation = overrides.strict_star_aggregation;
    rc.relay_via_server = overrides.relay_via_server;
    try {
      rc.validate();
    } catch (const ConfigError& e) {
      bad(where, "run '" + name + "': " + e.what());
    }
    std::size_t n = ++seen[name];
    if (n > 1) name += "_" + std::to_string(n);
    cfg.runs.push_back({std::move(name), rc});
  }
  return cfg;
}

std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& cfg) {
  Federation fed;
  try {
    if (cfg.synthetic) {
      fed = generate_federation(*cfg.synthetic, cfg.split_ratio);
    } else if (cfg.manifest) {
      fed = load_federation(*cfg.manifest, cfg.split_ratio,
                            cfg.master_seed ^ seed_tag::kSplit);
    } else {
      throw ConfigError("experiment has no data source");
    }
  } catch (const StratificationError& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }

  MlpConfig arch = cfg.model;
  arch.input_dim = fed.clients.front().feature_dim();
  arch.num_classes = fed.num_classes;
  try {
    arch.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }

  std::filesystem::create_directories(cfg.output_dir);
  std::vector<std::filesystem::path> dirs;
  for (const PlannedRun& planned : cfg.runs) {
    RunResult res;
    try {
      res = run_strategy(fed, arch, planned.run);
    } catch (const ProtocolError& e) {
      throw ProtocolError("run '" + planned.name + "' (strategy " +
                          strategy_name(planned.run.strategy) +
                          "): " + e.what());
    }
    std::filesystem::path dir = cfg.output_dir / planned.name;
    std::filesystem::create_directories(dir);
    write_results_csv(dir / "results.csv", planned, res, cfg.master_seed);
    write_ledger_csv(dir / "ledger.csv", res.ledger);
    write_summary(dir / "summary.json", planned, res, cfg.master_seed);
    dirs.push_back(dir);
  }
  return dirs;
}

std::vector<std::filesystem::path> run_experiment(
    const std::filesystem::path& config_path, const CliOverrides& overrides) {
  return run_experiment(load_experiment_config(config_path, overrides));
}

std::string compare_summaries(const std::vector<std::filesystem::path>& paths) {
  struct Row {
    std::string strategy;
    std::string name;
    double acc, macro, weighted;
    std::size_t transfers;
    std::optional<std::size_t> to50;
  };
  std::vector<Row> rows;
  for (const auto& p : paths) {
    std::ifstream file(p);
    if (!file) throw ConfigError("cannot open summary: " + p.string());
    json s;
    try {
      s = json::parse(file);
    } catch (const json::exception& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
    try {
      Row r;
      r.strategy = s.at("strategy").get<std::string>();
      r.name = s.value("run_name", r.strategy);
      r.acc = s.at("final").at("global_acc").get<double>();
      r.macro = s.at("final").at("macro_f1").get<double>();
      r.weighted = s.at("final").at("weighted_f1").get<double>();
      r.transfers = s.at("total_transfers").get<std::size_t>();
      const json& th = s.at("rounds_to_threshold").at("50");
      if (!th.is_null()) r.to50 = th.get<std::size_t>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(p.string() + ": malformed summary: " + e.what());
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) {
                     return a.strategy < b.strategy;
                   });

  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-24s %-12s %10s %10s %12s %10s %10s\n",
                "run", "strategy", "acc", "macro_f1", "weighted_f1",
                "transfers", "to_50");
  out += buf;
  for (const Row& r : rows) {
    std::string to50 = r.to50 ? std::to_string(*r.to50) : "-";
    std::snprintf(buf, sizeof(buf), "%-24s %-12s %10.2f %10.2f %12.2f %10zu %10s\n",
                  r.name.c_str(), r.strategy.c_str(), r.acc, r.macro,
                  r.weighted, r.transfers, to50.c_str());
    out += buf;
  }
  std::cout << out;
  return out;
}

void gen_data(const DomainShiftSpec& spec, const std::filesystem::path& out) {
  Federation fed = generate_federation(spec);
  write_federation(fed, out);
}

}  // namespace fedsim
