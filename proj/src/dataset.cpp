#include "fedsim/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

constexpr double kSampleNoiseSd = 0.5;  // spread around class prototypes
constexpr double kOffsetSd = 0.5;       // per-client offset, scaled by shift

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool parse_double(const std::string& tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

/// Shared token -> dense index mapping. When frozen, unseen tokens are a
/// parse error instead of getting a fresh index.
struct LabelMap {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;
  bool frozen = false;

  int lookup(const std::string& tok, const std::filesystem::path& path,
             std::size_t line_no) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    if (frozen) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": unknown label '" + tok + "'");
    }
    int id = static_cast<int>(tokens.size());
    tokens.push_back(tok);
    index.emplace(tok, id);
    return id;
  }
};

ClientDataset load_mapped(const std::filesystem::path& path,
                          const std::string& client_id, LabelMap& map) {
  std::ifstream file(path);
  if (!file) throw ParseError("cannot open feature file: " + path.string());

  std::vector<double> values;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  std::size_t expected_fields = 0;
  bool saw_content = false;

  while (std::getline(file, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_fields(line);

    if (!saw_content) {
      saw_content = true;
      if (fields.size() < 2) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": need at least one feature column plus a label");
      }
      expected_fields = fields.size();
      // Header heuristic: if any feature-position field is not numeric,
      // the first line names the columns and carries no data.
      bool header = false;
      for (std::size_t i = 0; i + 1 < fields.size(); ++i) {
        double v;
        if (!parse_double(fields[i], v)) {
          header = true;
          break;
        }
      }
      if (header) continue;
    }

    if (fields.size() != expected_fields) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected " + std::to_string(expected_fields) +
                       " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i + 1 < fields.size(); ++i) {
      double v;
      if (!parse_double(fields[i], v)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": field " + std::to_string(i + 1) +
                         " is not a finite number: '" + fields[i] + "'");
      }
      values.push_back(v);
    }
    const std::string& tok = fields.back();
    if (tok.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": empty label");
    }
    labels.push_back(map.lookup(tok, path, line_no));
  }

  if (labels.empty()) {
    throw ParseError(path.string() + ": no data rows");
  }

  ClientDataset ds;
  ds.client_id = client_id;
  std::size_t d = expected_fields - 1;
  ds.features = Matrix(labels.size(), d);
  ds.features.data = std::move(values);
  ds.labels = std::move(labels);
  return ds;
}

/// Largest-remainder apportionment of n into C buckets proportional to p.
/// Ties in the fractional parts resolve toward lower class indices.
std::vector<std::size_t> apportion(std::size_t n, std::span<const double> p) {
  std::size_t c = p.size();
  std::vector<std::size_t> counts(c, 0);
  std::vector<std::pair<double, std::size_t>> frac(c);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < c; ++i) {
    double share = static_cast<double>(n) * p[i];
    counts[i] = static_cast<std::size_t>(std::floor(share));
    frac[i] = {share - std::floor(share), i};
    assigned += counts[i];
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
    counts[frac[i % c].second] += 1;
  }
  return counts;
}

/// A class holding exactly one sample cannot be stratified, so its sample
/// moves to the currently largest class. Targets end with at least two
/// samples, so one ascending pass never creates new singletons.
void absorb_singletons(std::vector<std::size_t>& counts) {
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] != 1) continue;
    std::size_t best = counts.size();
    for (std::size_t j = 0; j < counts.size(); ++j) {
      if (j == c) continue;
      if (best == counts.size() || counts[j] > counts[best]) best = j;
    }
    counts[c] = 0;
    counts[best] += 1;
  }
}

}  // namespace

std::size_t DomainShiftSpec::samples_for(std::size_t client) const {
  if (samples_per_client.size() == 1) return samples_per_client[0];
  return samples_per_client.at(client);
}

void DomainShiftSpec::validate() const {
  if (num_clients < 1) throw ConfigError("num_clients must be at least 1");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (feature_dim < 1) throw ConfigError("feature_dim must be at least 1");
  if (samples_per_client.size() != 1 &&
      samples_per_client.size() != num_clients) {
    throw ConfigError(
        "samples_per_client must have one entry or one per client");
  }
  if (!(shift_scale >= 0.0) || !std::isfinite(shift_scale)) {
    throw ConfigError("shift_scale must be finite and non-negative");
  }
  if (!(label_skew >= 0.0 && label_skew < 1.0)) {
    throw ConfigError("label_skew must lie in [0, 1)");
  }
  for (std::size_t k = 0; k < num_clients; ++k) {
    std::size_t n = samples_for(k);
    if (n < 2) {
      throw ConfigError("client " + std::to_string(k) +
                        " needs at least 2 samples");
    }
    if (label_skew == 0.0 && n < num_classes) {
      throw StratificationError(
          "client " + std::to_string(k) + " has " + std::to_string(n) +
          " samples but balanced generation needs at least one per class (" +
          std::to_string(num_classes) + ")");
    }
  }
}

Federation generate_federation(const DomainShiftSpec& spec,
                               double split_ratio) {
  spec.validate();
  const std::size_t C = spec.num_classes;
  const std::size_t d = spec.feature_dim;

  RngStream proto_rng(spec.seed ^ seed_tag::kPrototypes);
  Matrix prototypes(C, d);
  for (double& v : prototypes.data) v = proto_rng.normal();

  Federation fed;
  fed.num_classes = C;
  fed.class_labels.reserve(C);
  for (std::size_t c = 0; c < C; ++c) {
    fed.class_labels.push_back(std::to_string(c));
  }

  const double mix = spec.shift_scale / std::sqrt(static_cast<double>(d));
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    std::string id = "client_" + std::to_string(k);
    RngStream rng(spec.seed ^ seed_tag::kClientData ^ fnv1a64(id));
    std::size_t n = spec.samples_for(k);

    std::vector<double> props(C, 1.0 / static_cast<double>(C));
    if (spec.label_skew > 0.0) {
      double alpha = (1.0 - spec.label_skew) / spec.label_skew;
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        props[c] = rng.gamma(alpha);
        total += props[c];
      }
      for (double& p : props) p /= total;
    }
    std::vector<std::size_t> counts = apportion(n, props);
    if (spec.label_skew > 0.0) absorb_singletons(counts);

    // The client's domain map is drawn before any samples so that the
    // stream position of sample noise does not depend on shift_scale.
    Matrix G(d, d);
    for (double& v : G.data) v = rng.normal();
    std::vector<double> offset(d);
    for (double& v : offset) v = spec.shift_scale * kOffsetSd * rng.normal();

    ClientDataset ds;
    ds.client_id = id;
    ds.features = Matrix(n, d);
    ds.labels.reserve(n);
    std::vector<double> x(d);
    std::size_t row = 0;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < counts[c]; ++s, ++row) {
        for (std::size_t j = 0; j < d; ++j) {
          x[j] = prototypes.at(c, j) + kSampleNoiseSd * rng.normal();
        }
        for (std::size_t j = 0; j < d; ++j) {
          double mixed = 0.0;
          for (std::size_t i = 0; i < d; ++i) mixed += G.at(j, i) * x[i];
          ds.features.at(row, j) = x[j] + mix * mixed + offset[j];
        }
        ds.labels.push_back(static_cast<int>(c));
      }
    }

    fed.clients.push_back(split_train_test(
        std::move(ds), split_ratio, spec.seed ^ seed_tag::kSplit ^ fnv1a64(id)));
  }
  return fed;
}

ClientDataset load_features(const std::filesystem::path& path,
                            const std::string& client_id) {
  LabelMap map;
  return load_mapped(path, client_id, map);
}

ClientDataset split_train_test(ClientDataset ds, double ratio,
                               std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split ratio must lie in (0, 1)");
  }
  std::size_t n = ds.size();
  if (ds.labels.size() != n) {
    throw ShapeError("label count does not match feature rows");
  }

  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < n; ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  RngStream rng(seed);
  ds.train_idx.clear();
  ds.test_idx.clear();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() == 1) {
      throw StratificationError(
          "client '" + ds.client_id + "': class " + std::to_string(c) +
          " has a single sample and cannot appear in both views");
    }
    rng.shuffle(rows);
    // ceil with a small backoff so that exact products like 0.8 * 5 = 4
    // are not pushed up by representation error.
    double want = ratio * static_cast<double>(rows.size());
    auto take = static_cast<std::size_t>(std::ceil(want - 1e-12));
    take = std::min(std::max<std::size_t>(take, 1), rows.size() - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      (i < take ? ds.train_idx : ds.test_idx).push_back(rows[i]);
    }
  }
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  std::sort(ds.test_idx.begin(), ds.test_idx.end());
  return ds;
}

Federation load_federation(const std::filesystem::path& manifest_path,
                           double split_ratio, std::uint64_t split_seed) {
  std::ifstream file(manifest_path);
  if (!file) {
    throw ParseError("cannot open manifest: " + manifest_path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(file);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw ParseError(manifest_path.string() + ": manifest must be an object");
  }
  for (const auto& [key, _] : doc.items()) {
    if (key != "labels" && key != "clients" && key != "num_classes") {
      throw ParseError(manifest_path.string() + ": unknown manifest key '" +
                       key + "'");
    }
  }

  LabelMap map;
  if (doc.contains("labels")) {
    if (!doc["labels"].is_array()) {
      throw ParseError(manifest_path.string() + ": 'labels' must be an array");
    }
    for (const auto& tok : doc["labels"]) {
      if (!tok.is_string()) {
        throw ParseError(manifest_path.string() +
                         ": 'labels' entries must be strings");
      }
      std::string t = tok.get<std::string>();
      if (map.index.count(t)) {
        throw ParseError(manifest_path.string() + ": duplicate label '" + t +
                         "'");
      }
      map.lookup(t, manifest_path, 0);
    }
    map.frozen = true;
  }

  if (!doc.contains("clients") || !doc["clients"].is_array() ||
      doc["clients"].empty()) {
    throw ParseError(manifest_path.string() +
                     ": manifest needs a non-empty 'clients' array");
  }

  Federation fed;
  std::unordered_set<std::string> seen_ids;
  std::filesystem::path base = manifest_path.parent_path();
  for (const auto& entry : doc["clients"]) {
    if (!entry.is_object() || !entry.contains("client_id") ||
        !entry.contains("features") || !entry["client_id"].is_string() ||
        !entry["features"].is_string()) {
      throw ParseError(manifest_path.string() +
                       ": each client needs string fields "
                       "'client_id' and 'features'");
    }
    for (const auto& [key, _] : entry.items()) {
      if (key != "client_id" && key != "features") {
        throw ParseError(manifest_path.string() + ": unknown client key '" +
                         key + "'");
      }
    }
    std::string id = entry["client_id"].get<std::string>();
    if (id.empty() || !seen_ids.insert(id).second) {
      throw ParseError(manifest_path.string() +
                       ": client ids must be non-empty and unique ('" + id +
                       "')");
    }
    std::filesystem::path f = base / entry["features"].get<std::string>();
    ClientDataset ds = load_mapped(f, id, map);
    fed.clients.push_back(
        split_train_test(std::move(ds), split_ratio, split_seed ^ fnv1a64(id)));
  }

  fed.num_classes = map.tokens.size();
  fed.class_labels = map.tokens;
  if (doc.contains("num_classes")) {
    if (!doc["num_classes"].is_number_unsigned() ||
        doc["num_classes"].get<std::size_t>() != fed.num_classes) {
      throw ParseError(manifest_path.string() +
                       ": 'num_classes' disagrees with the label universe");
    }
  }
  for (const auto& ds : fed.clients) {
    if (ds.feature_dim() != fed.clients.front().feature_dim()) {
      throw ParseError("client '" + ds.client_id +
                       "' has a different feature width than '" +
                       fed.clients.front().client_id + "'");
    }
  }
  return fed;
}

void write_feature_file(const std::filesystem::path& path,
                        const ClientDataset& ds,
                        std::span<const std::string> class_labels) {
  std::ofstream file(path);
  if (!file) throw Error("cannot write feature file: " + path.string());
  std::size_t d = ds.feature_dim();
  for (std::size_t j = 0; j < d; ++j) file << 'f' << j << ',';
  file << "label\n";
  char buf[48];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features.at(i, j));
      file << buf << ',';
    }
    auto y = static_cast<std::size_t>(ds.labels[i]);
    if (y >= class_labels.size()) {
      throw LabelError("label index " + std::to_string(y) +
                       " outside the class universe");
    }
    file << class_labels[y] << '\n';
  }
  if (!file) throw Error("failed writing feature file: " + path.string());
}

void write_federation(const Federation& fed,
                      const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["num_classes"] = fed.num_classes;
  manifest["labels"] = fed.class_labels;
  auto& clients = manifest["clients"] = nlohmann::json::array();
  for (const auto& ds : fed.clients) {
    std::string file = ds.client_id + ".csv";
    write_feature_file(out_dir / file, ds, fed.class_labels);
    clients.push_back({{"client_id", ds.client_id}, {"features", file}});
  }
  std::ofstream file(out_dir / "manifest.json");
  if (!file) {
    throw Error("cannot write manifest: " + (out_dir / "manifest.json").string());
  }
  file << manifest.dump(2) << '\n';
}

ClientDataset pool_clients(const Federation& fed,
                           const std::string& pooled_id) {
  if (fed.clients.empty()) throw ProtocolError("cannot pool an empty federation");
  std::size_t d = fed.clients.front().feature_dim();
  std::size_t total = 0;
  for (const auto& ds : fed.clients) {
    if (ds.feature_dim() != d) {
      throw ShapeError("clients disagree on feature width");
    }
    total += ds.size();
  }
  ClientDataset out;
  out.client_id = pooled_id;
  out.features = Matrix(total, d);
  out.labels.reserve(total);
  std::size_t base = 0;
  for (const auto& ds : fed.clients) {
    std::copy(ds.features.data.begin(), ds.features.data.end(),
              out.features.data.begin() + static_cast<std::ptrdiff_t>(base * d));
    out.labels.insert(out.labels.end(), ds.labels.begin(), ds.labels.end());
    for (std::size_t i : ds.train_idx) out.train_idx.push_back(base + i);
    for (std::size_t i : ds.test_idx) out.test_idx.push_back(base + i);
    base += ds.size();
  }
  return out;
}

}  // namespace fedsim
