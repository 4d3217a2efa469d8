#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedsim/matrix.hpp"

namespace fedsim {

enum class Split { Train, Test };

/// One client's labeled feature matrix with a train/test partition.
struct ClientDataset {
  std::string client_id;
  Matrix features;          // n x d
  std::vector<int> labels;  // n, dense class indices
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;

  std::size_t size() const { return features.rows; }
  std::size_t feature_dim() const { return features.cols; }

  std::span<const std::size_t> view(Split s) const {
    return s == Split::Train ? std::span<const std::size_t>(train_idx)
                             : std::span<const std::size_t>(test_idx);
  }
};

struct Federation {
  std::vector<ClientDataset> clients;
  std::size_t num_classes = 0;
  std::vector<std::string> class_labels;  // token per dense class index

  std::size_t num_clients() const { return clients.size(); }
};

/// Parameters of the synthetic multi-source generator. Every client draws
/// samples around shared class prototypes and then passes them through a
/// client-specific affine map whose magnitude is shift_scale; label_skew
/// controls a Dirichlet-style tilt of per-client class proportions.
struct DomainShiftSpec {
  std::size_t num_clients = 8;
  std::size_t num_classes = 31;
  std::size_t feature_dim = 32;
  std::vector<std::size_t> samples_per_client{200};  // one entry broadcasts
  double shift_scale = 1.0;
  double label_skew = 0.0;  // in [0, 1); 0 means balanced classes
  std::uint64_t seed = 0;

  std::size_t samples_for(std::size_t client) const;
  void validate() const;
};

Federation generate_federation(const DomainShiftSpec& spec,
                               double split_ratio = 0.8);

/// Reads a comma-separated feature file (optional header line; features then
/// a trailing label token per row). Labels map to dense indices in
/// first-appearance order. The returned dataset has no split assigned.
ClientDataset load_features(const std::filesystem::path& path,
                            const std::string& client_id);

/// Stratified split: per class, ceil(ratio * n_c) rows go to train and the
/// remainder to test, shuffled deterministically under seed.
ClientDataset split_train_test(ClientDataset ds, double ratio,
                               std::uint64_t seed);

/// Loads a federation manifest: feature files per client plus the shared
/// class universe. Splits are (re)assigned from split_seed at the given
/// ratio. Paths in the manifest resolve relative to its directory.
Federation load_federation(const std::filesystem::path& manifest_path,
                           double split_ratio, std::uint64_t split_seed);

/// Writes one client's rows in the feature-file format (17 significant
/// digits, so values round-trip losslessly).
void write_feature_file(const std::filesystem::path& path,
                        const ClientDataset& ds,
                        std::span<const std::string> class_labels);

/// Writes manifest.json plus one feature file per client into out_dir.
void write_federation(const Federation& fed,
                      const std::filesystem::path& out_dir);

/// Concatenates all clients' rows into a single dataset (row order follows
/// federation order); train/test views are the unions of the per-client
/// views.
ClientDataset pool_clients(const Federation& fed, const std::string& pooled_id);

}  // namespace fedsim
