#pragma once

#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/mlp.hpp"

namespace testutil {

inline bool same_bits(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  if (a.empty()) return true;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline bool same_bits(const fedsim::WeightVector& a,
                      const fedsim::WeightVector& b) {
  return same_bits(a.values, b.values);
}

/// Dataset from explicit rows; by default every row lands in the train
/// view and the test view mirrors it (fine for protocol-level tests).
inline fedsim::ClientDataset make_dataset(std::string id, std::size_t cols,
                                          std::vector<double> values,
                                          std::vector<int> labels) {
  fedsim::ClientDataset ds;
  ds.client_id = std::move(id);
  ds.features = fedsim::Matrix(labels.size(), cols);
  ds.features.data = std::move(values);
  ds.labels = std::move(labels);
  ds.train_idx.resize(ds.labels.size());
  std::iota(ds.train_idx.begin(), ds.train_idx.end(), 0);
  ds.test_idx = ds.train_idx;
  return ds;
}

/// Two well-separated 1-d classes: class 0 near -2, class 1 near +2.
inline fedsim::ClientDataset separable_toy(std::size_t per_class) {
  std::vector<double> values;
  std::vector<int> labels;
  for (std::size_t i = 0; i < per_class; ++i) {
    values.push_back(-2.0 - 0.05 * static_cast<double>(i));
    labels.push_back(0);
  }
  for (std::size_t i = 0; i < per_class; ++i) {
    values.push_back(2.0 + 0.05 * static_cast<double>(i));
    labels.push_back(1);
  }
  return make_dataset("toy", 1, std::move(values), std::move(labels));
}

}  // namespace testutil
