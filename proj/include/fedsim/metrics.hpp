#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedsim/strategies.hpp"

namespace fedsim {

struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::size_t> counts;  // row = true class, col = predicted

  explicit ConfusionMatrix(std::size_t c = 0)
      : num_classes(c), counts(c * c, 0) {}

  std::size_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * num_classes + pred];
  }
  std::size_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * num_classes + pred];
  }
  std::size_t total() const;
  void add(const ConfusionMatrix& other);
};

struct EvalReport {
  double accuracy = 0.0;     // percent
  double macro_f1 = 0.0;     // percent
  double weighted_f1 = 0.0;  // percent
  std::vector<double> per_class_f1;
};

ConfusionMatrix confusion(std::span<const int> preds,
                          std::span<const int> truths,
                          std::size_t num_classes);

/// Summarizes a confusion matrix. Per-class F1 uses the convention that a
/// class with no support and no predictions scores 0; macro F1 averages
/// over all classes (such classes pull it down), while weighted F1 weights
/// by true support so they contribute nothing there.
EvalReport report(const ConfusionMatrix& cm);

ConfusionMatrix confusion_on_view(const WeightVector& weights,
                                  const MlpConfig& arch,
                                  const ClientDataset& ds, Split view,
                                  std::size_t num_classes);

/// Evaluates one model on the union of every client's test view.
EvalReport global_eval(const WeightVector& weights, const MlpConfig& arch,
                       const Federation& fed);

/// First recorded round whose global accuracy reaches the threshold.
std::optional<std::size_t> rounds_to_threshold(
    std::span<const RoundTrace> trace, double threshold);

}  // namespace fedsim
