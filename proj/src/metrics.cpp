#include "fedsim/metrics.hpp"

#include "fedsim/errors.hpp"

namespace fedsim {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw MetricError("cannot merge confusion matrices of different sizes");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(std::span<const int> preds,
                          std::span<const int> truths,
                          std::size_t num_classes) {
  if (preds.size() != truths.size()) {
    throw MetricError("prediction and truth lengths differ");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int p = preds[i];
    int t = truths[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= num_classes ||
        static_cast<std::size_t>(t) >= num_classes) {
      throw MetricError("class index outside [0, C) at position " +
                        std::to_string(i));
    }
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

EvalReport report(const ConfusionMatrix& cm) {
  std::size_t total = cm.total();
  if (total == 0) throw MetricError("confusion matrix holds no samples");
  std::size_t C = cm.num_classes;

  EvalReport rep;
  rep.per_class_f1.resize(C, 0.0);
  std::size_t diag = 0;
  double macro_sum = 0.0;
  double weighted_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = cm.at(c, c);
    std::size_t support = 0;   // row sum: true class c
    std::size_t predicted = 0; // col sum: predicted class c
    for (std::size_t j = 0; j < C; ++j) {
      support += cm.at(c, j);
      predicted += cm.at(j, c);
    }
    diag += tp;
    double f1 = 0.0;
    // F1 = 2 tp / (support + predicted); zero denominator means the class
    // never appears, which scores 0 by convention.
    if (support + predicted > 0) {
      f1 = 200.0 * static_cast<double>(tp) /
           static_cast<double>(support + predicted);
    }
    rep.per_class_f1[c] = f1;
    macro_sum += f1;
    weighted_sum +=
        f1 * static_cast<double>(support) / static_cast<double>(total);
  }
  rep.accuracy = 100.0 * static_cast<double>(diag) / static_cast<double>(total);
  rep.macro_f1 = macro_sum / static_cast<double>(C);
  rep.weighted_f1 = weighted_sum;
  return rep;
}

ConfusionMatrix confusion_on_view(const WeightVector& weights,
                                  const MlpConfig& arch,
                                  const ClientDataset& ds, Split view,
                                  std::size_t num_classes) {
  std::span<const std::size_t> idx = ds.view(view);
  if (idx.empty()) {
    throw MetricError("client '" + ds.client_id +
                      "' has an empty evaluation view");
  }
  MlpModel model = unflatten(weights, arch);
  Matrix batch = gather_rows(ds.features, idx);
  std::vector<int> preds = predict_classes(model, batch);
  std::vector<int> truths(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) truths[i] = ds.labels[idx[i]];
  return confusion(preds, truths, num_classes);
}

EvalReport global_eval(const WeightVector& weights, const MlpConfig& arch,
                       const Federation& fed) {
  if (fed.clients.empty()) throw MetricError("federation has no clients");
  ConfusionMatrix cm(fed.num_classes);
  for (const auto& ds : fed.clients) {
    cm.add(confusion_on_view(weights, arch, ds, Split::Test, fed.num_classes));
  }
  return report(cm);
}

std::optional<std::size_t> rounds_to_threshold(
    std::span<const RoundTrace> trace, double threshold) {
  for (const auto& t : trace) {
    if (t.global_accuracy >= threshold) return t.round;
  }
  return std::nullopt;
}

}  // namespace fedsim
