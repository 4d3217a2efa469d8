#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

/// Architecture of the fully connected classifier head.
struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims{1024, 256};
  std::size_t num_classes = 31;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;

  /// [input_dim, hidden..., num_classes].
  std::vector<std::size_t> layer_dims() const;

  /// Total parameter count: sum of (d_in + 1) * d_out per layer.
  std::size_t param_count() const;

  void validate() const;
};

struct LayerParams {
  Matrix weights;            // d_in x d_out
  std::vector<double> bias;  // d_out
};

struct MlpModel {
  MlpConfig config;
  std::vector<LayerParams> layers;
};

/// Flattened model parameters; the unit every protocol exchanges.
struct WeightVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }

  static WeightVector zeros(std::size_t n) {
    return WeightVector{std::vector<double>(n, 0.0)};
  }
};

struct SgdConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 3;

  void validate() const;
};

/// Builds a model with Glorot-uniform weights and zero biases, drawn from
/// config.seed.
MlpModel make_model(const MlpConfig& config);

/// Class probabilities for a batch (rows sum to 1). Dropout masks are drawn
/// from rng only when training is set and the model has a nonzero dropout
/// rate; inference calls may pass rng = nullptr.
Matrix forward(const MlpModel& model, const Matrix& batch, bool training,
               RngStream* rng = nullptr);

/// Mean cross-entropy loss over the batch and its gradient with respect to
/// every parameter, in flatten() order. Runs in training mode, so dropout
/// masks are drawn from rng when the model uses dropout.
std::pair<double, WeightVector> loss_and_grad(const MlpModel& model,
                                              const Matrix& batch,
                                              std::span<const int> labels,
                                              RngStream& rng);

/// One pass of minibatch SGD over the given row view of (features, labels):
/// rng-shuffled order, batches of cfg.batch_size with the last partial batch
/// kept, update w <- w - lr * grad per batch.
MlpModel sgd_epoch(MlpModel model, const Matrix& features,
                   std::span<const int> labels,
                   std::span<const std::size_t> view, const SgdConfig& cfg,
                   RngStream& rng);

/// Per layer: weights row-major, then bias.
WeightVector flatten(const MlpModel& model);
MlpModel unflatten(const WeightVector& vec, const MlpConfig& config);

/// w -= learning_rate * grad, grad in flatten() order.
void apply_gradient(MlpModel& model, const WeightVector& grad,
                    double learning_rate);

/// Argmax predictions with ties broken toward the lowest class index.
std::vector<int> predict_classes(const MlpModel& model, const Matrix& batch);

}  // namespace fedsim
