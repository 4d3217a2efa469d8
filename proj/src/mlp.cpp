#include "fedsim/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedsim/errors.hpp"

namespace fedsim {

std::vector<std::size_t> MlpConfig::layer_dims() const {
  std::vector<std::size_t> dims;
  dims.reserve(hidden_dims.size() + 2);
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(num_classes);
  return dims;
}

std::size_t MlpConfig::param_count() const {
  const auto dims = layer_dims();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    total += (dims[l] + 1) * dims[l + 1];
  }
  return total;
}

void MlpConfig::validate() const {
  if (input_dim < 1) throw ShapeError("MlpConfig: input_dim must be >= 1");
  for (std::size_t d : hidden_dims) {
    if (d < 1) throw ShapeError("MlpConfig: hidden dims must be >= 1");
  }
  if (num_classes < 1) throw ShapeError("MlpConfig: num_classes must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ShapeError("MlpConfig: dropout_rate must be in [0, 1)");
  }
}

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0)) {
    throw ShapeError("SgdConfig: learning_rate must be >= 0");
  }
  if (batch_size < 1) throw ShapeError("SgdConfig: batch_size must be >= 1");
  if (epochs < 1) throw ShapeError("SgdConfig: epochs must be >= 1");
}

MlpModel make_model(const MlpConfig& config) {
  config.validate();
  RngStream rng(config.seed);
  MlpModel model{config, {}};
  const auto dims = config.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t d_in = dims[l];
    const std::size_t d_out = dims[l + 1];
    LayerParams layer{Matrix(d_in, d_out), std::vector<double>(d_out, 0.0)};
    const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    for (double& w : layer.weights.data) {
      w = rng.uniform(-bound, bound);
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

namespace {

// Per-layer intermediates kept for backpropagation.
struct ForwardPass {
  std::vector<Matrix> pre_acts;  // z_l, one per layer
  std::vector<Matrix> acts;      // post ReLU+dropout, hidden layers only
  std::vector<Matrix> masks;     // scaled dropout masks, hidden layers only
  Matrix probs;
};

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto z = logits.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      const double e = std::exp(z[j] - m);
      p.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < logits.cols; ++j) {
      p.at(i, j) /= sum;
    }
  }
  return p;
}

ForwardPass run_forward(const MlpModel& model, const Matrix& batch,
                        bool training, RngStream* rng) {
  if (batch.cols != model.config.input_dim) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols) +
                     " columns, model expects " +
                     std::to_string(model.config.input_dim));
  }
  const double p_drop = model.config.dropout_rate;
  const bool use_dropout = training && p_drop > 0.0;
  if (use_dropout && rng == nullptr) {
    throw Error("forward: training with dropout requires an rng stream");
  }

  ForwardPass pass;
  const std::size_t num_layers = model.layers.size();
  const Matrix* cur = &batch;
  for (std::size_t l = 0; l < num_layers; ++l) {
    Matrix z = matmul(*cur, model.layers[l].weights);
    add_row_vector(z, model.layers[l].bias);
    if (l + 1 < num_layers) {
      Matrix a(z.rows, z.cols);
      for (std::size_t i = 0; i < z.data.size(); ++i) {
        a.data[i] = z.data[i] > 0.0 ? z.data[i] : 0.0;
      }
      Matrix mask;
      if (use_dropout) {
        // Inverted dropout: surviving units are scaled by 1/(1-p) at train
        // time so evaluation needs no rescaling.
        const double scale = 1.0 / (1.0 - p_drop);
        mask = Matrix(a.rows, a.cols);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
          mask.data[i] = rng->uniform01() >= p_drop ? scale : 0.0;
          a.data[i] *= mask.data[i];
        }
      }
      pass.pre_acts.push_back(std::move(z));
      pass.masks.push_back(std::move(mask));
      pass.acts.push_back(std::move(a));
      cur = &pass.acts.back();
    } else {
      pass.probs = softmax_rows(z);
      pass.pre_acts.push_back(std::move(z));
    }
  }
  return pass;
}

// Mean of -log softmax(z)[y], computed in log space.
double mean_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto z = logits.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    total += -(z[static_cast<std::size_t>(labels[i])] - m - std::log(sum));
  }
  return total / static_cast<double>(logits.rows);
}

void check_labels(std::span<const int> labels, std::size_t num_classes,
                  std::size_t batch_rows) {
  if (labels.size() != batch_rows) {
    throw ShapeError("labels: length does not match batch rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

Matrix forward(const MlpModel& model, const Matrix& batch, bool training,
               RngStream* rng) {
  return run_forward(model, batch, training, rng).probs;
}

std::pair<double, WeightVector> loss_and_grad(const MlpModel& model,
                                              const Matrix& batch,
                                              std::span<const int> labels,
                                              RngStream& rng) {
  check_labels(labels, model.config.num_classes, batch.rows);
  if (batch.rows == 0) throw ShapeError("loss_and_grad: empty batch");

  ForwardPass pass = run_forward(model, batch, true, &rng);
  const std::size_t num_layers = model.layers.size();
  const double inv_n = 1.0 / static_cast<double>(batch.rows);
  const double loss = mean_cross_entropy(pass.pre_acts.back(), labels);

  // dL/dz at the softmax layer: (p - onehot(y)) / n.
  Matrix dz = pass.probs;
  for (std::size_t i = 0; i < dz.rows; ++i) {
    dz.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
  }
  for (double& v : dz.data) v *= inv_n;

  std::vector<Matrix> grad_w(num_layers);
  std::vector<std::vector<double>> grad_b(num_layers);
  for (std::size_t l = num_layers; l-- > 0;) {
    const Matrix& a_prev = (l == 0) ? batch : pass.acts[l - 1];
    grad_w[l] = matmul_tn(a_prev, dz);
    grad_b[l] = column_sums(dz);
    if (l > 0) {
      Matrix da = matmul_nt(dz, model.layers[l].weights);
      const Matrix& mask = pass.masks[l - 1];
      if (!mask.data.empty()) {
        for (std::size_t i = 0; i < da.data.size(); ++i) {
          da.data[i] *= mask.data[i];
        }
      }
      const Matrix& z_prev = pass.pre_acts[l - 1];
      for (std::size_t i = 0; i < da.data.size(); ++i) {
        da.data[i] = z_prev.data[i] > 0.0 ? da.data[i] : 0.0;
      }
      dz = std::move(da);
    }
  }

  WeightVector grad;
  grad.values.reserve(model.config.param_count());
  for (std::size_t l = 0; l < num_layers; ++l) {
    grad.values.insert(grad.values.end(), grad_w[l].data.begin(),
                       grad_w[l].data.end());
    grad.values.insert(grad.values.end(), grad_b[l].begin(), grad_b[l].end());
  }
  return {loss, std::move(grad)};
}

MlpModel sgd_epoch(MlpModel model, const Matrix& features,
                   std::span<const int> labels,
                   std::span<const std::size_t> view, const SgdConfig& cfg,
                   RngStream& rng) {
  cfg.validate();
  if (view.empty()) throw ShapeError("sgd_epoch: empty training view");

  std::vector<std::size_t> order(view.begin(), view.end());
  rng.shuffle(order);

  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(start + cfg.batch_size, order.size());
    const std::span<const std::size_t> rows(order.data() + start, end - start);
    Matrix xb = gather_rows(features, rows);
    std::vector<int> yb(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      yb[i] = labels[rows[i]];
    }
    auto [loss, grad] = loss_and_grad(model, xb, yb, rng);
    (void)loss;
    apply_gradient(model, grad, cfg.learning_rate);
  }
  return model;
}

WeightVector flatten(const MlpModel& model) {
  WeightVector out;
  out.values.reserve(model.config.param_count());
  for (const LayerParams& layer : model.layers) {
    out.values.insert(out.values.end(), layer.weights.data.begin(),
                      layer.weights.data.end());
    out.values.insert(out.values.end(), layer.bias.begin(), layer.bias.end());
  }
  return out;
}

MlpModel unflatten(const WeightVector& vec, const MlpConfig& config) {
  config.validate();
  if (vec.dim() != config.param_count()) {
    throw ShapeError("unflatten: vector has " + std::to_string(vec.dim()) +
                     " values, config expects " +
                     std::to_string(config.param_count()));
  }
  MlpModel model{config, {}};
  const auto dims = config.layer_dims();
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t d_in = dims[l];
    const std::size_t d_out = dims[l + 1];
    LayerParams layer{Matrix(d_in, d_out), std::vector<double>(d_out)};
    std::copy_n(vec.values.begin() + pos, d_in * d_out,
                layer.weights.data.begin());
    pos += d_in * d_out;
    std::copy_n(vec.values.begin() + pos, d_out, layer.bias.begin());
    pos += d_out;
    model.layers.push_back(std::move(layer));
  }
  return model;
}

void apply_gradient(MlpModel& model, const WeightVector& grad,
                    double learning_rate) {
  if (grad.dim() != model.config.param_count()) {
    throw ShapeError("apply_gradient: gradient dimension mismatch");
  }
  std::size_t pos = 0;
  for (LayerParams& layer : model.layers) {
    for (double& w : layer.weights.data) {
      w -= learning_rate * grad.values[pos++];
    }
    for (double& b : layer.bias) {
      b -= learning_rate * grad.values[pos++];
    }
  }
}

std::vector<int> predict_classes(const MlpModel& model, const Matrix& batch) {
  const Matrix probs = forward(model, batch, false, nullptr);
  std::vector<int> preds(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const auto row = probs.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    preds[i] = static_cast<int>(best);
  }
  return preds;
}

}  // namespace fedsim
