#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/matrix.hpp"
#include "fedsim/mlp.hpp"
#include "fedsim/rng.hpp"
#include "test_util.hpp"

using namespace fedsim;
using testutil::same_bits;

TEST_CASE("rng streams are reproducible and seed-sensitive") {
  RngStream a(123);
  RngStream b(123);
  RngStream c(124);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    double va = a.uniform01();
    CHECK(va == b.uniform01());
    CHECK(va >= 0.0);
    CHECK(va < 1.0);
    if (va != c.uniform01()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("rng below stays in range and shuffle permutes") {
  RngStream rng(7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(rng.below(13) < 13);
  }
  std::vector<int> items(50);
  std::iota(items.begin(), items.end(), 0);
  std::vector<int> shuffled = items;
  rng.shuffle(shuffled);
  CHECK(shuffled != items);  // 1/50! chance of a false alarm
  std::vector<int> sorted = shuffled;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == items);
}

TEST_CASE("rng normal and gamma draw sane values") {
  RngStream rng(99);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
  for (int i = 0; i < 1000; ++i) {
    CHECK(rng.gamma(0.25) > 0.0);
    CHECK(rng.gamma(3.0) > 0.0);
  }
}

TEST_CASE("matrix products match hand-computed values") {
  Matrix a(2, 3);
  a.data = {1, 2, 3, 4, 5, 6};
  Matrix b(3, 2);
  b.data = {7, 8, 9, 10, 11, 12};
  Matrix c = matmul(a, b);
  REQUIRE(c.rows == 2);
  REQUIRE(c.cols == 2);
  CHECK(c.at(0, 0) == 58);
  CHECK(c.at(0, 1) == 64);
  CHECK(c.at(1, 0) == 139);
  CHECK(c.at(1, 1) == 154);

  Matrix at = matmul_tn(a, a);  // 3x3 = A^T A
  CHECK(at.rows == 3);
  CHECK(at.at(0, 0) == 17);    // 1*1 + 4*4
  CHECK(at.at(2, 1) == 36);    // 3*2 + 6*5

  Matrix bt = matmul_nt(a, Matrix(a));  // 2x2 = A A^T
  CHECK(bt.at(0, 0) == 14);
  CHECK(bt.at(0, 1) == 32);

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matrix helpers: row vector add, column sums, gather") {
  Matrix m(2, 2);
  m.data = {1, 2, 3, 4};
  std::vector<double> v{10, 20};
  add_row_vector(m, v);
  CHECK(m.at(0, 0) == 11);
  CHECK(m.at(1, 1) == 24);
  auto sums = column_sums(m);
  CHECK(sums[0] == 24);
  CHECK(sums[1] == 46);
  std::vector<std::size_t> idx{1, 0, 1};
  Matrix g = gather_rows(m, idx);
  CHECK(g.rows == 3);
  CHECK(g.at(0, 0) == 13);
  CHECK(g.at(1, 1) == 22);
  CHECK(m.all_finite());
  m.at(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(m.all_finite());
}

TEST_CASE("config validation and parameter counting") {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {};
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.0;
  CHECK(cfg.param_count() == 6);  // (2 + 1) * 2

  cfg.hidden_dims = {4, 3};
  CHECK(cfg.param_count() == (2 + 1) * 4 + (4 + 1) * 3 + (3 + 1) * 2);

  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg.dropout_rate = 0.5;
  cfg.input_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);

  SgdConfig sgd;
  sgd.learning_rate = -1.0;
  CHECK_THROWS_AS(sgd.validate(), ShapeError);
  sgd.learning_rate = 0.0;  // allowed: degenerate runs rely on it
  sgd.batch_size = 0;
  CHECK_THROWS_AS(sgd.validate(), ShapeError);
}

TEST_CASE("flatten and unflatten round-trip exactly") {
  MlpConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dims = {7, 3};
  cfg.num_classes = 4;
  cfg.seed = 11;
  MlpModel model = make_model(cfg);
  WeightVector w = flatten(model);
  CHECK(w.dim() == cfg.param_count());
  MlpModel back = unflatten(w, cfg);
  CHECK(same_bits(flatten(back), w));

  WeightVector wrong = WeightVector::zeros(w.dim() + 1);
  CHECK_THROWS_AS(unflatten(wrong, cfg), ShapeError);
}

TEST_CASE("glorot bounds hold and biases start at zero") {
  MlpConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dims = {5};
  cfg.num_classes = 3;
  cfg.seed = 21;
  MlpModel model = make_model(cfg);
  double bound0 = std::sqrt(6.0 / (6 + 5));
  for (double v : model.layers[0].weights.data) {
    CHECK(std::abs(v) <= bound0);
  }
  for (const auto& layer : model.layers) {
    for (double b : layer.bias) CHECK(b == 0.0);
  }
  // Same seed, same model.
  CHECK(same_bits(flatten(make_model(cfg)), flatten(model)));
}

TEST_CASE("forward on a zero-weight model is the uniform distribution") {
  MlpConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dims = {4};
  cfg.num_classes = 5;
  cfg.dropout_rate = 0.0;
  MlpModel model = unflatten(WeightVector::zeros(cfg.param_count()), cfg);
  Matrix batch(2, 3);
  batch.data = {1.5, -2.0, 0.25, 100.0, -3.0, 9.0};
  Matrix probs = forward(model, batch, false);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    for (std::size_t c = 0; c < probs.cols; ++c) {
      CHECK(probs.at(r, c) == doctest::Approx(0.2).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward favors the class its weights point toward") {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {};
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.0;
  // logits = x . W + b with W column 0 = (1, 0), column 1 = (0, 1)
  WeightVector w{{1, 0, 0, 1, 0, 0}};
  MlpModel model = unflatten(w, cfg);
  Matrix batch(1, 2);
  batch.data = {3.0, -1.0};  // favors class 0
  CHECK(predict_classes(model, batch)[0] == 0);
  Matrix probs = forward(model, batch, false);
  CHECK(probs.at(0, 0) > probs.at(0, 1));
}

TEST_CASE("softmax rows sum to one for wild logits") {
  MlpConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_dims = {6};
  cfg.num_classes = 7;
  cfg.dropout_rate = 0.0;
  cfg.seed = 3;
  MlpModel model = make_model(cfg);
  // Exaggerate the scale to stress the max-subtraction path.
  for (auto& layer : model.layers) {
    for (double& v : layer.weights.data) v *= 300.0;
  }
  RngStream rng(55);
  Matrix batch(8, 4);
  for (double& v : batch.data) v = rng.normal(0.0, 50.0);
  Matrix probs = forward(model, batch, false);
  REQUIRE(probs.all_finite());
  for (std::size_t r = 0; r < probs.rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < probs.cols; ++c) {
      CHECK(probs.at(r, c) >= 0.0);
      sum += probs.at(r, c);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("training-mode forward is reproducible under the same seed") {
  MlpConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dims = {8};
  cfg.num_classes = 4;
  cfg.dropout_rate = 0.5;
  cfg.seed = 17;
  MlpModel model = make_model(cfg);
  Matrix batch(5, 3);
  RngStream data_rng(4);
  for (double& v : batch.data) v = data_rng.normal();

  RngStream r1(31);
  RngStream r2(31);
  Matrix p1 = forward(model, batch, true, &r1);
  Matrix p2 = forward(model, batch, true, &r2);
  CHECK(same_bits(p1.data, p2.data));
  // Dropout requires a stream.
  CHECK_THROWS_AS(forward(model, batch, true, nullptr), Error);
}

TEST_CASE("inverted dropout keeps the expected pre-activation") {
  // One input, one hidden unit, two classes. The second layer maps the
  // masked hidden activation h to logits (h, 0), so log(p0/p1) recovers h
  // exactly and we can average it over many masks through the public API.
  MlpConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden_dims = {1};
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.5;
  WeightVector w{{1.0,        // hidden weight
                  0.0,        // hidden bias
                  1.0, 0.0,   // output weights: class0 <- h, class1 <- 0
                  0.0, 0.0}}; // output biases
  MlpModel model = unflatten(w, cfg);
  Matrix x(1, 1);
  x.data = {1.0};  // h = ReLU(1) = 1 without dropout

  Matrix clean = forward(model, x, false);
  double h_clean = std::log(clean.at(0, 0) / clean.at(0, 1));
  CHECK(h_clean == doctest::Approx(1.0).epsilon(1e-9));

  RngStream rng(2024);
  const int draws = 20000;
  double acc = 0.0;
  for (int i = 0; i < draws; ++i) {
    Matrix p = forward(model, x, true, &rng);
    acc += std::log(p.at(0, 0) / p.at(0, 1));
  }
  CHECK(acc / draws == doctest::Approx(h_clean).epsilon(0.02));
}

TEST_CASE("zero-weight loss is log of the class count") {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {3};
  cfg.num_classes = 6;
  cfg.dropout_rate = 0.0;
  MlpModel model = unflatten(WeightVector::zeros(cfg.param_count()), cfg);
  Matrix batch(4, 2);
  batch.data = {1, 2, -1, 0.5, 3, 3, 0, 0};
  std::vector<int> labels{0, 5, 2, 3};
  RngStream rng(1);
  auto [loss, grad] = loss_and_grad(model, batch, labels, rng);
  CHECK(loss == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(grad.dim() == cfg.param_count());

  std::vector<int> bad{0, 1, 2, 6};
  CHECK_THROWS_AS(loss_and_grad(model, batch, bad, rng), LabelError);
}

TEST_CASE("duplicating every sample leaves loss and gradient unchanged") {
  MlpConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dims = {4};
  cfg.num_classes = 3;
  cfg.dropout_rate = 0.0;
  cfg.seed = 8;
  MlpModel model = make_model(cfg);
  Matrix batch(3, 3);
  RngStream data_rng(9);
  for (double& v : batch.data) v = data_rng.normal();
  std::vector<int> labels{0, 2, 1};

  Matrix doubled(6, 3);
  std::vector<int> labels2;
  for (int rep = 0; rep < 2; ++rep) {
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        doubled.at(rep * 3 + r, c) = batch.at(r, c);
      }
      labels2.push_back(labels[r]);
    }
  }
  RngStream rng(1);
  auto [l1, g1] = loss_and_grad(model, batch, labels, rng);
  auto [l2, g2] = loss_and_grad(model, doubled, labels2, rng);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (std::size_t i = 0; i < g1.dim(); ++i) {
    CHECK(g1.values[i] == doctest::Approx(g2.values[i]).epsilon(1e-10));
  }
}

namespace {

/// Central finite differences on the flattened parameters.
double max_grad_relerr(const MlpConfig& cfg, const MlpModel& model,
                       const Matrix& batch, const std::vector<int>& labels) {
  RngStream rng(0);  // dropout is off; the stream goes unused
  auto [loss, grad] = loss_and_grad(model, batch, labels, rng);
  (void)loss;
  WeightVector w = flatten(model);
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < w.dim(); ++i) {
    WeightVector wp = w;
    wp.values[i] += eps;
    WeightVector wm = w;
    wm.values[i] -= eps;
    auto [lp, gp] = loss_and_grad(unflatten(wp, cfg), batch, labels, rng);
    auto [lm, gm] = loss_and_grad(unflatten(wm, cfg), batch, labels, rng);
    (void)gp;
    (void)gm;
    double fd = (lp - lm) / (2.0 * eps);
    double denom = std::max({std::abs(fd), std::abs(grad.values[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - grad.values[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("analytic gradient matches finite differences") {
  RngStream meta(1234);
  for (int trial = 0; trial < 5; ++trial) {
    MlpConfig cfg;
    cfg.input_dim = 1 + meta.below(8);
    cfg.hidden_dims = {};
    if (meta.below(2) == 1) cfg.hidden_dims.push_back(1 + meta.below(8));
    cfg.num_classes = 2 + meta.below(4);
    cfg.dropout_rate = 0.0;
    cfg.seed = meta.next_u64();
    MlpModel model = make_model(cfg);
    Matrix batch(3, cfg.input_dim);
    for (double& v : batch.data) v = meta.normal();
    std::vector<int> labels;
    for (int r = 0; r < 3; ++r) {
      labels.push_back(static_cast<int>(meta.below(cfg.num_classes)));
    }
    CHECK(max_grad_relerr(cfg, model, batch, labels) < 1e-4);
  }
}

TEST_CASE("sgd with zero learning rate leaves the model untouched") {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {5};
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.25;
  cfg.seed = 5;
  MlpModel model = make_model(cfg);
  WeightVector before = flatten(model);
  ClientDataset toy = testutil::separable_toy(6);
  Matrix feats(toy.size(), 2);
  for (std::size_t r = 0; r < toy.size(); ++r) {
    feats.at(r, 0) = toy.features.at(r, 0);
    feats.at(r, 1) = 1.0;
  }
  SgdConfig sgd;
  sgd.learning_rate = 0.0;
  sgd.batch_size = 4;
  RngStream rng(77);
  MlpModel after =
      sgd_epoch(std::move(model), feats, toy.labels, toy.train_idx, sgd, rng);
  CHECK(same_bits(flatten(after), before));
}

TEST_CASE("a linear head memorizes a separable toy set") {
  ClientDataset toy = testutil::separable_toy(10);  // 20 samples
  MlpConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden_dims = {};
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.0;
  cfg.seed = 40;
  MlpModel model = make_model(cfg);
  SgdConfig sgd;
  sgd.learning_rate = 0.1;
  sgd.batch_size = 4;
  RngStream rng(41);
  for (int epoch = 0; epoch < 50; ++epoch) {
    model = sgd_epoch(std::move(model), toy.features, toy.labels,
                      toy.train_idx, sgd, rng);
  }
  std::vector<int> preds = predict_classes(model, toy.features);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(preds[i] == toy.labels[i]);
  }
}

TEST_CASE("sgd is bitwise reproducible under the same seed") {
  ClientDataset toy = testutil::separable_toy(8);
  MlpConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden_dims = {6};
  cfg.num_classes = 2;
  cfg.dropout_rate = 0.5;
  cfg.seed = 60;
  SgdConfig sgd;
  sgd.learning_rate = 0.05;
  sgd.batch_size = 5;

  auto run = [&] {
    MlpModel model = make_model(cfg);
    RngStream rng(61);
    for (int epoch = 0; epoch < 3; ++epoch) {
      model = sgd_epoch(std::move(model), toy.features, toy.labels,
                        toy.train_idx, sgd, rng);
    }
    return flatten(model);
  };
  CHECK(same_bits(run(), run()));
}

TEST_CASE("argmax prediction breaks ties toward the lowest class") {
  MlpConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {};
  cfg.num_classes = 3;
  cfg.dropout_rate = 0.0;
  MlpModel model = unflatten(WeightVector::zeros(cfg.param_count()), cfg);
  Matrix batch(2, 2);
  batch.data = {5, -1, 0, 0};
  for (int p : predict_classes(model, batch)) CHECK(p == 0);
}
