#include <cmath>

#include "doctest.h"
#include "malfuse/nn/checkpoint.hpp"
#include "malfuse/nn/gradcheck.hpp"
#include "malfuse/nn/loss.hpp"
#include "malfuse/nn/optim.hpp"
#include "malfuse/nn/train.hpp"
#include "temp_dir.hpp"

using namespace malfuse;
using namespace malfuse::nn;

namespace {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<Scalar> t(std::move(shape));
  Rng rng(seed);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

ArchitectureDescriptor arch(Shape input, std::vector<LayerSpec> layers) {
  return {"probe", std::move(input), std::move(layers)};
}

double check_layers(Shape input, std::vector<LayerSpec> layers, Index batch = 2, std::uint64_t seed = 1) {
  Network<double> net(arch(input, std::move(layers)), seed);
  Shape s{batch};
  s.insert(s.end(), input.begin(), input.end());
  const auto report = gradient_check(net, random_tensor(s, seed + 100));
  INFO(report.to_string());
  return report.max_relative_error;
}

}  // namespace

TEST_CASE("conv2d shapes and identity kernel") {
  CHECK(LayerSpec::conv2d(1, 64, 3).output_shape({1, 32, 32}) == Shape{64, 32, 32});
  CHECK_THROWS_AS(LayerSpec::conv2d(2, 4, 3).output_shape({1, 8, 8}), Error);

  Network<double> net(arch({1, 5, 5}, {LayerSpec::conv2d(1, 1, 3)}));
  auto* w = net.parameters()[0];
  w->value.set_zero();
  w->value[4] = 1;
  net.parameters()[1]->value.set_zero();
  const auto x = random_tensor({1, 1, 5, 5}, 3);
  CHECK(net.forward(x, Mode::Eval).data() == x.data());
}

TEST_CASE("finite-difference checks per layer kind") {
  CHECK(check_layers({2, 6, 6}, {LayerSpec::conv2d(2, 3, 3)}) < 1e-4);
  CHECK(check_layers({2, 6, 6}, {LayerSpec::conv2d(2, 3, 3, 2, 0)}) < 1e-4);
  CHECK(check_layers({4, 3, 3}, {LayerSpec::conv_transpose2d(4, 2, 2, 2)}) < 1e-4);
  CHECK(check_layers({2, 4, 4}, {LayerSpec::maxpool2d()}) < 1e-4);
  CHECK(check_layers({3, 4, 4}, {LayerSpec::batchnorm2d(3)}, 3) < 1e-4);
  CHECK(check_layers({5}, {LayerSpec::leaky_relu()}) < 1e-6);
  CHECK(check_layers({5}, {LayerSpec::relu()}) < 1e-6);
  CHECK(check_layers({2, 2, 3}, {LayerSpec::linear(12, 4)}) < 1e-4);
  CHECK(check_layers({6}, {LayerSpec::softmax()}) < 1e-6);
  CHECK(check_layers({7}, {LayerSpec::linear(7, 3)}) < 1e-8);
}

TEST_CASE("small five-stage stack passes the finite-difference check") {
  const double err = check_layers(
      {1, 32, 32},
      {LayerSpec::conv2d(1, 2, 3), LayerSpec::leaky_relu(), LayerSpec::maxpool2d(), LayerSpec::batchnorm2d(2),
       LayerSpec::conv2d(2, 2, 3), LayerSpec::leaky_relu(), LayerSpec::maxpool2d(), LayerSpec::batchnorm2d(2),
       LayerSpec::conv2d(2, 2, 3), LayerSpec::leaky_relu(), LayerSpec::maxpool2d(), LayerSpec::batchnorm2d(2),
       LayerSpec::conv2d(2, 2, 3), LayerSpec::leaky_relu(), LayerSpec::maxpool2d(), LayerSpec::batchnorm2d(2),
       LayerSpec::conv2d(2, 4, 3), LayerSpec::leaky_relu(), LayerSpec::batchnorm2d(4), LayerSpec::linear(16, 6),
       LayerSpec::leaky_relu(), LayerSpec::linear(6, 3), LayerSpec::softmax()},
      3);
  CHECK(err < 1e-4);
}

TEST_CASE("maxpool ties route to the first position") {
  Network<double> net(arch({1, 2, 2}, {LayerSpec::maxpool2d()}));
  Tensor<double> x({1, 1, 2, 2});
  x.data().setConstant(3);
  CHECK(net.forward(x, Mode::Train)[0] == 3);
  Tensor<double> g({1, 1, 1, 1});
  g[0] = 1;
  const auto dx = net.backward(g);
  CHECK(dx[0] == 1);
  CHECK(dx.data().sum() == 1);
}

TEST_CASE("batchnorm statistics") {
  Network<double> net(arch({2, 3, 3}, {LayerSpec::batchnorm2d(2)}));
  const auto x = random_tensor({4, 2, 3, 3}, 8, -3, 5);
  const auto y = net.forward(x, Mode::Train);
  for (Index c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (Index n = 0; n < 4; ++n)
      for (Index k = 0; k < 9; ++k) {
        const double v = y[(n * 2 + c) * 9 + k];
        s += v;
        s2 += v * v;
      }
    CHECK(std::abs(s / 36) < 1e-6);
    CHECK(std::abs(s2 / 36 - 1) < 1e-4);  // epsilon smoothing shrinks the variance slightly
  }
  CHECK_THROWS_AS(net.forward(x.slice(0, 1), Mode::Train), Error);

  Network<double> fresh(arch({2, 3, 3}, {LayerSpec::batchnorm2d(2)}));
  const auto e = fresh.forward(x, Mode::Eval);
  CHECK((e.data() - x.data() / std::sqrt(1 + kBatchNormEpsilon)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pointwise activations") {
  Network<double> net(arch({2}, {LayerSpec::leaky_relu()}));
  Tensor<double> x({1, 2});
  x[0] = -1;
  x[1] = 3;
  const auto y = net.forward(x, Mode::Eval);
  CHECK(y[0] == doctest::Approx(-0.01));
  CHECK(y[1] == 3);
}

TEST_CASE("linear identity and table shape") {
  CHECK(LayerSpec::linear(4096, 1000).output_shape({1024, 2, 2}) == Shape{1000});
  Network<double> net(arch({3}, {LayerSpec::linear(3, 3)}));
  net.parameters()[0]->value.matrix(3, 3).setIdentity();
  net.parameters()[1]->value.set_zero();
  const auto x = random_tensor({2, 3}, 4);
  CHECK(net.forward(x, Mode::Eval).data() == x.data());
}

TEST_CASE("conv transpose shapes") {
  CHECK(LayerSpec::conv_transpose2d(128, 1, 2, 2).output_shape({128, 16, 16}) == Shape{1, 32, 32});
  CHECK(LayerSpec::conv_transpose2d(256, 128, 2, 2).output_shape({256, 8, 8}) == Shape{128, 16, 16});
}

TEST_CASE("softmax cross-entropy") {
  Tensor<double> z({1, 9});
  const std::vector<int> y{4};
  const auto r = softmax_cross_entropy(z, y);
  CHECK(r.loss == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  for (Index i = 0; i < 9; ++i) CHECK(r.probabilities[i] == doctest::Approx(1.0 / 9));
  z[4] = 80;
  CHECK(softmax_cross_entropy(z, y).loss < 1e-30);

  const auto logits = random_tensor({3, 5}, 12, -4, 4);
  const std::vector<int> labels{0, 3, 4};
  const auto base = softmax_cross_entropy(logits, labels);
  CHECK((base.probabilities.batch_matrix().rowwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
  Eigen::VectorXd numeric(logits.size());
  const double eps = 1e-6;
  for (Index i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up[i] += eps;
    down[i] -= eps;
    numeric[i] = (softmax_cross_entropy(up, labels).loss - softmax_cross_entropy(down, labels).loss) / (2 * eps);
  }
  CHECK((numeric - base.gradient.data()).norm() / (numeric.norm() + base.gradient.data().norm()) < 1e-6);
}

TEST_CASE("mean squared error") {
  const auto a = random_tensor({2, 3}, 1);
  CHECK(mse_loss(a, a).loss == 0);
  Tensor<double> ones({2, 3}), zeros({2, 3});
  ones.data().setOnes();
  CHECK(mse_loss(ones, zeros).loss == 1);
  CHECK_THROWS_AS(mse_loss(ones, Tensor<double>({3, 2})), Error);

  const auto t = random_tensor({2, 3}, 2);
  const auto r = mse_loss(a, t);
  Eigen::VectorXd numeric(a.size());
  for (Index i = 0; i < a.size(); ++i) {
    auto up = a, down = a;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    numeric[i] = (mse_loss(up, t).loss - mse_loss(down, t).loss) / 2e-6;
  }
  CHECK((numeric - r.gradient.data()).norm() / (numeric.norm() + r.gradient.data().norm()) < 1e-6);
}

TEST_CASE("adam") {
  Parameter<double> w{"w", Tensor<double>({1}), Tensor<double>({1})};
  std::vector<Parameter<double>*> ps{&w};
  w.value[0] = 1;
  Adam<double> still;
  still.step(ps);
  CHECK(w.value[0] == 1);

  Adam<double> opt;
  w.grad[0] = 2 * w.value[0];
  opt.step(ps);
  CHECK(std::abs(w.value[0]) < 1);

  // f(w) = 0.5 w^T diag(1, 4, 9) w - b^T w
  Parameter<double> q{"q", Tensor<double>({3}), Tensor<double>({3})};
  std::vector<Parameter<double>*> qs{&q};
  const Eigen::Vector3d d(1, 4, 9), b(0.3, -0.2, 0.1);
  Adam<double> fast(0.05);
  for (int i = 0; i < 200; ++i) {
    q.grad.data() = d.cwiseProduct(q.value.data()) - b;
    fast.step(qs);
  }
  CHECK((d.cwiseProduct(q.value.data()) - b).norm() < 1e-3);
}

TEST_CASE("log loss and accuracy helpers") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(4, 9, 1.0 / 9);
  const std::vector<int> y{0, 3, 8, 2};
  CHECK(std::abs(multiclass_log_loss(p, y) - std::log(9.0)) < 1e-12);
  Eigen::MatrixXd one = Eigen::MatrixXd::Zero(4, 9);
  for (int i = 0; i < 4; ++i) one(i, y[static_cast<std::size_t>(i)]) = 1;
  CHECK(multiclass_log_loss(one, y) <= 1.1e-15);
  CHECK(argmax_accuracy(one, y) == 1);
  CHECK(argmax_accuracy(p, y) == 0.25);  // ties pick class 0
}

TEST_CASE("checkpoint round trip and corruption") {
  ArchitectureDescriptor a = arch({1, 4, 4}, {LayerSpec::conv2d(1, 2, 3), LayerSpec::batchnorm2d(2),
                                              LayerSpec::leaky_relu(), LayerSpec::linear(32, 3), LayerSpec::softmax()});
  Network<float> net(a, 5);
  const auto x = random_tensor<float>({3, 1, 4, 4}, 6);
  net.forward(x, Mode::Train);  // move running statistics off their defaults
  const auto before = net.forward(x, Mode::Eval);

  const auto bytes = serialize_checkpoint(capture_checkpoint(net, 0.5, 7));
  const auto ck = parse_checkpoint(bytes);
  CHECK(ck.architecture == a);
  CHECK(ck.epoch == 7);
  CHECK(ck.best_val_log_loss == 0.5);
  auto copy = network_from_checkpoint<float>(ck);
  CHECK(copy.forward(x, Mode::Eval).data() == before.data());

  test::TempDir dir("ckpt");
  save_checkpoint(ck, dir / "m.ckpt");
  CHECK(load_checkpoint(dir / "m.ckpt").tensors.size() == ck.tensors.size());

  auto kind = [](std::string_view b) {
    try {
      parse_checkpoint(b);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::StageError;
  };
  CHECK(kind(std::string_view(bytes).substr(0, bytes.size() - 3)) == ErrorKind::CorruptCheckpoint);
  auto bumped = bytes;
  bumped[4] = 2;
  CHECK(kind(bumped) == ErrorKind::VersionMismatch);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(kind(magic) == ErrorKind::CorruptCheckpoint);
}

TEST_CASE("classifier training keeps the best epoch and is reproducible") {
  // Two linearly separable blobs.
  Dataset<float> train{Tensor<float>({40, 4}), {}}, val{Tensor<float>({10, 4}), {}};
  Rng rng(3);
  auto fill = [&](Dataset<float>& d) {
    for (Index i = 0; i < d.inputs.dim(0); ++i) {
      const int y = static_cast<int>(i % 3);
      d.labels.push_back(y);
      for (Index j = 0; j < 4; ++j) d.inputs[i * 4 + j] = static_cast<float>(rng.normal() * 0.5 + (j == y ? 2 : 0));
    }
  };
  fill(train);
  fill(val);
  const auto a = arch({4}, {LayerSpec::linear(4, 8), LayerSpec::leaky_relu(), LayerSpec::linear(8, 3),
                            LayerSpec::softmax()});
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 7;  // 40 = 5*7 + 5; also exercises a short tail batch
  cfg.seed = 4;
  Network<float> n1(a, 1), n2(a, 1);
  const auto r1 = train_classifier(n1, train, val, cfg);
  const auto r2 = train_classifier(n2, train, val, cfg);
  REQUIRE(r1.log.size() == 15);
  double lowest = 1e9;
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].val_log_loss == r2.log[i].val_log_loss);
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    lowest = std::min(lowest, r1.log[i].val_log_loss);
  }
  CHECK(r1.best.best_val_log_loss == lowest);
  CHECK(multiclass_log_loss(predict_proba(n1, val.inputs), val.labels) == doctest::Approx(lowest).epsilon(1e-9));

  test::TempDir dir("log");
  write_metrics_log(r1.log, dir / "metrics.csv");
  const auto back = read_metrics_log(dir / "metrics.csv");
  CHECK(back.size() == 15);
  CHECK(back[3].val_log_loss == r1.log[3].val_log_loss);
}

TEST_CASE("constant-label data is fit within five epochs") {
  Dataset<float> d{random_tensor<float>({30, 5}, 9), std::vector<int>(30, 2)};
  const auto a = arch({5}, {LayerSpec::linear(5, 64), LayerSpec::leaky_relu(), LayerSpec::linear(64, 9),
                            LayerSpec::softmax()});
  Network<float> net(a, 2);
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto r = train_classifier(net, d, d, cfg);
  CHECK(r.log.back().val_accuracy == 1.0);
}

TEST_CASE("autoencoder training lowers reconstruction error") {
  const auto x = random_tensor<float>({12, 1, 8, 8}, 10, 0, 1);
  const auto a = arch({1, 8, 8}, {LayerSpec::conv2d(1, 4, 3), LayerSpec::relu(), LayerSpec::maxpool2d(),
                                  LayerSpec::conv_transpose2d(4, 1, 2, 2), LayerSpec::relu()});
  Network<float> net(a, 3);
  TrainConfig cfg = cae_train_config();
  cfg.epochs = 5;
  cfg.batch_size = 4;
  const auto h = train_autoencoder(net, x, cfg);
  REQUIRE(h.size() == 5);
  CHECK(h.back() < h.front());
}
