#include "malfuse/nn/train.hpp"

#include <cmath>
#include <numeric>

#include "malfuse/io.hpp"
#include "malfuse/nn/loss.hpp"

namespace malfuse::nn {

namespace {

std::vector<std::vector<Index>> make_batches(std::vector<Index>& order, Rng& rng, Index batch_size) {
  rng.shuffle(std::span<Index>(order));
  std::vector<std::vector<Index>> batches;
  const auto n = static_cast<Index>(order.size());
  for (Index b = 0; b < n; b += batch_size)
    batches.emplace_back(order.begin() + b, order.begin() + std::min(n, b + batch_size));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

void check_config(const TrainConfig& config) {
  if (config.epochs <= 0 || config.batch_size <= 0 || !(config.learning_rate > 0) || config.weight_decay < 0)
    throw Error(ErrorKind::ConfigError, "training config needs positive epochs, batch size and learning rate");
}

void check_finite(double loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss))
    throw Error(ErrorKind::DivergedLoss, "non-finite loss " + io::format_real(loss) + " at epoch " +
                                             std::to_string(epoch) + ", batch " + std::to_string(batch));
}

}  // namespace

Tensor<float> predict(Network<float>& net, const Tensor<float>& inputs, Index batch) {
  const Index n = inputs.dim(0);
  Tensor<float> out;
  Index row = 0;
  for (Index b = 0; b < n; b += batch) {
    Tensor<float> part = net.forward(inputs.slice(b, std::min(n, b + batch)), Mode::Eval);
    if (out.size() == 0) {
      Shape s = part.shape();
      s[0] = n;
      out = Tensor<float>(s);
    }
    out.data().segment(row, part.size()) = part.data();
    row += part.size();
  }
  return out;
}

Eigen::MatrixXd predict_proba(Network<float>& net, const Tensor<float>& inputs, Index batch) {
  return predict(net, inputs, batch).batch_matrix().cast<double>();
}

double reconstruction_mse(Network<float>& net, const Tensor<float>& inputs, Index batch) {
  const Tensor<float> recon = predict(net, inputs, batch);
  if (recon.shape() != inputs.shape())
    throw Error(ErrorKind::ShapeMismatch, "reconstruction " + shape_string(recon.shape()));
  return (recon.data().cast<double>() - inputs.data().cast<double>()).squaredNorm() /
         static_cast<double>(inputs.size());
}

TrainResult train_classifier(Network<float>& net, const Dataset<float>& train, const Dataset<float>& val,
                             const TrainConfig& config, const EpochCallback& on_epoch) {
  check_config(config);
  if (train.size() == 0 || val.size() == 0) throw Error(ErrorKind::EmptyInput, "empty training or validation set");
  Adam<float> adam(config.learning_rate, config.weight_decay);
  Rng rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), Index{0});
  auto params = net.parameters();

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(order, rng, config.batch_size);
    double weighted = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (Index i : idx) labels.push_back(train.labels[static_cast<std::size_t>(i)]);
      net.zero_grad();
      const auto loss = softmax_cross_entropy(net.logits(train.inputs.gather(idx), Mode::Train), labels);
      check_finite(loss.loss, epoch, bi);
      net.backward(loss.gradient);
      adam.step(params);
      weighted += static_cast<double>(loss.loss) * static_cast<double>(idx.size());
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = weighted / static_cast<double>(train.size());
    const Eigen::MatrixXd p = predict_proba(net, val.inputs);
    m.val_log_loss = multiclass_log_loss(p, val.labels);
    m.val_accuracy = argmax_accuracy(p, val.labels);
    check_finite(m.val_log_loss, epoch, batches.size());
    if (m.val_log_loss < best) {
      best = m.val_log_loss;
      result.best = capture_checkpoint(net, best, static_cast<std::uint32_t>(epoch));
    }
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  restore_checkpoint(result.best, net);
  return result;
}

std::vector<double> train_autoencoder(Network<float>& net, const Tensor<float>& inputs, const TrainConfig& config,
                                      const std::function<void(int, double)>& on_epoch) {
  check_config(config);
  if (inputs.size() == 0) throw Error(ErrorKind::EmptyInput, "no autoencoder inputs");
  Adam<float> adam(config.learning_rate, config.weight_decay);
  Rng rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(inputs.dim(0)));
  std::iota(order.begin(), order.end(), Index{0});
  auto params = net.parameters();

  std::vector<double> history;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(order, rng, config.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Tensor<float> x = inputs.gather(batches[bi]);
      net.zero_grad();
      const auto loss = mse_loss(net.forward(x, Mode::Train), x);
      check_finite(loss.loss, epoch, bi);
      net.backward(loss.gradient);
      adam.step(params);
    }
    const double mse = reconstruction_mse(net, inputs);
    check_finite(mse, epoch, batches.size());
    history.push_back(mse);
    if (on_epoch) on_epoch(epoch, mse);
  }
  return history;
}

void write_metrics_log(const std::vector<EpochMetrics>& log, const std::filesystem::path& path) {
  std::vector<std::string> lines{"epoch,train_loss,val_log_loss,val_accuracy"};
  for (const auto& m : log)
    lines.push_back(std::to_string(m.epoch) + "," + io::format_real(m.train_loss) + "," +
                    io::format_real(m.val_log_loss) + "," + io::format_real(m.val_accuracy));
  io::write_lines(path, lines);
}

std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::vector<EpochMetrics> log;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], ',');
    if (f.size() != 4) throw Error(ErrorKind::IoFailure, path.string() + ": bad metrics line " + std::to_string(i + 1));
    log.push_back({static_cast<int>(io::parse_int(f[0])), io::parse_real(f[1]), io::parse_real(f[2]),
                   io::parse_real(f[3])});
  }
  return log;
}

}  // namespace malfuse::nn
