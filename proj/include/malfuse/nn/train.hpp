#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "malfuse/nn/checkpoint.hpp"
#include "malfuse/nn/network.hpp"
#include "malfuse/nn/optim.hpp"

namespace malfuse::nn {

template <typename Scalar>
struct Dataset {
  Tensor<Scalar> inputs;  // batched, sample index first
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_log_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochMetrics> log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training on softmax cross-entropy. After every epoch the
/// validation log loss is measured in eval mode and the network state is
/// captured iff it is strictly lower than the best so far. On return the
/// network holds the best state, which is also the returned checkpoint.
/// Batch order comes from Rng(config.seed); a trailing batch of one sample
/// is merged into the previous batch so batchnorm always sees two.
TrainResult train_classifier(Network<float>& net, const Dataset<float>& train, const Dataset<float>& val,
                             const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Reconstruction training on MSE. Returns the eval-mode training-set MSE
/// measured after each epoch.
std::vector<double> train_autoencoder(Network<float>& net, const Tensor<float>& inputs, const TrainConfig& config,
                                      const std::function<void(int, double)>& on_epoch = {});

/// Eval-mode forward in chunks of `batch` samples.
Tensor<float> predict(Network<float>& net, const Tensor<float>& inputs, Index batch = 64);

/// Eval-mode class probabilities as an N x classes double matrix.
Eigen::MatrixXd predict_proba(Network<float>& net, const Tensor<float>& inputs, Index batch = 64);

double reconstruction_mse(Network<float>& net, const Tensor<float>& inputs, Index batch = 64);

void write_metrics_log(const std::vector<EpochMetrics>& log, const std::filesystem::path& path);
std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path);

}  // namespace malfuse::nn
