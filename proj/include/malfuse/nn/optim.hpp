#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "malfuse/nn/layers.hpp"

namespace malfuse::nn {

/// Defaults follow the CNN table (30 epochs, batch 20, lr 0.001); the
/// autoencoder stage overrides epochs to 100 and weight decay to 1e-5.
struct TrainConfig {
  int epochs = 30;
  int batch_size = 20;
  double learning_rate = 0.001;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

inline TrainConfig cae_train_config() {
  TrainConfig c;
  c.epochs = 100;
  c.weight_decay = 0.00001;
  return c;
}

/// Adaptive-moment update; weight decay enters as an L2 term added to the
/// gradient before the moment estimates.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double learning_rate = 0.001, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(epsilon) {}

  void step(std::span<Parameter<Scalar>* const> params);

  long steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<typename Tensor<Scalar>::Vector> m_, v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace malfuse::nn
