#pragma once

#include <span>

#include <Eigen/Core>

#include "malfuse/nn/tensor.hpp"

namespace malfuse::nn {

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  Tensor<Scalar> probabilities;  // softmax output; empty for mse
  Tensor<Scalar> gradient;       // d loss / d input
};

/// Mean cross-entropy of softmax(logits) against integer labels; the
/// gradient is (p - one_hot) / N.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Mean squared error over all elements.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor<Scalar>& reconstruction, const Tensor<Scalar>& target);

}  // namespace malfuse::nn

namespace malfuse::nn {

inline constexpr double kLogLossClip = 1e-15;

/// Mean of -ln p[i, y_i], each probability clipped to [clip, 1 - clip].
double multiclass_log_loss(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, std::span<const int> labels,
                           double clip = kLogLossClip);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double argmax_accuracy(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, std::span<const int> labels);

}  // namespace malfuse::nn
