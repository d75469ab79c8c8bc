#include "malfuse/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace malfuse::nn {

template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size()))
    throw Error(ErrorKind::ShapeMismatch, "logits " + shape_string(logits.shape()) + " vs " +
                                              std::to_string(labels.size()) + " labels");
  const Index n = logits.dim(0), m = logits.dim(1);
  LossResult<Scalar> r{0, Tensor<Scalar>(logits.shape()), Tensor<Scalar>(logits.shape())};
  const auto z = logits.batch_matrix();
  auto p = r.probabilities.batch_matrix();
  auto g = r.gradient.batch_matrix();
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= m) throw Error(ErrorKind::ShapeMismatch, "label " + std::to_string(y) + " out of range");
    const Scalar zmax = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - zmax).exp();
    const Scalar sum = p.row(i).sum();
    p.row(i) /= sum;
    total += static_cast<double>(std::log(sum) + zmax - z(i, y));
    g.row(i) = p.row(i) / static_cast<Scalar>(n);
    g(i, y) -= Scalar(1) / static_cast<Scalar>(n);
  }
  r.loss = static_cast<Scalar>(total / static_cast<double>(n));
  return r;
}

template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor<Scalar>& reconstruction, const Tensor<Scalar>& target) {
  if (reconstruction.shape() != target.shape())
    throw Error(ErrorKind::ShapeMismatch, "reconstruction " + shape_string(reconstruction.shape()) + " vs target " +
                                              shape_string(target.shape()));
  const auto n = static_cast<Scalar>(target.size());
  LossResult<Scalar> r;
  const auto diff = (reconstruction.data() - target.data()).eval();
  r.loss = diff.squaredNorm() / n;
  r.gradient = Tensor<Scalar>(target.shape(), (Scalar(2) / n) * diff);
  return r;
}

template LossResult<float> softmax_cross_entropy<float>(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_cross_entropy<double>(const Tensor<double>&, std::span<const int>);
template LossResult<float> mse_loss<float>(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> mse_loss<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace malfuse::nn

namespace malfuse::nn {

double multiclass_log_loss(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, std::span<const int> labels,
                           double clip) {
  if (probabilities.rows() != static_cast<Index>(labels.size()))
    throw Error(ErrorKind::ShapeMismatch, std::to_string(probabilities.rows()) + " prediction rows vs " +
                                              std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "log loss of an empty batch");
  double total = 0;
  for (Index i = 0; i < probabilities.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probabilities.cols()) throw Error(ErrorKind::ShapeMismatch, "label out of range");
    total -= std::log(std::clamp(probabilities(i, y), clip, 1.0 - clip));
  }
  return total / static_cast<double>(labels.size());
}

double argmax_accuracy(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, std::span<const int> labels) {
  if (probabilities.rows() != static_cast<Index>(labels.size()))
    throw Error(ErrorKind::ShapeMismatch, "prediction rows vs labels");
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of an empty batch");
  Index hits = 0;
  for (Index i = 0; i < probabilities.rows(); ++i) {
    Index best = 0;
    probabilities.row(i).maxCoeff(&best);  // first maximum
    hits += best == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace malfuse::nn
