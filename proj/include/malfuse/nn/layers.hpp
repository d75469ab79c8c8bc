#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "malfuse/nn/tensor.hpp"
#include "malfuse/random.hpp"

namespace malfuse::nn {

enum class LayerKind { Conv2d, ConvTranspose2d, MaxPool2d, BatchNorm2d, LeakyRelu, Relu, Linear, Softmax };

std::string_view to_string(LayerKind kind);

enum class Mode { Train, Eval };

inline constexpr double kDefaultLeakySlope = 0.01;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Hyperparameters of one layer; the unit an architecture descriptor is made of.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Index padding = 0;
  Index in_features = 0;
  Index out_features = 0;
  double slope = 0.0;

  static LayerSpec conv2d(Index in, Index out, Index kernel, Index stride = 1, Index padding = 1);
  static LayerSpec conv_transpose2d(Index in, Index out, Index kernel, Index stride, Index padding = 0);
  static LayerSpec maxpool2d(Index kernel = 2, Index stride = 2);
  static LayerSpec batchnorm2d(Index channels);
  static LayerSpec leaky_relu(double slope = kDefaultLeakySlope);
  static LayerSpec relu();
  static LayerSpec linear(Index in, Index out);
  static LayerSpec softmax();

  /// Per-sample output shape for a per-sample input shape; throws ShapeMismatch.
  Shape output_shape(const Shape& in) const;

  std::string to_string() const;
  static LayerSpec parse(std::string_view text);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
};

/// A layer caches what its backward pass needs during forward; backward
/// accumulates into parameter gradients and returns the input gradient.
template <typename Scalar>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const LayerSpec& spec() const { return spec_; }

  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) = 0;
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) = 0;
  virtual std::vector<Parameter<Scalar>*> parameters() { return {}; }
  /// Non-trainable state saved in checkpoints (batchnorm running statistics).
  virtual std::vector<Tensor<Scalar>*> buffers() { return {}; }
  virtual void initialize(Rng&) {}

 protected:
  LayerSpec spec_;
};

template <typename Scalar>
std::unique_ptr<Layer<Scalar>> make_layer(const LayerSpec& spec);

// Convolution lowering shared by conv2d and its transpose. `cols` is
// (C*k*k) x (N*Ho*Wo), row (c, ki, kj), column (n, oh, ow).
template <typename Scalar>
void im2col(const Scalar* x, Index n, Index c, Index h, Index w, Index k, Index stride, Index pad, Index ho, Index wo,
            typename Tensor<Scalar>::RowMatrix& cols);

template <typename Scalar>
void col2im(const typename Tensor<Scalar>::RowMatrix& cols, Index n, Index c, Index h, Index w, Index k, Index stride,
            Index pad, Index ho, Index wo, Scalar* x);

}  // namespace malfuse::nn
