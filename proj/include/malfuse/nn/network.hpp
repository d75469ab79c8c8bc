#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "malfuse/nn/layers.hpp"

namespace malfuse::nn {

/// Named layer stack plus the per-sample input shape it expects.
struct ArchitectureDescriptor {
  std::string name;
  Shape input;
  std::vector<LayerSpec> layers;

  /// Per-sample shapes: input first, then one per layer. Throws ShapeMismatch.
  std::vector<Shape> shape_chain() const;

  std::string serialize() const;
  static ArchitectureDescriptor parse(std::string_view text);

  friend bool operator==(const ArchitectureDescriptor&, const ArchitectureDescriptor&) = default;
};

template <typename Scalar>
class Network {
 public:
  /// Validates the shape chain and initializes parameters from `seed`.
  explicit Network(ArchitectureDescriptor arch, std::uint64_t seed = 0);

  const ArchitectureDescriptor& architecture() const { return arch_; }
  std::size_t size() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  /// Forward pass that stops before a trailing softmax.
  Tensor<Scalar> logits(const Tensor<Scalar>& x, Mode mode);
  /// Runs layers [0, end).
  Tensor<Scalar> forward_prefix(const Tensor<Scalar>& x, Mode mode, std::size_t end);
  /// Backpropagates through the layers used by the most recent forward call.
  Tensor<Scalar> backward(const Tensor<Scalar>& grad);

  void zero_grad();
  std::vector<Parameter<Scalar>*> parameters();
  std::vector<Tensor<Scalar>*> buffers();
  Index parameter_count();

 private:
  ArchitectureDescriptor arch_;
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  std::size_t last_depth_ = 0;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace malfuse::nn
