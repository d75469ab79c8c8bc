#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "malfuse/nn/network.hpp"

namespace malfuse::nn {

struct TensorGradError {
  std::string layer;  // "3:conv2d"
  std::string tensor;  // parameter name, or "input"
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorGradError> entries;
  double max_relative_error = 0.0;
  std::string worst;  // "layer/tensor" of the largest error

  std::string to_string() const;
};

/// Checks analytic gradients of L = sum(r * forward(x)) for a fixed random r
/// against central differences. Per tensor the error is
/// |a - n| / (|a| + |n|) over the whole tensor (0 when both vanish).
/// Train mode is used, so batchnorm sees batch statistics; running
/// statistics are restored after every probe.
GradCheckReport gradient_check(Network<double>& net, const Tensor<double>& input, double eps = 1e-5,
                               std::uint64_t seed = 0, Mode mode = Mode::Train);

}  // namespace malfuse::nn
