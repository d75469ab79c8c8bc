#include "malfuse/gradcheck_suite.hpp"

#include <cstdio>
#include <ostream>

#include "malfuse/models.hpp"
#include "malfuse/random.hpp"

namespace malfuse {

using nn::ArchitectureDescriptor;
using nn::LayerSpec;

std::vector<GradCheckCase> gradcheck_cases(nn::Index divisor) {
  auto single = [](std::string name, nn::Shape in, LayerSpec layer, double thr = 1e-4, nn::Index batch = 2) {
    return GradCheckCase{name, ArchitectureDescriptor{name, std::move(in), {std::move(layer)}}, thr, batch};
  };
  std::vector<GradCheckCase> cases{
      single("conv2d", {2, 6, 6}, LayerSpec::conv2d(2, 3, 3)),
      single("conv2d stride 2", {2, 6, 6}, LayerSpec::conv2d(2, 3, 3, 2, 0)),
      single("conv_transpose2d", {4, 3, 3}, LayerSpec::conv_transpose2d(4, 2, 2, 2)),
      single("maxpool2d", {2, 4, 4}, LayerSpec::maxpool2d()),
      single("batchnorm2d", {3, 4, 4}, LayerSpec::batchnorm2d(3), 1e-4, 3),
      single("leaky_relu", {5}, LayerSpec::leaky_relu(), 1e-6),
      single("relu", {5}, LayerSpec::relu(), 1e-6),
      single("linear", {2, 2, 3}, LayerSpec::linear(12, 4)),
      single("softmax", {6}, LayerSpec::softmax(), 1e-6),
  };
  const auto cnn = CnnWidths{}.scaled(divisor);
  const auto cae = CaeWidths{}.scaled(divisor);
  cases.push_back({"five-layer CNN", five_layer_cnn(cnn)});
  cases.push_back({"CAE1", cae1(cae)});
  cases.push_back({"CAE2", cae2(cae)});
  cases.push_back({"pretrained CNN", pretrained_cnn(cae)});
  cases.push_back({"baseline MLP", baseline_mlp(divisor)});
  cases.push_back({"fusion MLP", fusion_mlp(23, std::max<nn::Index>(1, 100 / divisor), std::max<nn::Index>(1, 50 / divisor))});
  return cases;
}

std::vector<GradCheckOutcome> run_gradcheck_suite(nn::Index divisor, std::uint64_t seed, std::ostream* progress) {
  std::vector<GradCheckOutcome> out;
  std::uint64_t s = seed;
  for (const auto& c : gradcheck_cases(divisor)) {
    nn::Network<double> net(c.arch, s);
    nn::Shape shape{c.batch};
    shape.insert(shape.end(), c.arch.input.begin(), c.arch.input.end());
    nn::Tensor<double> x(shape);
    Rng rng(s + 1000);
    for (nn::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
    out.push_back({c.name, c.threshold, nn::gradient_check(net, x, 1e-5, s)});
    ++s;
    if (progress) {
      const auto& o = out.back();
      char buf[200];
      std::snprintf(buf, sizeof buf, "%-20s max relative error %.3e (limit %.0e, worst %s)  %s", o.name.c_str(),
                    o.report.max_relative_error, o.threshold, o.report.worst.c_str(), o.passed() ? "ok" : "FAIL");
      *progress << buf << std::endl;
    }
  }
  return out;
}

}  // namespace malfuse
