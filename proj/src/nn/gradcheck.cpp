#include "malfuse/nn/gradcheck.hpp"

#include <sstream>

namespace malfuse::nn {

namespace {

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& n) {
  const double denom = a.norm() + n.norm();
  return denom == 0.0 ? 0.0 : (a - n).norm() / denom;
}

}  // namespace

std::string GradCheckReport::to_string() const {
  std::ostringstream out;
  for (const auto& e : entries) out << e.layer << '/' << e.tensor << ' ' << e.relative_error << '\n';
  out << "max " << max_relative_error << " at " << worst << '\n';
  return out.str();
}

GradCheckReport gradient_check(Network<double>& net, const Tensor<double>& input, double eps, std::uint64_t seed,
                               Mode mode) {
  // Snapshot buffers so train-mode probes do not drift running statistics.
  std::vector<Tensor<double>> saved;
  for (auto* b : net.buffers()) saved.push_back(*b);
  auto restore = [&] {
    auto bufs = net.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i] = saved[i];
  };

  Tensor<double> out = net.forward(input, mode);
  Rng rng(seed);
  Tensor<double> r(out.shape());
  for (Index i = 0; i < r.size(); ++i) r[i] = rng.uniform(-1.0, 1.0);

  auto objective = [&](const Tensor<double>& x) {
    const double v = net.forward(x, mode).data().dot(r.data());
    restore();
    return v;
  };

  net.zero_grad();
  net.forward(input, mode);
  restore();
  const Tensor<double> input_grad = net.backward(r);

  GradCheckReport report;
  auto record = [&](std::string layer, std::string tensor, double err) {
    if (err > report.max_relative_error || report.entries.empty()) {
      report.max_relative_error = std::max(report.max_relative_error, err);
      report.worst = layer + "/" + tensor;
    }
    report.entries.push_back({std::move(layer), std::move(tensor), err});
  };

  for (std::size_t li = 0; li < net.size(); ++li) {
    auto& layer = net.layer(li);
    const std::string lname = std::to_string(li) + ":" + std::string(to_string(layer.spec().kind));
    for (auto* p : layer.parameters()) {
      Eigen::VectorXd numeric(p->value.size());
      for (Index i = 0; i < p->value.size(); ++i) {
        const double orig = p->value[i];
        p->value[i] = orig + eps;
        const double up = objective(input);
        p->value[i] = orig - eps;
        const double down = objective(input);
        p->value[i] = orig;
        numeric[i] = (up - down) / (2 * eps);
      }
      record(lname, p->name, relative_error(p->grad.data(), numeric));
    }
  }

  Tensor<double> x = input;
  Eigen::VectorXd numeric(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = objective(x);
    x[i] = orig - eps;
    const double down = objective(x);
    x[i] = orig;
    numeric[i] = (up - down) / (2 * eps);
  }
  record("input", "input", relative_error(input_grad.data(), numeric));
  return report;
}

}  // namespace malfuse::nn
