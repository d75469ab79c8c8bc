#include "malfuse/nn/optim.hpp"

#include <cmath>

namespace malfuse::nn {

template <typename Scalar>
void Adam<Scalar>::step(std::span<Parameter<Scalar>* const> params) {
  using Vector = typename Tensor<Scalar>::Vector;
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Vector::Zero(p->value.size()));
      v_.push_back(Vector::Zero(p->value.size()));
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer bound to a different parameter set");
  ++t_;
  const auto b1 = static_cast<Scalar>(b1_), b2 = static_cast<Scalar>(b2_);
  const auto step = static_cast<Scalar>(lr_ / (1.0 - std::pow(b1_, static_cast<double>(t_))));
  const auto bias2 = static_cast<Scalar>(1.0 - std::pow(b2_, static_cast<double>(t_)));
  const auto eps = static_cast<Scalar>(eps_), wd = static_cast<Scalar>(wd_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.grad.size() != p.value.size()) throw Error(ErrorKind::ShapeMismatch, "gradient shape for " + p.name);
    const Vector g = p.grad.data() + wd * p.value.data();
    m_[i] = b1 * m_[i] + (1 - b1) * g;
    v_[i] = b2 * v_[i] + (1 - b2) * g.cwiseAbs2();
    p.value.data().array() -= step * m_[i].array() / ((v_[i].array() / bias2).sqrt() + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace malfuse::nn
