#include "malfuse/nn/network.hpp"

#include <sstream>

#include "malfuse/io.hpp"

namespace malfuse::nn {

std::vector<Shape> ArchitectureDescriptor::shape_chain() const {
  std::vector<Shape> chain{input};
  for (const auto& spec : layers) chain.push_back(spec.output_shape(chain.back()));
  return chain;
}

std::string ArchitectureDescriptor::serialize() const {
  std::ostringstream ss;
  ss << "name " << name << '\n' << "input " << shape_string(input) << '\n';
  for (const auto& l : layers) ss << l.to_string() << '\n';
  return ss.str();
}

ArchitectureDescriptor ArchitectureDescriptor::parse(std::string_view text) {
  ArchitectureDescriptor arch;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_input = false;
  while (std::getline(in, line)) {
    const auto view = io::trim(line);
    if (view.empty()) continue;
    if (view.rfind("name ", 0) == 0) {
      arch.name = std::string(io::trim(view.substr(5)));
    } else if (view.rfind("input ", 0) == 0) {
      for (auto d : io::split(io::trim(view.substr(6)), 'x')) arch.input.push_back(static_cast<Index>(io::parse_int(d)));
      have_input = true;
    } else {
      arch.layers.push_back(LayerSpec::parse(view));
    }
  }
  if (!have_input) throw Error(ErrorKind::CorruptCheckpoint, "architecture has no input shape");
  return arch;
}

template <typename Scalar>
Network<Scalar>::Network(ArchitectureDescriptor arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.shape_chain();
  Rng rng(seed);
  for (const auto& spec : arch_.layers) {
    layers_.push_back(make_layer<Scalar>(spec));
    layers_.back()->initialize(rng);
  }
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward_prefix(const Tensor<Scalar>& x, Mode mode, std::size_t end) {
  Tensor<Scalar> h = x;
  for (std::size_t i = 0; i < end; ++i) h = layers_[i]->forward(h, mode);
  last_depth_ = end;
  return h;
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  return forward_prefix(x, mode, layers_.size());
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::logits(const Tensor<Scalar>& x, Mode mode) {
  std::size_t end = layers_.size();
  if (end > 0 && arch_.layers.back().kind == LayerKind::Softmax) --end;
  return forward_prefix(x, mode, end);
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::backward(const Tensor<Scalar>& grad) {
  Tensor<Scalar> g = grad;
  for (std::size_t i = last_depth_; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->grad.set_zero();
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> Network<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  for (auto& l : layers_)
    for (auto* p : l->parameters()) out.push_back(p);
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> Network<Scalar>::buffers() {
  std::vector<Tensor<Scalar>*> out;
  for (auto& l : layers_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

template <typename Scalar>
Index Network<Scalar>::parameter_count() {
  Index n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template class Network<float>;
template class Network<double>;

}  // namespace malfuse::nn
