#include "malfuse/nn/layers.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "malfuse/io.hpp"

namespace malfuse::nn {

std::string shape_string(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

std::string hwc_string(const Shape& s) {
  if (s.size() == 3) return std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" + std::to_string(s[0]);
  return shape_string(s);
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::ConvTranspose2d: return "conv_transpose2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::BatchNorm2d: return "batchnorm2d";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Relu: return "relu";
    case LayerKind::Linear: return "linear";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(const LayerSpec& spec, const Shape& in, const std::string& why) {
  throw Error(ErrorKind::ShapeMismatch, spec.to_string() + " on input " + shape_string(in) + ": " + why);
}

Shape per_sample(const Shape& batched) { return Shape(batched.begin() + 1, batched.end()); }

Shape batched(Index n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

template <typename Scalar>
void fill_uniform(Tensor<Scalar>& t, Rng& rng, double bound) {
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

/// (N, C, P) -> C x (N*P)
template <typename Scalar>
typename Tensor<Scalar>::RowMatrix channel_major(const Tensor<Scalar>& x) {
  const Index n = x.dim(0), c = x.dim(1), p = x.size() / (n * c);
  typename Tensor<Scalar>::RowMatrix m(c, n * p);
  for (Index b = 0; b < n; ++b) m.middleCols(b * p, p) = x.matrix(n * c, p).middleRows(b * c, c);
  return m;
}

/// C x (N*P) -> (N, C, P) into `out`
template <typename Scalar>
void from_channel_major(const typename Tensor<Scalar>::RowMatrix& m, Tensor<Scalar>& out) {
  const Index n = out.dim(0), c = out.dim(1), p = out.size() / (n * c);
  auto dst = out.matrix(n * c, p);
  for (Index b = 0; b < n; ++b) dst.middleRows(b * c, c) = m.middleCols(b * p, p);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  explicit Conv2d(const LayerSpec& s)
      : Layer<Scalar>(s),
        weight_{"weight", Tensor<Scalar>({s.out_channels, s.in_channels, s.kernel, s.kernel}),
                Tensor<Scalar>({s.out_channels, s.in_channels, s.kernel, s.kernel})},
        bias_{"bias", Tensor<Scalar>({s.out_channels}), Tensor<Scalar>({s.out_channels})} {}

  void initialize(Rng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(this->spec_.in_channels * this->spec_.kernel * this->spec_.kernel));
    fill_uniform(weight_.value, rng, bound);
    fill_uniform(bias_.value, rng, bound);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto& s = this->spec_;
    const Shape out_sample = s.output_shape(per_sample(x.shape()));
    in_shape_ = x.shape();
    const Index n = x.dim(0), ho = out_sample[1], wo = out_sample[2];
    im2col<Scalar>(x.ptr(), n, s.in_channels, x.dim(2), x.dim(3), s.kernel, s.stride, s.padding, ho, wo, cols_);
    RowMatrix out_cm = weight_matrix() * cols_;
    out_cm.colwise() += bias_.value.data();
    Tensor<Scalar> out(batched(n, out_sample));
    from_channel_major<Scalar>(out_cm, out);
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    const auto& s = this->spec_;
    const RowMatrix g_cm = channel_major(g);
    weight_.grad.matrix(s.out_channels, cols_.rows()).noalias() += g_cm * cols_.transpose();
    bias_.grad.data() += g_cm.rowwise().sum();
    const RowMatrix dcols = weight_matrix().transpose() * g_cm;
    Tensor<Scalar> dx(in_shape_);
    col2im<Scalar>(dcols, in_shape_[0], s.in_channels, in_shape_[2], in_shape_[3], s.kernel, s.stride, s.padding,
                   g.dim(2), g.dim(3), dx.ptr());
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }

 private:
  typename Tensor<Scalar>::MatrixMap weight_matrix() {
    return weight_.value.matrix(this->spec_.out_channels, weight_.value.size() / this->spec_.out_channels);
  }

  Parameter<Scalar> weight_, bias_;
  RowMatrix cols_;
  Shape in_shape_;
};

template <typename Scalar>
class ConvTranspose2d final : public Layer<Scalar> {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  explicit ConvTranspose2d(const LayerSpec& s)
      : Layer<Scalar>(s),
        weight_{"weight", Tensor<Scalar>({s.in_channels, s.out_channels, s.kernel, s.kernel}),
                Tensor<Scalar>({s.in_channels, s.out_channels, s.kernel, s.kernel})},
        bias_{"bias", Tensor<Scalar>({s.out_channels}), Tensor<Scalar>({s.out_channels})} {}

  void initialize(Rng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(this->spec_.out_channels * this->spec_.kernel * this->spec_.kernel));
    fill_uniform(weight_.value, rng, bound);
    fill_uniform(bias_.value, rng, bound);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto& s = this->spec_;
    const Shape out_sample = s.output_shape(per_sample(x.shape()));
    in_shape_ = x.shape();
    x_cm_ = channel_major(x);
    const RowMatrix cols = weight_matrix().transpose() * x_cm_;
    Tensor<Scalar> out(batched(x.dim(0), out_sample));
    col2im<Scalar>(cols, x.dim(0), s.out_channels, out_sample[1], out_sample[2], s.kernel, s.stride, s.padding,
                   x.dim(2), x.dim(3), out.ptr());
    auto om = out.matrix(x.dim(0) * s.out_channels, out_sample[1] * out_sample[2]);
    for (Index b = 0; b < x.dim(0); ++b) om.middleRows(b * s.out_channels, s.out_channels).colwise() += bias_.value.data();
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    const auto& s = this->spec_;
    const Index n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
    RowMatrix gcols;
    im2col<Scalar>(g.ptr(), n, s.out_channels, g.dim(2), g.dim(3), s.kernel, s.stride, s.padding, h, w, gcols);
    weight_.grad.matrix(s.in_channels, gcols.rows()).noalias() += x_cm_ * gcols.transpose();
    bias_.grad.data() += g.matrix(n * s.out_channels, g.dim(2) * g.dim(3)).rowwise().sum().reshaped(s.out_channels, n).rowwise().sum();
    const RowMatrix dx_cm = weight_matrix() * gcols;
    Tensor<Scalar> dx(in_shape_);
    from_channel_major<Scalar>(dx_cm, dx);
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }

 private:
  typename Tensor<Scalar>::MatrixMap weight_matrix() {
    return weight_.value.matrix(this->spec_.in_channels, weight_.value.size() / this->spec_.in_channels);
  }

  Parameter<Scalar> weight_, bias_;
  RowMatrix x_cm_;
  Shape in_shape_;
};

template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto& s = this->spec_;
    const Shape out_sample = s.output_shape(per_sample(x.shape()));
    in_shape_ = x.shape();
    const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = out_sample[1], wo = out_sample[2];
    Tensor<Scalar> out(batched(x.dim(0), out_sample));
    argmax_.resize(static_cast<std::size_t>(out.size()));
    for (Index p = 0; p < planes; ++p) {
      const Scalar* in = x.ptr() + p * h * w;
      for (Index oh = 0; oh < ho; ++oh)
        for (Index ow = 0; ow < wo; ++ow) {
          Index best = (oh * s.stride) * w + ow * s.stride;
          for (Index ki = 0; ki < s.kernel; ++ki)
            for (Index kj = 0; kj < s.kernel; ++kj) {
              const Index idx = (oh * s.stride + ki) * w + ow * s.stride + kj;
              if (in[idx] > in[best]) best = idx;  // strict: first occurrence wins ties
            }
          const Index o = (p * ho + oh) * wo + ow;
          out[o] = in[best];
          argmax_[static_cast<std::size_t>(o)] = p * h * w + best;
        }
    }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    Tensor<Scalar> dx(in_shape_);
    for (Index o = 0; o < g.size(); ++o) dx[argmax_[static_cast<std::size_t>(o)]] += g[o];
    return dx;
  }

 private:
  std::vector<Index> argmax_;
  Shape in_shape_;
};

template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  using Vector = typename Tensor<Scalar>::Vector;
  explicit BatchNorm2d(const LayerSpec& s)
      : Layer<Scalar>(s),
        gamma_{"gamma", Tensor<Scalar>({s.in_channels}, Vector::Ones(s.in_channels)), Tensor<Scalar>({s.in_channels})},
        beta_{"beta", Tensor<Scalar>({s.in_channels}), Tensor<Scalar>({s.in_channels})},
        running_mean_({s.in_channels}),
        running_var_({s.in_channels}, Vector::Ones(s.in_channels)) {}

  void initialize(Rng&) override {
    gamma_.value.data().setOnes();
    beta_.value.set_zero();
    running_mean_.set_zero();
    running_var_.data().setOnes();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    const auto& s = this->spec_;
    s.output_shape(per_sample(x.shape()));
    const Index n = x.dim(0), c = s.in_channels, p = x.dim(2) * x.dim(3);
    const auto eps = static_cast<Scalar>(kBatchNormEpsilon);
    mode_ = mode;
    Vector mean, var;
    if (mode == Mode::Train) {
      if (n < 2) throw Error(ErrorKind::BatchTooSmall, "batchnorm2d needs a batch of at least 2 in train mode");
      const auto m = static_cast<Scalar>(n * p);
      const auto xm = x.matrix(n * c, p);
      mean = Vector::Zero(c);
      for (Index b = 0; b < n; ++b) mean += xm.middleRows(b * c, c).rowwise().sum();
      mean /= m;
      var = Vector::Zero(c);
      for (Index b = 0; b < n; ++b)
        var += (xm.middleRows(b * c, c).colwise() - mean).array().square().matrix().rowwise().sum();
      var /= m;
      const auto mom = static_cast<Scalar>(kBatchNormMomentum);
      running_mean_.data() = (1 - mom) * running_mean_.data() + mom * mean;
      running_var_.data() = (1 - mom) * running_var_.data() + mom * var * (m / (m - 1));
    } else {
      mean = running_mean_.data();
      var = running_var_.data();
    }
    inv_std_ = (var.array() + eps).rsqrt().matrix();
    xhat_ = Tensor<Scalar>(x.shape());
    Tensor<Scalar> y(x.shape());
    const auto xm = x.matrix(n * c, p);
    auto hm = xhat_.matrix(n * c, p);
    auto ym = y.matrix(n * c, p);
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const Index r = b * c + ch;
        hm.row(r) = (xm.row(r).array() - mean(ch)) * inv_std_(ch);
        ym.row(r) = hm.row(r).array() * gamma_.value[ch] + beta_.value[ch];
      }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    const Index n = g.dim(0), c = this->spec_.in_channels, p = g.dim(2) * g.dim(3);
    const auto m = static_cast<Scalar>(n * p);
    const auto gm = g.matrix(n * c, p);
    const auto hm = xhat_.matrix(n * c, p);
    Vector sum_g = Vector::Zero(c), sum_gh = Vector::Zero(c);
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        sum_g(ch) += gm.row(b * c + ch).sum();
        sum_gh(ch) += gm.row(b * c + ch).dot(hm.row(b * c + ch));
      }
    gamma_.grad.data() += sum_gh;
    beta_.grad.data() += sum_g;
    Tensor<Scalar> dx(g.shape());
    auto dm = dx.matrix(n * c, p);
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const Index r = b * c + ch;
        const Scalar k = gamma_.value[ch] * inv_std_(ch);
        if (mode_ == Mode::Train)
          dm.row(r) = k / m * (m * gm.row(r).array() - sum_g(ch) - hm.row(r).array() * sum_gh(ch));
        else
          dm.row(r) = k * gm.row(r);
      }
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<Scalar>*> buffers() override { return {&running_mean_, &running_var_}; }

 private:
  Parameter<Scalar> gamma_, beta_;
  Tensor<Scalar> running_mean_, running_var_;
  Tensor<Scalar> xhat_;
  Vector inv_std_;
  Mode mode_ = Mode::Train;
};

template <typename Scalar>
class LeakyRelu final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto slope = static_cast<Scalar>(this->spec_.slope);
    x_ = x;
    Tensor<Scalar> y(x.shape());
    y.data() = x.data().unaryExpr([slope](Scalar v) { return v > 0 ? v : slope * v; });
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    const auto slope = static_cast<Scalar>(this->spec_.slope);
    Tensor<Scalar> dx(g.shape());
    dx.data() = g.data().binaryExpr(x_.data(), [slope](Scalar gv, Scalar xv) { return xv > 0 ? gv : slope * gv; });
    return dx;
  }

 private:
  Tensor<Scalar> x_;
};

template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;
  explicit Linear(const LayerSpec& s)
      : Layer<Scalar>(s),
        weight_{"weight", Tensor<Scalar>({s.out_features, s.in_features}), Tensor<Scalar>({s.out_features, s.in_features})},
        bias_{"bias", Tensor<Scalar>({s.out_features}), Tensor<Scalar>({s.out_features})} {}

  void initialize(Rng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(this->spec_.in_features));
    fill_uniform(weight_.value, rng, bound);
    fill_uniform(bias_.value, rng, bound);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto& s = this->spec_;
    s.output_shape(per_sample(x.shape()));
    in_shape_ = x.shape();
    x_ = x.batch_matrix();
    Tensor<Scalar> y({x.dim(0), s.out_features});
    auto ym = y.batch_matrix();
    ym.noalias() = x_ * weight_.value.matrix(s.out_features, s.in_features).transpose();
    ym.rowwise() += bias_.value.data().transpose();
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    const auto& s = this->spec_;
    const auto gm = g.batch_matrix();
    weight_.grad.matrix(s.out_features, s.in_features).noalias() += gm.transpose() * x_;
    bias_.grad.data() += gm.colwise().sum().transpose();
    Tensor<Scalar> dx(in_shape_);
    dx.batch_matrix().noalias() = gm * weight_.value.matrix(s.out_features, s.in_features);
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }

 private:
  Parameter<Scalar> weight_, bias_;
  RowMatrix x_;
  Shape in_shape_;
};

template <typename Scalar>
class Softmax final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    this->spec_.output_shape(per_sample(x.shape()));
    y_ = Tensor<Scalar>(x.shape());
    auto ym = y_.batch_matrix();
    const auto xm = x.batch_matrix();
    for (Index i = 0; i < xm.rows(); ++i) {
      ym.row(i) = (xm.row(i).array() - xm.row(i).maxCoeff()).exp();
      ym.row(i) /= ym.row(i).sum();
    }
    return y_;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& g) override {
    Tensor<Scalar> dx(g.shape());
    const auto gm = g.batch_matrix();
    const auto ym = y_.batch_matrix();
    auto dm = dx.batch_matrix();
    for (Index i = 0; i < gm.rows(); ++i) dm.row(i) = ym.row(i).array() * (gm.row(i).array() - gm.row(i).dot(ym.row(i)));
    return dx;
  }

 private:
  Tensor<Scalar> y_;
};

}  // namespace

// ---------------------------------------------------------------------------

LayerSpec LayerSpec::conv2d(Index in, Index out, Index kernel, Index stride, Index padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::conv_transpose2d(Index in, Index out, Index kernel, Index stride, Index padding) {
  LayerSpec s = conv2d(in, out, kernel, stride, padding);
  s.kind = LayerKind::ConvTranspose2d;
  return s;
}

LayerSpec LayerSpec::maxpool2d(Index kernel, Index stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2d;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::batchnorm2d(Index channels) {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm2d;
  s.in_channels = channels;
  s.out_channels = channels;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec s;
  s.kind = LayerKind::LeakyRelu;
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s = leaky_relu(0.0);
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::linear(Index in, Index out) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::Softmax;
  return s;
}

Shape LayerSpec::output_shape(const Shape& in) const {
  auto need_image = [&] {
    if (in.size() != 3) shape_error(*this, in, "expected a CxHxW input");
  };
  switch (kind) {
    case LayerKind::Conv2d: {
      need_image();
      if (in[0] != in_channels) shape_error(*this, in, "channel count");
      const Index h = in[1] + 2 * padding - kernel, w = in[2] + 2 * padding - kernel;
      if (h < 0 || w < 0 || stride < 1) shape_error(*this, in, "kernel larger than padded input");
      return {out_channels, h / stride + 1, w / stride + 1};
    }
    case LayerKind::ConvTranspose2d: {
      need_image();
      if (in[0] != in_channels) shape_error(*this, in, "channel count");
      const Index h = (in[1] - 1) * stride - 2 * padding + kernel, w = (in[2] - 1) * stride - 2 * padding + kernel;
      if (h < 1 || w < 1) shape_error(*this, in, "empty output");
      return {out_channels, h, w};
    }
    case LayerKind::MaxPool2d: {
      need_image();
      if (in[1] < kernel || in[2] < kernel || (in[1] - kernel) % stride != 0 || (in[2] - kernel) % stride != 0)
        shape_error(*this, in, "spatial extents must tile the pooling window");
      return {in[0], (in[1] - kernel) / stride + 1, (in[2] - kernel) / stride + 1};
    }
    case LayerKind::BatchNorm2d:
      need_image();
      if (in[0] != in_channels) shape_error(*this, in, "channel count");
      return in;
    case LayerKind::LeakyRelu:
    case LayerKind::Relu:
      return in;
    case LayerKind::Linear:
      if (shape_size(in) != in_features) shape_error(*this, in, "flattened width");
      return {out_features};
    case LayerKind::Softmax:
      if (in.size() != 1) shape_error(*this, in, "softmax expects a flat input");
      return in;
  }
  return in;
}

std::string LayerSpec::to_string() const {
  std::ostringstream ss;
  ss << nn::to_string(kind);
  switch (kind) {
    case LayerKind::Conv2d:
    case LayerKind::ConvTranspose2d:
      ss << " in=" << in_channels << " out=" << out_channels << " k=" << kernel << " s=" << stride << " p=" << padding;
      break;
    case LayerKind::MaxPool2d:
      ss << " k=" << kernel << " s=" << stride;
      break;
    case LayerKind::BatchNorm2d:
      ss << " c=" << in_channels;
      break;
    case LayerKind::LeakyRelu:
      ss << " slope=" << io::format_real(slope);
      break;
    case LayerKind::Linear:
      ss << " in=" << in_features << " out=" << out_features;
      break;
    case LayerKind::Relu:
    case LayerKind::Softmax:
      break;
  }
  return ss.str();
}

LayerSpec LayerSpec::parse(std::string_view text) {
  const auto tokens = io::split_whitespace(text);
  if (tokens.empty()) throw Error(ErrorKind::CorruptCheckpoint, "empty layer spec");
  std::map<std::string, std::string, std::less<>> kv;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos) throw Error(ErrorKind::CorruptCheckpoint, "bad layer field " + std::string(tokens[i]));
    kv.emplace(std::string(tokens[i].substr(0, eq)), std::string(tokens[i].substr(eq + 1)));
  }
  auto get = [&](const char* key) -> Index {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorKind::CorruptCheckpoint, std::string("layer spec missing ") + key);
    return static_cast<Index>(io::parse_int(it->second));
  };
  const auto kind = tokens[0];
  if (kind == "conv2d") return conv2d(get("in"), get("out"), get("k"), get("s"), get("p"));
  if (kind == "conv_transpose2d") return conv_transpose2d(get("in"), get("out"), get("k"), get("s"), get("p"));
  if (kind == "maxpool2d") return maxpool2d(get("k"), get("s"));
  if (kind == "batchnorm2d") return batchnorm2d(get("c"));
  if (kind == "leaky_relu") {
    auto it = kv.find("slope");
    return leaky_relu(it == kv.end() ? kDefaultLeakySlope : io::parse_real(it->second));
  }
  if (kind == "relu") return relu();
  if (kind == "linear") return linear(get("in"), get("out"));
  if (kind == "softmax") return softmax();
  throw Error(ErrorKind::CorruptCheckpoint, "unknown layer kind " + std::string(kind));
}

template <typename Scalar>
std::unique_ptr<Layer<Scalar>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::Conv2d: return std::make_unique<Conv2d<Scalar>>(spec);
    case LayerKind::ConvTranspose2d: return std::make_unique<ConvTranspose2d<Scalar>>(spec);
    case LayerKind::MaxPool2d: return std::make_unique<MaxPool2d<Scalar>>(spec);
    case LayerKind::BatchNorm2d: return std::make_unique<BatchNorm2d<Scalar>>(spec);
    case LayerKind::LeakyRelu:
    case LayerKind::Relu: return std::make_unique<LeakyRelu<Scalar>>(spec);
    case LayerKind::Linear: return std::make_unique<Linear<Scalar>>(spec);
    case LayerKind::Softmax: return std::make_unique<Softmax<Scalar>>(spec);
  }
  throw Error(ErrorKind::ShapeMismatch, "unknown layer kind");
}

template <typename Scalar>
void im2col(const Scalar* x, Index n, Index c, Index h, Index w, Index k, Index stride, Index pad, Index ho, Index wo,
            typename Tensor<Scalar>::RowMatrix& cols) {
  const Index p = ho * wo;
  cols.resize(c * k * k, n * p);
  for (Index ch = 0; ch < c; ++ch)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* row = cols.data() + ((ch * k + ki) * k + kj) * n * p;
        for (Index b = 0; b < n; ++b) {
          const Scalar* plane = x + (b * c + ch) * h * w;
          for (Index oh = 0; oh < ho; ++oh) {
            const Index ih = oh * stride - pad + ki;
            Scalar* dst = row + b * p + oh * wo;
            if (ih < 0 || ih >= h) {
              std::fill(dst, dst + wo, Scalar(0));
              continue;
            }
            for (Index ow = 0; ow < wo; ++ow) {
              const Index iw = ow * stride - pad + kj;
              dst[ow] = (iw >= 0 && iw < w) ? plane[ih * w + iw] : Scalar(0);
            }
          }
        }
      }
}

template <typename Scalar>
void col2im(const typename Tensor<Scalar>::RowMatrix& cols, Index n, Index c, Index h, Index w, Index k, Index stride,
            Index pad, Index ho, Index wo, Scalar* x) {
  const Index p = ho * wo;
  for (Index ch = 0; ch < c; ++ch)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* row = cols.data() + ((ch * k + ki) * k + kj) * n * p;
        for (Index b = 0; b < n; ++b) {
          Scalar* plane = x + (b * c + ch) * h * w;
          for (Index oh = 0; oh < ho; ++oh) {
            const Index ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            const Scalar* src = row + b * p + oh * wo;
            for (Index ow = 0; ow < wo; ++ow) {
              const Index iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < w) plane[ih * w + iw] += src[ow];
            }
          }
        }
      }
}

#define MALFUSE_INSTANTIATE(T)                                                                                     \
  template std::unique_ptr<Layer<T>> make_layer<T>(const LayerSpec&);                                              \
  template void im2col<T>(const T*, Index, Index, Index, Index, Index, Index, Index, Index, Index,                  \
                          Tensor<T>::RowMatrix&);                                                                  \
  template void col2im<T>(const Tensor<T>::RowMatrix&, Index, Index, Index, Index, Index, Index, Index, Index, Index, \
                          T*);
MALFUSE_INSTANTIATE(float)
MALFUSE_INSTANTIATE(double)
#undef MALFUSE_INSTANTIATE

}  // namespace malfuse::nn
