#include "malfuse/models.hpp"

#include <algorithm>

#include "malfuse/nn/train.hpp"

namespace malfuse {

using nn::ArchitectureDescriptor;
using nn::Index;
using nn::LayerSpec;

namespace {

Index shrink(Index width, Index divisor) { return std::max<Index>(1, width / std::max<Index>(1, divisor)); }

std::vector<LayerSpec> encoder(Index in, Index out) {
  return {LayerSpec::conv2d(in, out, 3), LayerSpec::relu(), LayerSpec::maxpool2d()};
}

}  // namespace

CnnWidths CnnWidths::scaled(Index divisor) const {
  CnnWidths w = *this;
  for (auto& c : w.conv) c = shrink(c, divisor);
  w.fc1 = shrink(fc1, divisor);
  w.fc2 = shrink(fc2, divisor);
  return w;
}

CaeWidths CaeWidths::scaled(Index divisor) const {
  return {shrink(enc1, divisor), shrink(enc2, divisor), shrink(fc, divisor)};
}

ArchitectureDescriptor five_layer_cnn(const CnnWidths& w) {
  ArchitectureDescriptor a{"five_layer_cnn", {1, kImageSide, kImageSide}, {}};
  Index in = 1;
  for (int i = 0; i < 5; ++i) {
    a.layers.push_back(LayerSpec::conv2d(in, w.conv[i], 3));
    a.layers.push_back(LayerSpec::leaky_relu());
    if (i < 4) a.layers.push_back(LayerSpec::maxpool2d());
    a.layers.push_back(LayerSpec::batchnorm2d(w.conv[i]));
    in = w.conv[i];
  }
  const Index side = kImageSide / 16;
  a.layers.push_back(LayerSpec::linear(in * side * side, w.fc1));
  a.layers.push_back(LayerSpec::leaky_relu());
  a.layers.push_back(LayerSpec::linear(w.fc1, w.fc2));
  a.layers.push_back(LayerSpec::leaky_relu());
  a.layers.push_back(LayerSpec::linear(w.fc2, kNumClasses));
  a.layers.push_back(LayerSpec::softmax());
  return a;
}

ArchitectureDescriptor cae1(const CaeWidths& w) {
  ArchitectureDescriptor a{"cae1", {1, kImageSide, kImageSide}, encoder(1, w.enc1)};
  a.layers.push_back(LayerSpec::conv_transpose2d(w.enc1, 1, 2, 2));
  a.layers.push_back(LayerSpec::relu());
  return a;
}

ArchitectureDescriptor cae2(const CaeWidths& w) {
  ArchitectureDescriptor a{"cae2", {w.enc1, kImageSide / 2, kImageSide / 2}, encoder(w.enc1, w.enc2)};
  a.layers.push_back(LayerSpec::conv_transpose2d(w.enc2, w.enc1, 2, 2));
  a.layers.push_back(LayerSpec::relu());
  return a;
}

ArchitectureDescriptor pretrained_cnn(const CaeWidths& w) {
  ArchitectureDescriptor a{"pretrained_cnn", {1, kImageSide, kImageSide}, encoder(1, w.enc1)};
  for (const auto& l : encoder(w.enc1, w.enc2)) a.layers.push_back(l);
  const Index side = kImageSide / 4;
  a.layers.push_back(LayerSpec::linear(w.enc2 * side * side, w.fc));
  a.layers.push_back(LayerSpec::relu());
  a.layers.push_back(LayerSpec::linear(w.fc, kNumClasses));
  a.layers.push_back(LayerSpec::softmax());
  return a;
}

ArchitectureDescriptor baseline_mlp(Index divisor) {
  ArchitectureDescriptor a{"baseline_mlp", {1, kImageSide, kImageSide}, {}};
  Index in = kImageSide * kImageSide;
  for (Index h : {1000, 500, 100}) {
    h = std::max<Index>(1, h / std::max<Index>(1, divisor));
    a.layers.push_back(LayerSpec::linear(in, h));
    a.layers.push_back(LayerSpec::leaky_relu());
    in = h;
  }
  a.layers.push_back(LayerSpec::linear(in, kNumClasses));
  a.layers.push_back(LayerSpec::softmax());
  return a;
}

ArchitectureDescriptor fusion_mlp(Index input_width, Index hidden1, Index hidden2) {
  return {"fusion_mlp",
          {input_width},
          {LayerSpec::linear(input_width, hidden1), LayerSpec::leaky_relu(), LayerSpec::linear(hidden1, hidden2),
           LayerSpec::leaky_relu(), LayerSpec::linear(hidden2, kNumClasses), LayerSpec::softmax()}};
}

EncoderWeights pretrain_cae_stack(const nn::Tensor<float>& images, const nn::TrainConfig& config,
                                  const CaeWidths& widths,
                                  const std::function<void(int, int, double)>& on_epoch) {
  EncoderWeights out;
  nn::Network<float> first(cae1(widths), config.seed);
  out.cae1_history = nn::train_autoencoder(first, images, config, [&](int e, double mse) {
    if (on_epoch) on_epoch(1, e, mse);
  });
  out.cae1 = nn::capture_checkpoint(first, out.cae1_history.back(), static_cast<std::uint32_t>(config.epochs));

  // Encode in chunks to bound the im2col buffer.
  const Index n = images.dim(0);
  nn::Tensor<float> codes;
  Index offset = 0;
  for (Index b = 0; b < n; b += 64) {
    const auto part = first.forward_prefix(images.slice(b, std::min(n, b + 64)), nn::Mode::Eval, kEncoderDepth);
    if (codes.size() == 0) {
      nn::Shape s = part.shape();
      s[0] = n;
      codes = nn::Tensor<float>(s);
    }
    codes.data().segment(offset, part.size()) = part.data();
    offset += part.size();
  }

  nn::TrainConfig second_cfg = config;
  second_cfg.seed = config.seed + 1;
  nn::Network<float> second(cae2(widths), config.seed + 1);
  out.cae2_history = nn::train_autoencoder(second, codes, second_cfg, [&](int e, double mse) {
    if (on_epoch) on_epoch(2, e, mse);
  });
  out.cae2 = nn::capture_checkpoint(second, out.cae2_history.back(), static_cast<std::uint32_t>(config.epochs));
  return out;
}

nn::Network<float> build_pretrained_cnn(const EncoderWeights& weights, const CaeWidths& widths, std::uint64_t seed) {
  nn::Network<float> net(pretrained_cnn(widths), seed);
  auto copy_conv = [&](const nn::Checkpoint& ck, std::size_t layer) {
    auto src = nn::network_from_checkpoint<float>(ck);
    auto from = src.layer(0).parameters();
    auto to = net.layer(layer).parameters();
    if (from.size() != to.size()) throw Error(ErrorKind::ShapeMismatch, "encoder parameter count");
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (from[i]->value.shape() != to[i]->value.shape())
        throw Error(ErrorKind::ShapeMismatch, "encoder tensor " + nn::shape_string(from[i]->value.shape()) + " vs " +
                                                  nn::shape_string(to[i]->value.shape()));
      to[i]->value = from[i]->value;
    }
  };
  copy_conv(weights.cae1, 0);
  copy_conv(weights.cae2, kEncoderDepth);
  return net;
}

nn::Tensor<float> images_to_tensor(std::span<const ByteImage> images) {
  nn::Tensor<float> t({static_cast<Index>(images.size()), 1, kImageSide, kImageSide});
  const Index per = kImageSide * kImageSide;
  for (std::size_t i = 0; i < images.size(); ++i)
    t.data().segment(static_cast<Index>(i) * per, per) =
        Eigen::Map<const Eigen::VectorXd>(images[i].pixels.data(), per).cast<float>();
  return t;
}

FeatureTable extract_probability_features(nn::Network<float>& net, const nn::Tensor<float>& inputs,
                                          std::vector<std::string> ids, std::vector<int> labels,
                                          const std::string& prefix) {
  if (static_cast<Index>(ids.size()) != inputs.dim(0) || ids.size() != labels.size())
    throw Error(ErrorKind::ShapeMismatch, "ids, labels and inputs disagree in length");
  FeatureTable t;
  t.ids = std::move(ids);
  t.labels = std::move(labels);
  t.values = nn::predict_proba(net, inputs);
  if (t.values.cols() != kNumClasses) throw Error(ErrorKind::ShapeMismatch, "extractor does not emit 9 classes");
  // Softmax ran in float; renormalize so rows sum to 1 at double precision.
  t.values.array().colwise() /= t.values.rowwise().sum().array();
  for (Index c = 0; c < kNumClasses; ++c) t.columns.push_back(prefix + std::to_string(c));
  return t;
}

}  // namespace malfuse
