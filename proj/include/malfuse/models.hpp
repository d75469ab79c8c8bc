#pragma once

#include <functional>
#include <string>
#include <vector>

#include "malfuse/features.hpp"
#include "malfuse/nn/checkpoint.hpp"
#include "malfuse/nn/network.hpp"
#include "malfuse/nn/optim.hpp"

namespace malfuse {

/// Channel and unit counts of the five-layer CNN. `scaled(d)` divides every
/// width by d (at least 1) for reduced-size runs; the classes output stays 9.
struct CnnWidths {
  nn::Index conv[5] = {64, 128, 256, 512, 1024};
  nn::Index fc1 = 1000;
  nn::Index fc2 = 500;

  CnnWidths scaled(nn::Index divisor) const;
};

struct CaeWidths {
  nn::Index enc1 = 128;
  nn::Index enc2 = 256;
  nn::Index fc = 500;

  CaeWidths scaled(nn::Index divisor) const;
};

inline constexpr nn::Index kNumClasses = 9;

nn::ArchitectureDescriptor five_layer_cnn(const CnnWidths& w = {});
/// conv 3x3 / relu / pool, then a 2x2 stride-2 transpose conv / relu back to the input.
nn::ArchitectureDescriptor cae1(const CaeWidths& w = {});
nn::ArchitectureDescriptor cae2(const CaeWidths& w = {});
/// Both encoder stages, flatten, linear fc, relu, linear 9, softmax.
nn::ArchitectureDescriptor pretrained_cnn(const CaeWidths& w = {});
/// 1024-1000-500-100-9 over raw pixels; hidden widths divided by `divisor`.
nn::ArchitectureDescriptor baseline_mlp(nn::Index divisor = 1);
nn::ArchitectureDescriptor fusion_mlp(nn::Index input_width, nn::Index hidden1 = 100, nn::Index hidden2 = 50);

/// Number of leading layers that form each autoencoder's encoder.
inline constexpr std::size_t kEncoderDepth = 3;

struct EncoderWeights {
  nn::Checkpoint cae1;
  nn::Checkpoint cae2;
  std::vector<double> cae1_history;  // eval-mode training MSE per epoch
  std::vector<double> cae2_history;
};

/// Trains CAE1 on the images, encodes every image with its encoder, then
/// trains CAE2 on those encodings.
EncoderWeights pretrain_cae_stack(const nn::Tensor<float>& images, const nn::TrainConfig& config,
                                  const CaeWidths& widths = {},
                                  const std::function<void(int stage, int epoch, double mse)>& on_epoch = {});

/// Pretrained-CNN network whose encoder layers are copied from the CAEs;
/// the classifier head is initialized from `seed`. Throws ShapeMismatch when
/// `widths` disagrees with the trained encoders.
nn::Network<float> build_pretrained_cnn(const EncoderWeights& weights, const CaeWidths& widths, std::uint64_t seed);

/// Images as an (N, 1, 32, 32) tensor.
nn::Tensor<float> images_to_tensor(std::span<const ByteImage> images);

/// One row of class probabilities per sample; columns "<prefix>0".."<prefix>8".
FeatureTable extract_probability_features(nn::Network<float>& net, const nn::Tensor<float>& inputs,
                                          std::vector<std::string> ids, std::vector<int> labels,
                                          const std::string& prefix);

}  // namespace malfuse
