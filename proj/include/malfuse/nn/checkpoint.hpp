#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "malfuse/nn/network.hpp"

namespace malfuse::nn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Binary layout (little-endian):
///   "DLMD" | u16 version | u64 body length | body
/// body:
///   u32 descriptor length | descriptor text | f64 best validation log loss |
///   u32 epoch | u32 tensor count | per tensor: u32 rank, u32 dims[rank], f32 values
/// Tensors are the network's parameters followed by its buffers, in layer order.
struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  ArchitectureDescriptor architecture;
  std::vector<Tensor<float>> tensors;
  double best_val_log_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint32_t epoch = 0;
};

template <typename Scalar>
Checkpoint capture_checkpoint(Network<Scalar>& net, double best_val_log_loss = std::numeric_limits<double>::quiet_NaN(),
                              std::uint32_t epoch = 0);

/// Copies checkpoint tensors into a network of the same architecture.
template <typename Scalar>
void restore_checkpoint(const Checkpoint& ckpt, Network<Scalar>& net);

template <typename Scalar>
Network<Scalar> network_from_checkpoint(const Checkpoint& ckpt) {
  Network<Scalar> net(ckpt.architecture);
  restore_checkpoint(ckpt, net);
  return net;
}

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CorruptCheckpoint (bad magic, truncation, trailing bytes) or VersionMismatch.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace malfuse::nn
