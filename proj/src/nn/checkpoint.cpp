#include "malfuse/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "malfuse/io.hpp"

namespace malfuse::nn {

namespace {

constexpr char kMagic[4] = {'D', 'L', 'M', 'D'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  void put_bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorKind::CorruptCheckpoint, "truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename Scalar>
Checkpoint capture_checkpoint(Network<Scalar>& net, double best_val_log_loss, std::uint32_t epoch) {
  Checkpoint ckpt;
  ckpt.architecture = net.architecture();
  ckpt.best_val_log_loss = best_val_log_loss;
  ckpt.epoch = epoch;
  for (auto* p : net.parameters()) ckpt.tensors.push_back(p->value.template cast<float>());
  for (auto* b : net.buffers()) ckpt.tensors.push_back(b->template cast<float>());
  return ckpt;
}

template <typename Scalar>
void restore_checkpoint(const Checkpoint& ckpt, Network<Scalar>& net) {
  std::vector<Tensor<Scalar>*> targets;
  for (auto* p : net.parameters()) targets.push_back(&p->value);
  for (auto* b : net.buffers()) targets.push_back(b);
  if (targets.size() != ckpt.tensors.size())
    throw Error(ErrorKind::ShapeMismatch, "checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, network " +
                                              std::to_string(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i]->shape() != ckpt.tensors[i].shape())
      throw Error(ErrorKind::ShapeMismatch, "checkpoint tensor " + std::to_string(i) + " has shape " +
                                                shape_string(ckpt.tensors[i].shape()));
    *targets[i] = ckpt.tensors[i].template cast<Scalar>();
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer body;
  const std::string arch = ckpt.architecture.serialize();
  body.put(static_cast<std::uint32_t>(arch.size()));
  body.put_bytes(arch);
  body.put(ckpt.best_val_log_loss);
  body.put(ckpt.epoch);
  body.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    body.put(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) body.put(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) body.put(t[i]);
  }
  Writer out;
  out.put_bytes(std::string_view(kMagic, 4));
  out.put(ckpt.version);
  out.put(static_cast<std::uint64_t>(body.str().size()));
  out.put_bytes(body.str());
  return std::move(out.str());
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(in.get_bytes(4).data(), kMagic, 4) != 0)
    throw Error(ErrorKind::CorruptCheckpoint, "bad magic");
  Checkpoint ckpt;
  ckpt.version = in.get<std::uint16_t>();
  if (ckpt.version != kCheckpointVersion)
    throw Error(ErrorKind::VersionMismatch, "checkpoint version " + std::to_string(ckpt.version) + ", expected " +
                                                std::to_string(kCheckpointVersion));
  const auto length = in.get<std::uint64_t>();
  if (length != in.remaining())
    throw Error(ErrorKind::CorruptCheckpoint, "body length " + std::to_string(length) + " but " +
                                                  std::to_string(in.remaining()) + " bytes present");
  const auto arch_len = in.get<std::uint32_t>();
  ckpt.architecture = ArchitectureDescriptor::parse(in.get_bytes(arch_len));
  ckpt.best_val_log_loss = in.get<double>();
  ckpt.epoch = in.get<std::uint32_t>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw Error(ErrorKind::CorruptCheckpoint, "implausible tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(in.get<std::uint32_t>()));
    if (static_cast<std::size_t>(shape_size(shape)) * 4 > in.remaining())
      throw Error(ErrorKind::CorruptCheckpoint, "truncated tensor payload");
    Tensor<float> t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = in.get<float>();
    ckpt.tensors.push_back(std::move(t));
  }
  if (in.remaining() != 0) throw Error(ErrorKind::CorruptCheckpoint, "trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto out = io::open_output(path, true);
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(io::read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoFailure) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

template Checkpoint capture_checkpoint<float>(Network<float>&, double, std::uint32_t);
template Checkpoint capture_checkpoint<double>(Network<double>&, double, std::uint32_t);
template void restore_checkpoint<float>(const Checkpoint&, Network<float>&);
template void restore_checkpoint<double>(const Checkpoint&, Network<double>&);

}  // namespace malfuse::nn
