#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "malfuse/corpus.hpp"

namespace malfuse {

enum class ByteTexture { Wave, Noise, Sparse };

/// Generation profile for one family. `opcode_weights` is aligned with the
/// pool and need not be normalized.
struct FamilyProfile {
  std::size_t count = 0;
  std::vector<double> opcode_weights;
  ByteTexture texture = ByteTexture::Noise;
  double texture_level = 0.5;        // in [0,1]; brightness/density knob of the texture
  double texture_flip_prob = 0.0;    // chance a sample draws a random texture instead
  std::size_t min_bytes = 2048;
  std::size_t max_bytes = 4096;
  std::size_t min_instructions = 400;
  std::size_t max_instructions = 700;
};

struct SynthSpec {
  std::vector<std::string> opcode_pool;
  std::vector<FamilyProfile> families;  // index = label, at most 9
};

/// The default desk-scale corpus: family f = 3a + b, where the byte texture
/// mostly encodes b and the opcode mixture mostly encodes a, each with a weak
/// trace of the other factor. A single modality cannot separate all nine
/// families; the two together can.
SynthSpec default_synth_spec(int families = kNumFamilies, std::size_t per_family = 90);

/// The 40-mnemonic pool used by default_synth_spec.
const std::vector<std::string>& default_opcode_pool();

struct SynthSampleTruth {
  std::string id;
  int label = 0;
  std::map<std::string, std::size_t> opcode_counts;
  std::vector<ByteCell> bytes;
};

struct SynthCorpus {
  CorpusManifest manifest;
  std::vector<SynthSampleTruth> truth;  // same order as manifest.samples
};

/// Writes `<id>.bytes`, `<id>.asm` and `trainLabels.csv` under `out_dir`.
SynthCorpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace malfuse
