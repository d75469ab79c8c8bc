#include "malfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "malfuse/error.hpp"
#include "malfuse/io.hpp"
#include "malfuse/random.hpp"

namespace malfuse {

namespace {

constexpr double kJitter = 0.2;

std::size_t pool_index(const std::vector<std::string>& pool, std::string_view name) {
  return static_cast<std::size_t>(std::find(pool.begin(), pool.end(), name) - pool.begin());
}

std::string random_id(Rng& rng) {
  static constexpr std::string_view alphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
  std::string id(20, '0');
  for (auto& c : id) c = alphabet[rng.below(alphabet.size())];
  return id;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::vector<ByteCell> make_bytes(const FamilyProfile& fam, Rng& rng) {
  const auto n = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(fam.min_bytes),
                                                      static_cast<std::int64_t>(fam.max_bytes)));
  ByteTexture texture = fam.texture;
  if (rng.uniform() < fam.texture_flip_prob) texture = static_cast<ByteTexture>(rng.below(3));
  const double level = std::clamp(fam.texture_level + 0.08 * rng.normal(), 0.0, 1.0);

  std::vector<ByteCell> bytes(n);
  switch (texture) {
    case ByteTexture::Wave: {
      const double period = rng.uniform(40.0, 200.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double base = 64.0 + 128.0 * level;
      for (std::size_t i = 0; i < n; ++i)
        bytes[i] = clamp_byte(base + 60.0 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / period + phase) +
                              12.0 * rng.normal());
      break;
    }
    case ByteTexture::Noise: {
      const double top = 96.0 + 159.0 * level;
      for (auto& b : bytes) b = clamp_byte(rng.uniform(0.0, top));
      break;
    }
    case ByteTexture::Sparse: {
      for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(17));
      const double density = 0.1 + 0.3 * level;
      std::size_t i = 0;
      while (i < n) {
        const auto gap = static_cast<std::size_t>(rng.between(8, 64));
        i += static_cast<std::size_t>(static_cast<double>(gap) / density);
        const auto run = static_cast<std::size_t>(rng.between(8, 48));
        const std::uint8_t value = clamp_byte(160.0 + 95.0 * level - 20.0 * rng.uniform());
        for (std::size_t k = i; k < std::min(n, i + run); ++k) bytes[k] = value;
        i += run;
      }
      break;
    }
  }
  // Some files end in unreadable memory.
  if (rng.uniform() < 0.1) {
    const auto run = std::min<std::size_t>(n - 1, static_cast<std::size_t>(rng.between(16, 160)));
    for (std::size_t k = n - run; k < n; ++k) bytes[k] = std::nullopt;
  }
  return bytes;
}

void write_bytes_file(const std::filesystem::path& path, const std::vector<ByteCell>& bytes) {
  auto out = io::open_output(path);
  char buf[16];
  std::uint32_t offset = 0x00401000;
  for (std::size_t i = 0; i < bytes.size(); i += 16) {
    std::snprintf(buf, sizeof(buf), "%08X", offset);
    out << buf;
    for (std::size_t k = i; k < std::min(bytes.size(), i + 16); ++k) {
      if (bytes[k]) {
        std::snprintf(buf, sizeof(buf), " %02X", *bytes[k]);
        out << buf;
      } else {
        out << " ??";
      }
    }
    out << '\n';
    offset += 16;
  }
}

constexpr std::string_view kOperands[] = {"eax, ebx",       "ecx, [esp+8]", "[ebp+var_4], eax", "offset sub_401000",
                                          "short loc_4010A0", "5 ; MaxCount", "edx",              "esi, 1"};

void write_asm_file(const std::filesystem::path& path, const std::vector<std::string>& mnemonics, Rng& rng) {
  auto out = io::open_output(path);
  char addr[16];
  std::uint32_t at = 0x00401000;
  auto prefix = [&](std::string_view section) {
    std::snprintf(addr, sizeof(addr), "%08X", at);
    return std::string(section) + ":" + addr;
  };
  out << prefix(".text") << " ; Segment type: Pure code\n";
  out << prefix(".text") << " _text segment para public 'CODE' use32\n";
  for (std::size_t i = 0; i < mnemonics.size(); ++i) {
    if (i % 37 == 0) out << prefix(".text") << "\n" << prefix(".text") << " loc_" << addr + 2 << ":\n";
    const auto nbytes = rng.between(1, 6);
    out << prefix(".text");
    for (std::int64_t k = 0; k < nbytes; ++k) {
      char hex[4];
      std::snprintf(hex, sizeof(hex), " %02X", static_cast<unsigned>(rng.below(256)));
      out << hex;
    }
    out << "  " << mnemonics[i] << "     " << kOperands[rng.below(std::size(kOperands))] << '\n';
    at += static_cast<std::uint32_t>(nbytes);
  }
  out << prefix(".text") << " _text ends\n";
  out << prefix(".data") << " ; Section 2. (virtual address 00404000)\n";
  out << prefix(".data") << " ; ---------------------------------------------------------------------------\n";
}

void validate(const SynthSpec& spec) {
  if (spec.opcode_pool.empty()) throw Error(ErrorKind::InvalidSpec, "empty opcode pool");
  if (spec.families.empty() || spec.families.size() > kNumFamilies)
    throw Error(ErrorKind::InvalidSpec, "need 1..9 families");
  std::set<std::string> seen;
  for (const auto& op : spec.opcode_pool) {
    if (!seen.insert(op).second) throw Error(ErrorKind::InvalidSpec, "duplicate opcode " + op);
    if (extract_mnemonic(".text:00401000 " + op) != op)
      throw Error(ErrorKind::InvalidSpec, "opcode '" + op + "' is not a lowercase mnemonic token");
  }
  for (std::size_t f = 0; f < spec.families.size(); ++f) {
    const auto& fam = spec.families[f];
    const std::string where = "family " + std::to_string(f);
    if (fam.opcode_weights.size() != spec.opcode_pool.size())
      throw Error(ErrorKind::InvalidSpec, where + ": opcode weights do not match pool size");
    double total = 0;
    for (double w : fam.opcode_weights) {
      if (!(w >= 0)) throw Error(ErrorKind::InvalidSpec, where + ": negative opcode weight");
      total += w;
    }
    if (total <= 0) throw Error(ErrorKind::InvalidSpec, where + ": opcode weights sum to zero");
    if (fam.min_bytes == 0 || fam.min_bytes > fam.max_bytes)
      throw Error(ErrorKind::InvalidSpec, where + ": bad byte length range");
    if (fam.min_instructions > fam.max_instructions)
      throw Error(ErrorKind::InvalidSpec, where + ": bad instruction count range");
    if (fam.texture_level < 0 || fam.texture_level > 1 || fam.texture_flip_prob < 0 || fam.texture_flip_prob > 1)
      throw Error(ErrorKind::InvalidSpec, where + ": texture parameters outside [0,1]");
  }
}

}  // namespace

const std::vector<std::string>& default_opcode_pool() {
  static const std::vector<std::string> pool = {
      "mov",  "push",  "call", "pop",  "lea",   "cmp",  "jz",    "jmp",  "add",  "test",
      "sub",  "jnz",   "xor",  "retn", "and",   "inc",  "or",    "dec",  "movzx", "jb",
      "shl",  "shr",   "nop",  "leave", "imul", "jbe",  "ja",    "jl",   "jg",   "sar",
      "movsx", "sbb",  "adc",  "not",  "neg",   "xchg", "rol",   "ror",  "setz", "cdq"};
  return pool;
}

SynthSpec default_synth_spec(int families, std::size_t per_family) {
  if (families < 1 || families > kNumFamilies) throw Error(ErrorKind::InvalidSpec, "need 1..9 families");
  SynthSpec spec;
  spec.opcode_pool = default_opcode_pool();
  const auto& pool = spec.opcode_pool;
  const std::size_t xor_i = pool_index(pool, "xor"), rol_i = pool_index(pool, "rol"), nop_i = pool_index(pool, "nop");

  constexpr double xor_level[3] = {0.03, 0.07, 0.11};
  constexpr double rol_level[3] = {0.08, 0.02, 0.05};
  constexpr double nop_level[3] = {0.020, 0.026, 0.032};
  constexpr ByteTexture textures[3] = {ByteTexture::Wave, ByteTexture::Noise, ByteTexture::Sparse};

  for (int f = 0; f < families; ++f) {
    const int a = f / 3, b = f % 3;
    FamilyProfile fam;
    fam.count = per_family;
    fam.opcode_weights.resize(pool.size());
    double rest = 0;
    for (std::size_t k = 0; k < pool.size(); ++k) {
      if (k == xor_i || k == rol_i || k == nop_i) continue;
      fam.opcode_weights[k] = 1.0 / static_cast<double>(k + 1);
      rest += fam.opcode_weights[k];
    }
    const double markers = xor_level[a] + rol_level[a] + nop_level[b];
    for (auto& w : fam.opcode_weights) w *= (1.0 - markers) / rest;
    fam.opcode_weights[xor_i] = xor_level[a];
    fam.opcode_weights[rol_i] = rol_level[a];
    fam.opcode_weights[nop_i] = nop_level[b];
    fam.texture = textures[b];
    fam.texture_level = 0.4 + 0.1 * a;
    fam.texture_flip_prob = 0.1;
    spec.families.push_back(std::move(fam));
  }
  return spec;
}

SynthCorpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  validate(spec);
  std::filesystem::create_directories(out_dir);
  Rng rng(seed);
  const auto& pool = spec.opcode_pool;
  // Per-sample multiplicative jitter on the mixture so families overlap.
  std::vector<SynthSampleTruth> truth;
  std::set<std::string> used_ids;
  for (std::size_t f = 0; f < spec.families.size(); ++f) {
    const auto& fam = spec.families[f];
    for (std::size_t i = 0; i < fam.count; ++i) {
      SynthSampleTruth t;
      do {
        t.id = random_id(rng);
      } while (!used_ids.insert(t.id).second);
      t.label = static_cast<int>(f);
      t.bytes = make_bytes(fam, rng);

      std::vector<double> weights(fam.opcode_weights);
      double total = 0;
      for (auto& w : weights) {
        w *= std::max(0.0, 1.0 + kJitter * rng.normal());
        total += w;
      }
      if (total <= 0) {
        weights = fam.opcode_weights;
        total = 0;
        for (double w : weights) total += w;
      }
      const auto n = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(fam.min_instructions),
                                                          static_cast<std::int64_t>(fam.max_instructions)));
      std::vector<std::string> mnemonics;
      mnemonics.reserve(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& m = pool[rng.categorical(weights, total)];
        mnemonics.push_back(m);
        ++t.opcode_counts[m];
      }
      write_bytes_file(out_dir / (t.id + ".bytes"), t.bytes);
      write_asm_file(out_dir / (t.id + ".asm"), mnemonics, rng);
      truth.push_back(std::move(t));
    }
  }

  std::sort(truth.begin(), truth.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  {
    auto out = io::open_output(out_dir / "trainLabels.csv");
    out << "\"Id\",\"Class\"\n";
    for (const auto& t : truth) out << '"' << t.id << "\"," << (t.label + 1) << '\n';
  }
  SynthCorpus corpus;
  corpus.manifest = ingest_corpus(out_dir, load_labels(out_dir / "trainLabels.csv"));
  corpus.truth = std::move(truth);
  return corpus;
}

}  // namespace malfuse
