#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace malfuse {

inline constexpr int kNumFamilies = 9;

/// Family names in label order (label 0 is class 1 in trainLabels.csv).
const std::array<std::string_view, kNumFamilies>& family_names();

struct Sample {
  std::string id;
  int label = 0;
  std::filesystem::path bytes_path;
  std::filesystem::path asm_path;
};

/// One byte cell; std::nullopt marks an unreadable `??` byte.
using ByteCell = std::optional<std::uint8_t>;

struct ByteRecord {
  std::string offset;
  std::vector<ByteCell> values;
};

struct AsmDiagnostics {
  std::size_t lines = 0;
  std::size_t opcode_lines = 0;
  std::size_t skipped_lines = 0;  // blank, unprefixed, or no mnemonic after the hex bytes
};

struct AsmDocument {
  std::vector<std::pair<std::string, std::size_t>> sections;  // (name, line count), first-seen order
  std::vector<std::string> opcode_stream;
  AsmDiagnostics diagnostics;
};

std::vector<ByteRecord> parse_bytes_file(std::istream& in);
std::vector<ByteRecord> parse_bytes_file(const std::filesystem::path& path);

/// Mnemonic of one listing line, or nullopt when the line carries none.
std::optional<std::string> extract_mnemonic(std::string_view line);

AsmDocument parse_asm_file(std::istream& in);
AsmDocument parse_asm_file(const std::filesystem::path& path);

/// id -> label in 0..8. Accepts the BIG-2015 header row and quoted ids.
std::map<std::string, int> load_labels(std::istream& in);
std::map<std::string, int> load_labels(const std::filesystem::path& path);

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<Sample> samples;  // sorted by id
  std::array<std::size_t, kNumFamilies> class_histogram{};
  std::uint64_t checksum = 0;  // FNV-1a over (file name, size) of every referenced file
};

CorpusManifest ingest_corpus(const std::filesystem::path& root, const std::map<std::string, int>& labels);

void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
CorpusManifest read_manifest(const std::filesystem::path& path);

enum class Partition : std::uint8_t { Train, Val, Test };

std::string_view to_string(Partition p);

struct SplitAssignment {
  std::map<std::string, Partition> partition_of;
  std::uint64_t seed = 0;

  std::vector<std::string> ids(Partition p) const;
  std::size_t count(Partition p) const;
};

/// Largest-remainder apportionment of `fraction * sum(counts)` over the
/// groups, ties going to the earlier group.
std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& counts, double fraction);

/// Per-family test/val sizes; test is `test_fraction` of the family, val is
/// `val_fraction` of what remains.
struct SplitSizes {
  std::array<std::size_t, kNumFamilies> test{};
  std::array<std::size_t, kNumFamilies> val{};
  std::array<std::size_t, kNumFamilies> train{};
};

SplitSizes split_sizes(const std::array<std::size_t, kNumFamilies>& histogram, double test_fraction = 0.25,
                       double val_fraction = 0.25);

SplitAssignment stratified_split(const CorpusManifest& manifest, std::uint64_t seed, double test_fraction = 0.25,
                                 double val_fraction = 0.25);

void write_split(const SplitAssignment& split, const std::filesystem::path& path);
SplitAssignment read_split(const std::filesystem::path& path);

}  // namespace malfuse
