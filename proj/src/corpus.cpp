#include "malfuse/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "malfuse/error.hpp"
#include "malfuse/io.hpp"
#include "malfuse/random.hpp"

namespace malfuse {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

bool is_upper_hex_pair(std::string_view tok) {
  auto up = [](char c) { return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'F'); };
  return tok.size() == 2 && up(tok[0]) && up(tok[1]);
}

bool is_mnemonic(std::string_view tok) {
  if (tok.empty() || !std::isalpha(static_cast<unsigned char>(tok[0]))) return false;
  return std::all_of(tok.begin(), tok.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; });
}

std::string unquote(std::string_view s) {
  s = io::trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

}  // namespace

const std::array<std::string_view, kNumFamilies>& family_names() {
  static constexpr std::array<std::string_view, kNumFamilies> names = {
      "Ramnit", "Lollipop", "Kelihos_ver3", "Vundo", "Simda", "Tracur", "Kelihos_ver1", "Obfuscator.ACY", "Gatak"};
  return names;
}

std::vector<ByteRecord> parse_bytes_file(std::istream& in) {
  std::vector<ByteRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = io::split_whitespace(line);
    if (tokens.empty()) continue;
    ByteRecord rec;
    rec.offset = std::string(tokens[0]);
    rec.values.reserve(tokens.size() - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const auto tok = tokens[i];
      if (tok == "??") {
        rec.values.emplace_back(std::nullopt);
        continue;
      }
      const int hi = tok.size() == 2 ? hex_value(tok[0]) : -1;
      const int lo = tok.size() == 2 ? hex_value(tok[1]) : -1;
      if (hi < 0 || lo < 0)
        throw Error(ErrorKind::MalformedLine,
                    "line " + std::to_string(line_no) + ": bad byte token '" + std::string(tok) + "'");
      rec.values.emplace_back(static_cast<std::uint8_t>(hi * 16 + lo));
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw Error(ErrorKind::EmptyFile, "no byte records");
  return records;
}

std::vector<ByteRecord> parse_bytes_file(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  try {
    return parse_bytes_file(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::optional<std::string> extract_mnemonic(std::string_view line) {
  const auto tokens = io::split_whitespace(line);
  if (tokens.size() < 2 || tokens[0].find(':') == std::string_view::npos) return std::nullopt;
  std::size_t i = 1;
  while (i < tokens.size() && is_upper_hex_pair(tokens[i])) ++i;
  if (i == tokens.size() || !is_mnemonic(tokens[i])) return std::nullopt;
  std::string m(tokens[i]);
  std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return m;
}

AsmDocument parse_asm_file(std::istream& in) {
  AsmDocument doc;
  std::string line;
  while (std::getline(in, line)) {
    ++doc.diagnostics.lines;
    const std::string_view view = io::trim(line);
    const auto colon = view.find(':');
    if (!view.empty() && view.front() == '.' && colon != std::string_view::npos) {
      const auto name = view.substr(0, colon);
      auto it = std::find_if(doc.sections.begin(), doc.sections.end(), [&](const auto& s) { return s.first == name; });
      if (it == doc.sections.end())
        doc.sections.emplace_back(std::string(name), 1);
      else
        ++it->second;
    }
    if (auto m = extract_mnemonic(view)) {
      doc.opcode_stream.push_back(std::move(*m));
      ++doc.diagnostics.opcode_lines;
    } else {
      ++doc.diagnostics.skipped_lines;
    }
  }
  return doc;
}

AsmDocument parse_asm_file(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  return parse_asm_file(in);
}

std::map<std::string, int> load_labels(std::istream& in) {
  std::map<std::string, int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = io::trim(line);
    if (view.empty()) continue;
    const auto fields = io::split(view, ',');
    if (fields.size() != 2)
      throw Error(ErrorKind::MalformedLine, "labels line " + std::to_string(line_no) + ": expected id,class");
    const std::string id = unquote(fields[0]);
    const std::string cls = unquote(fields[1]);
    long long value = 0;
    try {
      value = io::parse_int(cls);
    } catch (const Error&) {
      if (line_no == 1 && labels.empty()) continue;  // header row
      throw Error(ErrorKind::UnknownClass, "labels line " + std::to_string(line_no) + ": class '" + cls + "'");
    }
    if (value < 1 || value > kNumFamilies)
      throw Error(ErrorKind::UnknownClass, "id " + id + " has class " + std::to_string(value));
    if (!labels.emplace(id, static_cast<int>(value - 1)).second)
      throw Error(ErrorKind::DuplicateId, "id " + id + " appears more than once");
  }
  return labels;
}

std::map<std::string, int> load_labels(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  return load_labels(in);
}

CorpusManifest ingest_corpus(const std::filesystem::path& root, const std::map<std::string, int>& labels) {
  namespace fs = std::filesystem;
  CorpusManifest manifest;
  manifest.root = root;
  std::uint64_t hash = 1469598103934665603ULL;
  std::vector<std::string> missing;
  for (const auto& [id, label] : labels) {
    Sample s{id, label, root / (id + ".bytes"), root / (id + ".asm")};
    bool ok = true;
    for (const auto& [path, kind] : {std::pair{s.bytes_path, "bytes"}, std::pair{s.asm_path, "asm"}}) {
      std::error_code ec;
      const auto size = fs::file_size(path, ec);
      if (ec || size == 0) {
        missing.push_back(id + " (" + kind + ")");
        ok = false;
        continue;
      }
      io::fnv1a(hash, path.filename().string());
      io::fnv1a(hash, std::to_string(size));
    }
    if (!ok) continue;
    ++manifest.class_histogram[label];
    manifest.samples.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string msg;
    for (const auto& m : missing) msg += (msg.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::MissingFile, msg);
  }
  manifest.checksum = hash;
  return manifest;
}

void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << "# root=" << manifest.root.string() << " checksum=" << manifest.checksum << '\n';
  out << "id,label,bytes,asm\n";
  for (const auto& s : manifest.samples) {
    out << s.id << ',' << s.label << ',' << std::filesystem::relative(s.bytes_path, manifest.root).string() << ','
        << std::filesystem::relative(s.asm_path, manifest.root).string() << '\n';
  }
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.size() < 2 || lines[0].rfind("# root=", 0) != 0)
    throw Error(ErrorKind::IoFailure, path.string() + ": not a manifest");
  CorpusManifest m;
  const auto head = io::split_whitespace(std::string_view(lines[0]).substr(2));
  for (auto field : head) {
    if (field.rfind("root=", 0) == 0) m.root = std::string(field.substr(5));
    if (field.rfind("checksum=", 0) == 0) m.checksum = std::stoull(std::string(field.substr(9)));
  }
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], ',');
    if (f.size() != 4) throw Error(ErrorKind::IoFailure, path.string() + ": bad manifest row " + std::to_string(i + 1));
    Sample s{std::string(f[0]), static_cast<int>(io::parse_int(f[1])), m.root / std::string(f[2]),
             m.root / std::string(f[3])};
    if (s.label < 0 || s.label >= kNumFamilies) throw Error(ErrorKind::UnknownClass, "manifest label for " + s.id);
    ++m.class_histogram[s.label];
    m.samples.push_back(std::move(s));
  }
  return m;
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::Train: return "TRAIN";
    case Partition::Val: return "VAL";
    case Partition::Test: return "TEST";
  }
  return "?";
}

std::vector<std::string> SplitAssignment::ids(Partition p) const {
  std::vector<std::string> out;
  for (const auto& [id, part] : partition_of)
    if (part == p) out.push_back(id);
  return out;
}

std::size_t SplitAssignment::count(Partition p) const {
  return static_cast<std::size_t>(
      std::count_if(partition_of.begin(), partition_of.end(), [p](const auto& kv) { return kv.second == p; }));
}

std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& counts, double fraction) {
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  const auto total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  std::vector<std::size_t> out(counts.size());
  std::vector<double> rem(counts.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double quota = fraction * static_cast<double>(counts[i]);
    out[i] = static_cast<std::size_t>(std::floor(quota));
    rem[i] = quota - std::floor(quota);
    assigned += out[i];
  }
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total && k < order.size(); ++k) {
    if (out[order[k]] < counts[order[k]]) {
      ++out[order[k]];
      ++assigned;
    }
  }
  return out;
}

SplitSizes split_sizes(const std::array<std::size_t, kNumFamilies>& histogram, double test_fraction,
                       double val_fraction) {
  SplitSizes sizes;
  const std::vector<std::size_t> counts(histogram.begin(), histogram.end());
  const auto test = largest_remainder(counts, test_fraction);
  std::vector<std::size_t> remaining(kNumFamilies);
  for (int f = 0; f < kNumFamilies; ++f) remaining[f] = counts[f] - test[f];
  const auto val = largest_remainder(remaining, val_fraction);
  for (int f = 0; f < kNumFamilies; ++f) {
    sizes.test[f] = test[f];
    sizes.val[f] = val[f];
    sizes.train[f] = remaining[f] - val[f];
  }
  return sizes;
}

SplitAssignment stratified_split(const CorpusManifest& manifest, std::uint64_t seed, double test_fraction,
                                 double val_fraction) {
  std::array<std::vector<std::string>, kNumFamilies> by_family;
  for (const auto& s : manifest.samples) by_family[s.label].push_back(s.id);
  for (int f = 0; f < kNumFamilies; ++f) {
    const auto n = by_family[f].size();
    if (n > 0 && n < 3)
      throw Error(ErrorKind::TooFewSamples,
                  std::string(family_names()[f]) + " has " + std::to_string(n) + " samples, need at least 3");
  }
  std::array<std::size_t, kNumFamilies> histogram{};
  for (int f = 0; f < kNumFamilies; ++f) histogram[f] = by_family[f].size();
  const auto sizes = split_sizes(histogram, test_fraction, val_fraction);

  SplitAssignment split;
  split.seed = seed;
  Rng rng(seed);
  for (int f = 0; f < kNumFamilies; ++f) {
    auto& ids = by_family[f];
    std::sort(ids.begin(), ids.end());
    rng.shuffle(std::span<std::string>(ids));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Partition p = i < sizes.test[f]                ? Partition::Test
                          : i < sizes.test[f] + sizes.val[f] ? Partition::Val
                                                             : Partition::Train;
      split.partition_of.emplace(ids[i], p);
    }
  }
  return split;
}

void write_split(const SplitAssignment& split, const std::filesystem::path& path) {
  auto out = io::open_output(path);
  out << "# seed=" << split.seed << '\n' << "id,partition\n";
  for (const auto& [id, p] : split.partition_of) out << id << ',' << to_string(p) << '\n';
}

SplitAssignment read_split(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.size() < 2 || lines[0].rfind("# seed=", 0) != 0)
    throw Error(ErrorKind::IoFailure, path.string() + ": not a split file");
  SplitAssignment split;
  split.seed = std::stoull(lines[0].substr(7));
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], ',');
    if (f.size() != 2) throw Error(ErrorKind::IoFailure, path.string() + ": bad split row");
    const Partition p = f[1] == "TEST" ? Partition::Test : f[1] == "VAL" ? Partition::Val : Partition::Train;
    split.partition_of.emplace(std::string(f[0]), p);
  }
  return split;
}

}  // namespace malfuse
