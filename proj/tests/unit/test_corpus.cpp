#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "malfuse/corpus.hpp"
#include "malfuse/error.hpp"
#include "malfuse/synth.hpp"
#include "temp_dir.hpp"

using namespace malfuse;

namespace {

const char* kListing =
    ".text:00402078 50          push     eax\n"
    ".text:00402079 8D 44 24 20  lea     eax, [esp+2Ch+var_C]\n"
    ".text:0040207D 64 A3 00 00 00 mov     large fs:0, eax\n"
    ".text:00402083 33 C0       xor     eax, eax\n"
    ".text:00402085 6A 05       push    5 ; MaxCount\n"
    ".text:00402087 68 40 BB 42 00 push   offset a9gw0p ; \"9gw0p\"\n"
    ".text:0040208C 8D 4C 24 0C  lea     ecx, [esp+34h+var_28]\n"
    ".text:00402090 89 44 24 30  mov     [esp+34h+var_4], eax\n"
    ".text:00402094 C7 44 24 24 0F 00 00 00 mov     [esp+34h+var_10], 0Fh\n"
    ".text:0040209C 89 44 24 20  mov     [esp+34h+var_14], eax\n"
    ".text:004020A0 88 44 24 10  mov     byte ptr [esp+34h+var_24], al\n"
    ".text:004020A4 E8 B5 C6 03 00 call   sub_43E75E\n"
    ".text:004020A9 83 7C 24 1C 10 cmp     [esp+2Ch+var_10], 10h\n"
    ".text:004020AE 72 0D       jb     short loc_4020BD\n"
    ".text:004020B0 8B 44 24 08  mov     eax, [esp+2Ch+var_24]\n";

std::map<std::string, std::size_t> count(const std::vector<std::string>& stream) {
  std::map<std::string, std::size_t> m;
  for (const auto& s : stream) ++m[s];
  return m;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::StageError;
}

CorpusManifest fake_manifest(const std::array<std::size_t, kNumFamilies>& hist) {
  CorpusManifest m;
  int n = 0;
  for (int f = 0; f < kNumFamilies; ++f)
    for (std::size_t i = 0; i < hist[static_cast<std::size_t>(f)]; ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "s%06d", n++);
      m.samples.push_back({id, f, {}, {}});
    }
  std::sort(m.samples.begin(), m.samples.end(), [](auto& a, auto& b) { return a.id < b.id; });
  m.class_histogram = hist;
  return m;
}

const std::array<std::size_t, kNumFamilies> kBig15 = {1541, 2478, 2942, 475, 42, 751, 398, 1228, 1013};

}  // namespace

TEST_CASE("bytes parser decodes hex and unknown cells") {
  std::istringstream in("00401000 4D 5A 90\n00401003 ?? FF\n");
  const auto recs = parse_bytes_file(in);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].offset == "00401000");
  CHECK(recs[0].values == std::vector<ByteCell>{77, 90, 144});
  CHECK_FALSE(recs[1].values[0].has_value());
  CHECK(recs[1].values[1] == ByteCell{255});
}

TEST_CASE("bytes parser counts a 16x16 fixture") {
  std::ostringstream text;
  for (int l = 0; l < 16; ++l) {
    text << "0040" << l << "000";
    for (int b = 0; b < 16; ++b) text << " A" << std::hex << std::uppercase << b;
    text << '\n';
  }
  std::istringstream in(text.str());
  const auto recs = parse_bytes_file(in);
  CHECK(recs.size() == 16);
  std::size_t cells = 0;
  for (const auto& r : recs) cells += r.values.size();
  CHECK(cells == 256);
}

TEST_CASE("bytes parser errors") {
  std::istringstream bad("00401000 4D\n00401001 4G\n");
  try {
    parse_bytes_file(bad);
    FAIL("expected MalformedLine");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MalformedLine);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream empty("");
  CHECK(kind_of([&] { parse_bytes_file(empty); }) == ErrorKind::EmptyFile);
  std::istringstream odd("00401000 4D5\n");
  CHECK(kind_of([&] { parse_bytes_file(odd); }) == ErrorKind::MalformedLine);
}

TEST_CASE("mnemonic extraction") {
  CHECK(extract_mnemonic(".text:00402078 50 push eax") == "push");
  CHECK(extract_mnemonic(".text:00402078 50          PUSH     eax") == "push");
  CHECK_FALSE(extract_mnemonic(".text:00402078 ; comment").has_value());
  CHECK_FALSE(extract_mnemonic(".text:00402078 loc_4020BD:").has_value());
  CHECK_FALSE(extract_mnemonic("push eax").has_value());
  CHECK_FALSE(extract_mnemonic("").has_value());
}

TEST_CASE("listing opcode counts") {
  std::istringstream in(kListing);
  const auto doc = parse_asm_file(in);
  const std::map<std::string, std::size_t> want{{"push", 3}, {"lea", 2}, {"mov", 6}, {"xor", 1},
                                                {"call", 1}, {"cmp", 1}, {"jb", 1}};
  CHECK(count(doc.opcode_stream) == want);
  CHECK(doc.diagnostics.opcode_lines == 15);
  REQUIRE(doc.sections.size() == 1);
  CHECK(doc.sections[0] == std::pair<std::string, std::size_t>{".text", 15});

  std::istringstream empty("");
  CHECK(parse_asm_file(empty).opcode_stream.empty());
}

TEST_CASE("label table") {
  std::istringstream in("\"Id\",\"Class\"\n\"01kcPWA9K2BOxQeS5R\",1\n\"04EjldbPV5e1XroFOpiN\",9\n");
  const auto labels = load_labels(in);
  CHECK(labels.at("01kcPWA9K2BOxQeS5R") == 0);
  CHECK(labels.at("04EjldbPV5e1XroFOpiN") == 8);

  std::istringstream ten("Id,Class\nx,10\n");
  CHECK(kind_of([&] { load_labels(ten); }) == ErrorKind::UnknownClass);
  std::istringstream dup("Id,Class\nx,1\nx,2\n");
  CHECK(kind_of([&] { load_labels(dup); }) == ErrorKind::DuplicateId);
}

TEST_CASE("ingest reports missing files") {
  test::TempDir dir("ingest");
  CHECK(ingest_corpus(dir.path(), {}).samples.empty());
  std::ofstream(dir / "x.bytes") << "00401000 4D\n";
  try {
    ingest_corpus(dir.path(), {{"x", 0}});
    FAIL("expected MissingFile");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingFile);
    CHECK(std::string(e.what()).find("x (asm)") != std::string::npos);
  }
}

TEST_CASE("split sizes on the full label histogram") {
  const auto sizes = split_sizes(kBig15);
  auto sum = [](const auto& a) { return std::accumulate(a.begin(), a.end(), std::size_t{0}); };
  CHECK(sum(sizes.test) == 2717);
  CHECK(sum(sizes.val) == 2038);
  CHECK(sum(sizes.train) == 6113);

  std::array<std::size_t, kNumFamilies> four{};
  four[0] = 4;
  const auto s4 = split_sizes(four);
  CHECK(s4.test[0] == 1);
  CHECK(s4.val[0] == 1);
  CHECK(s4.train[0] == 2);
}

TEST_CASE("largest remainder ties go to the earlier family") {
  // 0.25 * 2 = 0.5 each: total floor(1.0 + 0.5) = 1 goes to the first family.
  CHECK(largest_remainder({2, 2}, 0.25) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("stratified split is a deterministic partition") {
  const auto m = fake_manifest({12, 9, 30, 4, 3, 7, 11, 20, 5});
  const auto a = stratified_split(m, 7);
  const auto b = stratified_split(m, 7);
  const auto c = stratified_split(m, 8);
  CHECK(a.partition_of == b.partition_of);
  CHECK(a.partition_of != c.partition_of);
  CHECK(a.partition_of.size() == m.samples.size());
  for (auto p : {Partition::Train, Partition::Val, Partition::Test}) CHECK(a.count(p) == c.count(p));

  const auto sizes = split_sizes(m.class_histogram);
  std::array<std::size_t, kNumFamilies> test{}, val{};
  for (const auto& s : m.samples) {
    const auto p = a.partition_of.at(s.id);
    if (p == Partition::Test) ++test[static_cast<std::size_t>(s.label)];
    if (p == Partition::Val) ++val[static_cast<std::size_t>(s.label)];
  }
  CHECK(test == sizes.test);
  CHECK(val == sizes.val);

  CHECK(kind_of([&] { stratified_split(fake_manifest({2, 3, 3, 3, 3, 3, 3, 3, 3}), 1); }) ==
        ErrorKind::TooFewSamples);
}

TEST_CASE("split and manifest round trip") {
  test::TempDir dir("split");
  const auto m = fake_manifest({4, 4, 4, 4, 4, 4, 4, 4, 4});
  const auto s = stratified_split(m, 3);
  write_split(s, dir / "split.csv");
  const auto back = read_split(dir / "split.csv");
  CHECK(back.partition_of == s.partition_of);
  CHECK(back.seed == 3);
}

TEST_CASE("synthetic corpus round trips through both parsers") {
  test::TempDir a("synth_a"), b("synth_b");
  const auto spec = default_synth_spec(kNumFamilies, 4);
  const auto corpus = generate_synthetic_corpus(spec, 11, a.path());
  CHECK(corpus.manifest.samples.size() == 36);
  for (auto h : corpus.manifest.class_histogram) CHECK(h == 4);

  for (std::size_t i = 0; i < corpus.truth.size(); ++i) {
    const auto& s = corpus.manifest.samples[i];
    const auto& t = corpus.truth[i];
    REQUIRE(s.id == t.id);
    CHECK(count(parse_asm_file(s.asm_path).opcode_stream) == t.opcode_counts);
    std::vector<ByteCell> cells;
    for (const auto& r : parse_bytes_file(s.bytes_path)) cells.insert(cells.end(), r.values.begin(), r.values.end());
    CHECK(cells == t.bytes);
  }

  const auto again = generate_synthetic_corpus(spec, 11, b.path());
  CHECK(again.manifest.checksum == corpus.manifest.checksum);
  for (const auto& s : corpus.manifest.samples) {
    std::ifstream x(s.asm_path), y(b / s.asm_path.filename().string());
    std::stringstream xs, ys;
    xs << x.rdbuf();
    ys << y.rdbuf();
    CHECK(xs.str() == ys.str());
  }

  test::TempDir c("manifest");
  write_manifest(corpus.manifest, c / "manifest.csv");
  const auto back = read_manifest(c / "manifest.csv");
  CHECK(back.samples.size() == corpus.manifest.samples.size());
  CHECK(back.checksum == corpus.manifest.checksum);
  CHECK(back.samples[5].asm_path == corpus.manifest.samples[5].asm_path);
}

TEST_CASE("synthetic spec validation") {
  auto spec = default_synth_spec();
  spec.families[2].count = 0;
  spec.families[2].opcode_weights.clear();
  test::TempDir dir("bad");
  CHECK(kind_of([&] { generate_synthetic_corpus(spec, 1, dir.path()); }) == ErrorKind::InvalidSpec);
}
