#include <sstream>

#include "doctest.h"
#include "malfuse/error.hpp"
#include "malfuse/features.hpp"
#include "malfuse/random.hpp"
#include "temp_dir.hpp"

using namespace malfuse;

namespace {

AsmDocument doc_of(std::vector<std::string> ops) {
  AsmDocument d;
  d.opcode_stream = std::move(ops);
  return d;
}

}  // namespace

TEST_CASE("constant byte files give constant images") {
  std::vector<ByteCell> ones(1024, ByteCell{255}), zeros(1024, ByteCell{0});
  const auto a = bytes_to_image(ones);
  const auto b = bytes_to_image(zeros);
  CHECK(a.pixels.minCoeff() == doctest::Approx(1.0));
  CHECK(a.pixels.maxCoeff() == doctest::Approx(1.0));
  CHECK(b.pixels.maxCoeff() == 0.0);
  CHECK(a.source_length == 1024);
}

TEST_CASE("64x64 layout downsamples to 2x2 block means") {
  Rng rng(5);
  std::vector<ByteCell> cells(4096);
  for (auto& c : cells) c = static_cast<std::uint8_t>(rng.below(256));
  const auto img = bytes_to_image(cells);
  double worst = 0;
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      auto at = [&](int rr, int cc) { return static_cast<double>(*cells[static_cast<std::size_t>(rr * 64 + cc)]); };
      const double mean = (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1)) / 4;
      worst = std::max(worst, std::abs(mean / 255.0 - img.pixels(r, c)));
    }
  CHECK(worst < 1e-6);
}

TEST_CASE("byte image edge cases") {
  std::vector<ByteCell> one{ByteCell{128}};
  const auto img = bytes_to_image(one);
  CHECK(img.pixels(0, 0) == doctest::Approx(128.0 / 255));
  std::vector<ByteCell> unknown(100, std::nullopt);
  CHECK(bytes_to_image(unknown).pixels.maxCoeff() == 0.0);
  std::vector<ByteCell> none;
  CHECK_THROWS_AS(bytes_to_image(none), Error);

  Rng rng(2);
  std::vector<ByteCell> big(50000);
  for (auto& c : big) c = static_cast<std::uint8_t>(rng.below(256));
  const auto b = bytes_to_image(big);
  CHECK(b.pixels.minCoeff() >= 0.0);
  CHECK(b.pixels.maxCoeff() <= 1.0);
}

TEST_CASE("grid layout pads the last row") {
  std::vector<ByteCell> cells{ByteCell{1}, ByteCell{2}, ByteCell{3}, ByteCell{4}, ByteCell{5}};
  const auto g = byte_grid(cells);
  CHECK(g.rows() == 2);
  CHECK(g.cols() == 3);
  CHECK(g(1, 1) == 5);
  CHECK(g(1, 2) == 0);
}

TEST_CASE("vocabulary order and cap") {
  std::vector<AsmDocument> docs{doc_of({"push", "mov"}), doc_of({"mov"})};
  const auto v = build_vocabulary(docs);
  CHECK(v.mnemonics == std::vector<std::string>{"mov", "push"});
  CHECK(v.document_frequency == std::vector<std::size_t>{2, 1});
  CHECK(build_vocabulary(docs, 1).mnemonics == std::vector<std::string>{"mov"});
  std::vector<AsmDocument> empty{doc_of({})};
  CHECK_THROWS_AS(build_vocabulary(empty), Error);
}

TEST_CASE("term frequencies") {
  OpcodeVocabulary vocab{{"push", "mov", "call"}, {1, 1, 1}};
  const auto listing = doc_of({"push", "lea", "mov", "xor", "push", "push", "lea", "mov", "mov", "mov", "mov",
                               "call", "cmp", "jb", "mov"});
  const auto tf = extract_opcode_tf(listing, vocab);
  CHECK(tf.counts == Eigen::Vector3d(3, 6, 1));
  CHECK(extract_opcode_tf(doc_of({}), vocab).counts.isZero());

  // Concatenation is additive.
  const auto a = doc_of({"push", "call"}), b = doc_of({"mov", "push"});
  auto ab = a;
  ab.opcode_stream.insert(ab.opcode_stream.end(), b.opcode_stream.begin(), b.opcode_stream.end());
  CHECK(extract_opcode_tf(ab, vocab).counts == extract_opcode_tf(a, vocab).counts + extract_opcode_tf(b, vocab).counts);
}

TEST_CASE("min-max normalization") {
  Eigen::MatrixXd train(3, 2);
  train << 2, 5, 4, 5, 6, 5;
  const auto p = minmax_fit(train);
  CHECK(p.min(0) == 2);
  CHECK(p.max(0) == 6);
  CHECK(p.min(1) == 5);
  Eigen::MatrixXd probe(1, 2);
  probe << 4, 17;
  auto out = minmax_apply(p, probe);
  CHECK(out(0, 0) == 0.5);
  CHECK(out(0, 1) == 0.0);
  probe << 8, 5;
  CHECK(minmax_apply(p, probe)(0, 0) == 1.0);
  const auto t = minmax_apply(p, train);
  CHECK(t(0, 0) == 0.0);
  CHECK(t(2, 0) == 1.0);
  Eigen::MatrixXd wide(1, 3);
  CHECK_THROWS_AS(minmax_apply(p, wide), Error);

  Rng rng(9);
  Eigen::MatrixXd r(10, 3);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-5, 5);
  const auto q = minmax_fit(r);
  for (int j = 0; j < 3; ++j) {
    double lo = r(0, j), hi = r(0, j);
    for (int i = 1; i < 10; ++i) lo = std::min(lo, r(i, j)), hi = std::max(hi, r(i, j));
    CHECK(q.min(j) == lo);
    CHECK(q.max(j) == hi);
  }
}

TEST_CASE("feature table round trip") {
  std::vector<Sample> samples{{"a", 1, {}, {}}, {"b", 3, {}, {}}};
  std::vector<AsmDocument> docs{doc_of({"push", "push", "mov"}), doc_of({"mov"})};
  const auto vocab = build_vocabulary(docs);
  const auto table = assemble_feature_table(samples, docs, vocab);
  CHECK(table.rows() == 2);
  CHECK(table.columns == std::vector<std::string>{"mov", "push"});
  std::stringstream s;
  write_feature_table(table, s);
  CHECK(s.str().rfind("id,label,mov,push\n", 0) == 0);
  const auto back = read_feature_table(s);
  CHECK(back.ids == table.ids);
  CHECK(back.labels == table.labels);
  CHECK(back.values == table.values);

  std::vector<std::string> want{"b"};
  CHECK(table.select_rows(want).values(0, 0) == 1);
  std::vector<std::string> bad{"zz"};
  CHECK_THROWS_AS(table.rows_of(bad), Error);
}

TEST_CASE("image store round trip") {
  test::TempDir dir("images");
  std::vector<ByteCell> cells(300, ByteCell{77});
  std::vector<ByteImage> imgs{bytes_to_image(cells), ByteImage{}};
  std::vector<std::string> ids{"x", "y"};
  write_image_store(dir / "images.f32", ids, imgs);
  std::vector<std::string> got;
  const auto back = read_image_store(dir / "images.f32", &got);
  CHECK(got == ids);
  REQUIRE(back.size() == 2);
  CHECK((back[0].pixels - imgs[0].pixels).cwiseAbs().maxCoeff() < 1e-7);
}
