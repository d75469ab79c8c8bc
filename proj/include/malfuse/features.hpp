#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "malfuse/corpus.hpp"

namespace malfuse {

inline constexpr int kImageSide = 32;

[[noreturn]] void throw_empty_fit();
[[noreturn]] void throw_width_mismatch(Eigen::Index got, Eigen::Index expected);

using ImageMatrix = Eigen::Matrix<double, kImageSide, kImageSide, Eigen::RowMajor>;

struct ByteImage {
  ImageMatrix pixels = ImageMatrix::Zero();
  std::size_t source_length = 0;
};

/// Bilinear resize with half-pixel centers (source coordinate
/// (i + 0.5) * in / out - 0.5, clamped to the grid). `Grid` is anything with
/// rows(), cols() and operator()(r, c), Eigen matrices included.
template <typename Grid>
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> resize_bilinear(const Grid& src,
                                                                                       Eigen::Index out_rows,
                                                                                       Eigen::Index out_cols);

/// Row-major layout of `cells` (unknown cells read as 0) into a grid of width
/// ceil(sqrt(n)), zero padded.
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> byte_grid(std::span<const ByteCell> cells);

ByteImage bytes_to_image(std::span<const ByteCell> cells);
ByteImage bytes_to_image(std::span<const ByteRecord> records);

struct OpcodeVocabulary {
  std::vector<std::string> mnemonics;
  std::vector<std::size_t> document_frequency;  // aligned with mnemonics

  std::size_t size() const { return mnemonics.size(); }
};

inline constexpr std::size_t kDefaultVocabularyCap = 500;

/// Document frequency descending, ties lexicographic, truncated to `cap`.
OpcodeVocabulary build_vocabulary(std::span<const AsmDocument> train_docs, std::size_t cap = kDefaultVocabularyCap);

struct OpcodeTfVector {
  std::string id;
  Eigen::VectorXd counts;
};

OpcodeTfVector extract_opcode_tf(const AsmDocument& doc, const OpcodeVocabulary& vocab, std::string id = {});

struct NormalizerParams {
  Eigen::RowVectorXd min;
  Eigen::RowVectorXd max;

  Eigen::Index width() const { return min.size(); }
};

template <typename Derived>
NormalizerParams minmax_fit(const Eigen::MatrixBase<Derived>& train) {
  if (train.rows() < 1) throw_empty_fit();
  return {train.colwise().minCoeff(), train.colwise().maxCoeff()};
}

/// (x - min) / (max - min), clamped to [0,1]; constant columns map to 0.
/// Works row-wise on a single row or a whole matrix.
template <typename Derived>
Eigen::MatrixXd minmax_apply(const NormalizerParams& params, const Eigen::MatrixBase<Derived>& rows);

/// A labeled, id-keyed numeric table (raw TF counts, probability blocks,
/// hybrid features).
struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> columns;
  Eigen::MatrixXd values;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  /// Row index of each id; throws IdSetMismatch on unknown ids.
  std::vector<Eigen::Index> rows_of(std::span<const std::string> wanted) const;
  FeatureTable select_rows(std::span<const std::string> wanted) const;
  FeatureTable select_columns(std::span<const Eigen::Index> cols) const;
};

void write_feature_table(const FeatureTable& table, std::ostream& out);
void write_feature_table(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable read_feature_table(std::istream& in);
FeatureTable read_feature_table(const std::filesystem::path& path);

/// Builds the id,label,<mnemonic...> count table for `samples`.
FeatureTable assemble_feature_table(std::span<const Sample> samples, std::span<const AsmDocument> docs,
                                    const OpcodeVocabulary& vocab);

void write_vocabulary(const OpcodeVocabulary& vocab, const std::filesystem::path& path);
OpcodeVocabulary read_vocabulary(const std::filesystem::path& path);

void write_normalizer(const NormalizerParams& params, const std::filesystem::path& path);
NormalizerParams read_normalizer(const std::filesystem::path& path);

/// Images as float32 little-endian, 1024 per sample, plus `<path>.ids`.
void write_image_store(const std::filesystem::path& path, std::span<const std::string> ids,
                       std::span<const ByteImage> images);
std::vector<ByteImage> read_image_store(const std::filesystem::path& path, std::vector<std::string>* ids = nullptr);

// ---------------------------------------------------------------------------

template <typename Grid>
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> resize_bilinear(const Grid& src,
                                                                                       Eigen::Index out_rows,
                                                                                       Eigen::Index out_cols) {
  const Eigen::Index in_rows = src.rows(), in_cols = src.cols();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(out_rows, out_cols);
  auto coord = [](Eigen::Index i, Eigen::Index in, Eigen::Index outn, Eigen::Index& lo, Eigen::Index& hi, double& t) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<Eigen::Index>(s);
    hi = std::min(lo + 1, in - 1);
    t = s - static_cast<double>(lo);
  };
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    Eigen::Index r0, r1;
    double tr;
    coord(r, in_rows, out_rows, r0, r1, tr);
    for (Eigen::Index c = 0; c < out_cols; ++c) {
      Eigen::Index c0, c1;
      double tc;
      coord(c, in_cols, out_cols, c0, c1, tc);
      const double top = (1 - tc) * static_cast<double>(src(r0, c0)) + tc * static_cast<double>(src(r0, c1));
      const double bottom = (1 - tc) * static_cast<double>(src(r1, c0)) + tc * static_cast<double>(src(r1, c1));
      out(r, c) = (1 - tr) * top + tr * bottom;
    }
  }
  return out;
}

template <typename Derived>
Eigen::MatrixXd minmax_apply(const NormalizerParams& params, const Eigen::MatrixBase<Derived>& rows) {
  if (rows.cols() != params.width()) throw_width_mismatch(rows.cols(), params.width());
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double lo = params.min(j), range = params.max(j) - params.min(j);
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      out(i, j) = range > 0 ? std::clamp((static_cast<double>(rows(i, j)) - lo) / range, 0.0, 1.0) : 0.0;
  }
  return out;
}

}  // namespace malfuse
