#include "malfuse/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "malfuse/error.hpp"
#include "malfuse/io.hpp"

namespace malfuse {

namespace {

/// Read-only view of a cell sequence laid out row-major at a fixed width.
class CellGrid {
 public:
  explicit CellGrid(std::span<const ByteCell> cells)
      : cells_(cells),
        cols_(static_cast<Eigen::Index>(std::ceil(std::sqrt(static_cast<double>(cells.size()))))),
        rows_(0) {
    while (cols_ * cols_ < static_cast<Eigen::Index>(cells.size())) ++cols_;  // guard sqrt rounding
    while (cols_ > 1 && (cols_ - 1) * (cols_ - 1) >= static_cast<Eigen::Index>(cells.size())) --cols_;
    rows_ = (static_cast<Eigen::Index>(cells.size()) + cols_ - 1) / cols_;
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  double operator()(Eigen::Index r, Eigen::Index c) const {
    const auto i = static_cast<std::size_t>(r * cols_ + c);
    if (i >= cells_.size() || !cells_[i]) return 0.0;
    return static_cast<double>(*cells_[i]);
  }

 private:
  std::span<const ByteCell> cells_;
  Eigen::Index cols_;
  Eigen::Index rows_;
};

void write_f32_le(std::ostream& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32_le(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

void throw_empty_fit() { throw Error(ErrorKind::EmptyInput, "min-max fit needs at least one row"); }

void throw_width_mismatch(Eigen::Index got, Eigen::Index expected) {
  throw Error(ErrorKind::WidthMismatch, "row width " + std::to_string(got) + ", expected " + std::to_string(expected));
}

Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> byte_grid(std::span<const ByteCell> cells) {
  if (cells.empty()) throw Error(ErrorKind::EmptyInput, "no byte cells");
  const CellGrid grid(cells);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(grid.rows(), grid.cols());
  for (Eigen::Index r = 0; r < grid.rows(); ++r)
    for (Eigen::Index c = 0; c < grid.cols(); ++c) out(r, c) = grid(r, c);
  return out;
}

ByteImage bytes_to_image(std::span<const ByteCell> cells) {
  if (cells.empty()) throw Error(ErrorKind::EmptyInput, "no byte cells");
  ByteImage image;
  image.source_length = cells.size();
  image.pixels = resize_bilinear(CellGrid(cells), kImageSide, kImageSide) / 255.0;
  image.pixels = image.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return image;
}

ByteImage bytes_to_image(std::span<const ByteRecord> records) {
  std::vector<ByteCell> cells;
  std::size_t n = 0;
  for (const auto& r : records) n += r.values.size();
  cells.reserve(n);
  for (const auto& r : records) cells.insert(cells.end(), r.values.begin(), r.values.end());
  return bytes_to_image(std::span<const ByteCell>(cells));
}

OpcodeVocabulary build_vocabulary(std::span<const AsmDocument> train_docs, std::size_t cap) {
  std::map<std::string, std::size_t> df;
  for (const auto& doc : train_docs) {
    std::vector<std::string_view> seen(doc.opcode_stream.begin(), doc.opcode_stream.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (auto m : seen) ++df[std::string(m)];
  }
  if (df.empty()) throw Error(ErrorKind::NoOpcodesFound, "no mnemonics in " + std::to_string(train_docs.size()) + " documents");
  std::vector<std::pair<std::string, std::size_t>> entries(df.begin(), df.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (entries.size() > cap) entries.resize(cap);
  OpcodeVocabulary vocab;
  for (auto& [m, count] : entries) {
    vocab.mnemonics.push_back(m);
    vocab.document_frequency.push_back(count);
  }
  return vocab;
}

OpcodeTfVector extract_opcode_tf(const AsmDocument& doc, const OpcodeVocabulary& vocab, std::string id) {
  std::unordered_map<std::string_view, Eigen::Index> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab.mnemonics[i], static_cast<Eigen::Index>(i));
  OpcodeTfVector tf{std::move(id), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.size()))};
  for (const auto& m : doc.opcode_stream)
    if (auto it = index.find(m); it != index.end()) tf.counts(it->second) += 1.0;
  return tf;
}

std::vector<Eigen::Index> FeatureTable::rows_of(std::span<const std::string> wanted) const {
  std::unordered_map<std::string_view, Eigen::Index> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], static_cast<Eigen::Index>(i));
  std::vector<Eigen::Index> out;
  out.reserve(wanted.size());
  for (const auto& id : wanted) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorKind::IdSetMismatch, "id " + id + " not in table");
    out.push_back(it->second);
  }
  return out;
}

FeatureTable FeatureTable::select_rows(std::span<const std::string> wanted) const {
  const auto idx = rows_of(wanted);
  FeatureTable t;
  t.columns = columns;
  t.values.resize(static_cast<Eigen::Index>(idx.size()), cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    t.ids.push_back(ids[idx[i]]);
    t.labels.push_back(labels[idx[i]]);
    t.values.row(static_cast<Eigen::Index>(i)) = values.row(idx[i]);
  }
  return t;
}

FeatureTable FeatureTable::select_columns(std::span<const Eigen::Index> cols) const {
  FeatureTable t;
  t.ids = ids;
  t.labels = labels;
  t.values.resize(rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    t.columns.push_back(columns[cols[j]]);
    t.values.col(static_cast<Eigen::Index>(j)) = values.col(cols[j]);
  }
  return t;
}

void write_feature_table(const FeatureTable& table, std::ostream& out) {
  out << "id,label";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    out << table.ids[i] << ',' << table.labels[i];
    for (Eigen::Index j = 0; j < table.cols(); ++j) out << ',' << io::format_real(table.values(i, j));
    out << '\n';
  }
}

void write_feature_table(const FeatureTable& table, const std::filesystem::path& path) {
  auto out = io::open_output(path);
  write_feature_table(table, out);
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

FeatureTable read_feature_table(std::istream& in) {
  FeatureTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::IoFailure, "feature table has no header");
  const auto header = io::split(io::trim(line), ',');
  if (header.size() < 2 || header[0] != "id" || header[1] != "label")
    throw Error(ErrorKind::IoFailure, "feature table header must start with id,label");
  for (std::size_t j = 2; j < header.size(); ++j) t.columns.emplace_back(header[j]);
  std::vector<double> flat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = io::trim(line);
    if (view.empty()) continue;
    const auto fields = io::split(view, ',');
    if (fields.size() != header.size())
      throw Error(ErrorKind::IoFailure, "feature table line " + std::to_string(line_no) + ": wrong field count");
    t.ids.emplace_back(fields[0]);
    t.labels.push_back(static_cast<int>(io::parse_int(fields[1])));
    for (std::size_t j = 2; j < fields.size(); ++j) flat.push_back(io::parse_real(fields[j]));
  }
  const auto rows = static_cast<Eigen::Index>(t.ids.size()), cols = static_cast<Eigen::Index>(t.columns.size());
  t.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), rows, cols);
  return t;
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  auto in = io::open_input(path);
  return read_feature_table(in);
}

FeatureTable assemble_feature_table(std::span<const Sample> samples, std::span<const AsmDocument> docs,
                                    const OpcodeVocabulary& vocab) {
  if (samples.size() != docs.size()) throw Error(ErrorKind::IdSetMismatch, "one document per sample required");
  FeatureTable t;
  t.columns = vocab.mnemonics;
  t.values.resize(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(vocab.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    t.ids.push_back(samples[i].id);
    t.labels.push_back(samples[i].label);
    t.values.row(static_cast<Eigen::Index>(i)) = extract_opcode_tf(docs[i], vocab).counts.transpose();
  }
  return t;
}

void write_vocabulary(const OpcodeVocabulary& vocab, const std::filesystem::path& path) {
  std::vector<std::string> lines{"mnemonic,document_frequency"};
  for (std::size_t i = 0; i < vocab.size(); ++i)
    lines.push_back(vocab.mnemonics[i] + "," + std::to_string(vocab.document_frequency[i]));
  io::write_lines(path, lines);
}

OpcodeVocabulary read_vocabulary(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  OpcodeVocabulary v;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], ',');
    if (f.size() != 2) throw Error(ErrorKind::IoFailure, path.string() + ": bad vocabulary row");
    v.mnemonics.emplace_back(f[0]);
    v.document_frequency.push_back(static_cast<std::size_t>(io::parse_int(f[1])));
  }
  return v;
}

void write_normalizer(const NormalizerParams& params, const std::filesystem::path& path) {
  std::vector<std::string> lines{"column,min,max"};
  for (Eigen::Index j = 0; j < params.width(); ++j)
    lines.push_back(std::to_string(j) + "," + io::format_real(params.min(j)) + "," + io::format_real(params.max(j)));
  io::write_lines(path, lines);
}

NormalizerParams read_normalizer(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::vector<double> lo, hi;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    const auto f = io::split(lines[i], ',');
    if (f.size() != 3) throw Error(ErrorKind::IoFailure, path.string() + ": bad normalizer row");
    lo.push_back(io::parse_real(f[1]));
    hi.push_back(io::parse_real(f[2]));
  }
  NormalizerParams p;
  p.min = Eigen::Map<Eigen::RowVectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  p.max = Eigen::Map<Eigen::RowVectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  return p;
}

void write_image_store(const std::filesystem::path& path, std::span<const std::string> ids,
                       std::span<const ByteImage> images) {
  if (ids.size() != images.size()) throw Error(ErrorKind::IdSetMismatch, "one id per image required");
  auto out = io::open_output(path, true);
  for (const auto& img : images)
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) write_f32_le(out, static_cast<float>(img.pixels.data()[i]));
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
  io::write_lines(path.string() + ".ids", std::vector<std::string>(ids.begin(), ids.end()));
}

std::vector<ByteImage> read_image_store(const std::filesystem::path& path, std::vector<std::string>* ids) {
  const std::string blob = io::read_file(path);
  constexpr std::size_t per_image = kImageSide * kImageSide * 4;
  if (blob.size() % per_image != 0) throw Error(ErrorKind::IoFailure, path.string() + ": truncated image store");
  auto id_lines = io::read_lines(path.string() + ".ids");
  std::erase_if(id_lines, [](const std::string& s) { return io::trim(s).empty(); });
  if (id_lines.size() != blob.size() / per_image)
    throw Error(ErrorKind::IoFailure, path.string() + ": id sidecar does not match image count");
  std::vector<ByteImage> images(id_lines.size());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (std::size_t k = 0; k < images.size(); ++k)
    for (Eigen::Index i = 0; i < kImageSide * kImageSide; ++i)
      images[k].pixels.data()[i] = read_f32_le(bytes + k * per_image + static_cast<std::size_t>(i) * 4);
  if (ids) *ids = std::move(id_lines);
  return images;
}

}  // namespace malfuse
