#include "malfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "malfuse/config.hpp"
#include "malfuse/error.hpp"
#include "malfuse/io.hpp"
#include "malfuse/nn/checkpoint.hpp"
#include "malfuse/nn/loss.hpp"
#include "malfuse/synth.hpp"

namespace malfuse {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;

// ---------------------------------------------------------------- metrics

namespace {

void check_batch(const PredictionBatch& b) {
  if (b.probabilities.rows() != static_cast<Index>(b.labels.size()))
    throw Error(ErrorKind::ShapeMismatch, "prediction batch has " + std::to_string(b.probabilities.rows()) +
                                              " rows but " + std::to_string(b.labels.size()) + " labels");
  if (b.probabilities.cols() != kNumClasses)
    throw Error(ErrorKind::ShapeMismatch, "prediction batch needs 9 columns, got " +
                                              std::to_string(b.probabilities.cols()));
  for (int l : b.labels)
    if (l < 0 || l >= kNumClasses) throw Error(ErrorKind::ShapeMismatch, "label out of range: " + std::to_string(l));
}

Index argmax_row(const MatrixXd& p, Index i) {
  Index best = 0;
  for (Index j = 1; j < p.cols(); ++j)
    if (p(i, j) > p(i, best)) best = j;
  return best;
}

}  // namespace

double log_loss(const PredictionBatch& batch) {
  check_batch(batch);
  return nn::multiclass_log_loss(batch.probabilities, batch.labels);
}

double accuracy(const PredictionBatch& batch) {
  check_batch(batch);
  return nn::argmax_accuracy(batch.probabilities, batch.labels);
}

std::array<long, kNumClasses> ConfusionMatrix::row_sums() const {
  std::array<long, kNumClasses> out{};
  for (int i = 0; i < kNumClasses; ++i) out[static_cast<std::size_t>(i)] = counts.row(i).sum();
  return out;
}

ConfusionMatrix confusion(const PredictionBatch& batch) {
  check_batch(batch);
  ConfusionMatrix m;
  for (Index i = 0; i < batch.probabilities.rows(); ++i)
    ++m.counts(batch.labels[static_cast<std::size_t>(i)], argmax_row(batch.probabilities, i));
  return m;
}

void write_confusion(const ConfusionMatrix& m, const fs::path& path) {
  std::vector<std::string> lines;
  std::string head = "true\\pred";
  for (int j = 0; j < kNumClasses; ++j) head += ",C" + std::to_string(j + 1);
  lines.push_back(head);
  for (int i = 0; i < kNumClasses; ++i) {
    std::string row = "C" + std::to_string(i + 1);
    for (int j = 0; j < kNumClasses; ++j) row += "," + std::to_string(m.counts(i, j));
    lines.push_back(row);
  }
  io::write_lines(path, lines);
}

ConfusionMatrix read_confusion(const fs::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.size() < kNumClasses + 1) throw Error(ErrorKind::MalformedLine, path.string() + ": too few rows");
  ConfusionMatrix m;
  for (int i = 0; i < kNumClasses; ++i) {
    const auto cells = io::split(lines[static_cast<std::size_t>(i + 1)], ',');
    if (cells.size() != kNumClasses + 1)
      throw Error(ErrorKind::MalformedLine, path.string() + ":" + std::to_string(i + 2) + ": expected 10 cells");
    for (int j = 0; j < kNumClasses; ++j) m.counts(i, j) = io::parse_int(cells[static_cast<std::size_t>(j + 1)]);
  }
  return m;
}

ConfusionMatrix reference_confusion() {
  ConfusionMatrix m;
  m.counts << 367, 1, 0, 3, 0, 4, 0, 7, 1,  //
      0, 610, 2, 1, 0, 2, 1, 3, 0,          //
      0, 1, 734, 0, 0, 0, 0, 0, 0,          //
      0, 0, 0, 116, 0, 1, 0, 1, 0,          //
      0, 1, 0, 0, 9, 0, 0, 0, 0,            //
      2, 2, 0, 0, 1, 174, 0, 6, 2,          //
      0, 0, 1, 0, 0, 0, 97, 0, 1,           //
      9, 5, 0, 3, 0, 2, 0, 284, 3,          //
      0, 1, 0, 0, 0, 0, 1, 1, 250;
  return m;
}

// ---------------------------------------------------------------- fusion

FusedTable fuse_features(const FeatureTable& a, const FeatureTable& b, const FeatureTable& tf,
                         const std::vector<std::string>& train_ids) {
  auto id_set = [](const FeatureTable& t) { return std::set<std::string>(t.ids.begin(), t.ids.end()); };
  const auto ids_a = id_set(a);
  if (ids_a.size() != a.ids.size()) throw Error(ErrorKind::IdSetMismatch, "duplicate ids in the first block");
  if (ids_a != id_set(b) || ids_a != id_set(tf) || b.ids.size() != a.ids.size() || tf.ids.size() != a.ids.size())
    throw Error(ErrorKind::IdSetMismatch, "probability and opcode blocks cover different samples");
  if (a.cols() != kNumClasses || b.cols() != kNumClasses)
    throw Error(ErrorKind::WidthMismatch, "probability blocks must have 9 columns");

  const auto rb = b.rows_of(a.ids);
  const auto rt = tf.rows_of(a.ids);
  FusedTable out;
  auto& t = out.table;
  t.ids = a.ids;
  t.labels = a.labels;
  t.columns = a.columns;
  t.columns.insert(t.columns.end(), b.columns.begin(), b.columns.end());
  t.columns.insert(t.columns.end(), tf.columns.begin(), tf.columns.end());
  const Index n = a.rows(), w = 2 * kNumClasses + tf.cols();
  MatrixXd raw(n, w);
  for (Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (b.labels[static_cast<std::size_t>(rb[iu])] != a.labels[iu] ||
        tf.labels[static_cast<std::size_t>(rt[iu])] != a.labels[iu])
      throw Error(ErrorKind::IdSetMismatch, "blocks disagree on the label of " + a.ids[iu]);
    raw.block(i, 0, 1, kNumClasses) = a.values.row(i);
    raw.block(i, kNumClasses, 1, kNumClasses) = b.values.row(rb[iu]);
    raw.block(i, 2 * kNumClasses, 1, tf.cols()) = tf.values.row(rt[iu]);
  }
  FeatureTable raw_table{t.ids, t.labels, t.columns, raw};
  const auto train_rows = raw_table.rows_of(train_ids);
  MatrixXd train(static_cast<Index>(train_rows.size()), w);
  for (std::size_t i = 0; i < train_rows.size(); ++i) train.row(static_cast<Index>(i)) = raw.row(train_rows[i]);
  out.normalizer = minmax_fit(train);
  t.values = minmax_apply(out.normalizer, raw);
  return out;
}

// ---------------------------------------------------------------- stage helpers

namespace {

void say(const StageContext& ctx, const std::string& line) {
  if (ctx.progress) *ctx.progress << line << std::endl;
}

SplitAssignment load_split(const StageContext& ctx) { return read_split(ctx.path(layout::kSplit)); }

struct ImageData {
  std::vector<std::string> ids;
  std::vector<int> labels;
  nn::Tensor<float> images;
  std::map<std::string, Index> row;
};

ImageData load_images(const StageContext& ctx) {
  ImageData d;
  const auto images = read_image_store(ctx.path(layout::kImages), &d.ids);
  const auto manifest = read_manifest(ctx.manifest_path());
  std::map<std::string, int> label;
  for (const auto& s : manifest.samples) label[s.id] = s.label;
  for (std::size_t i = 0; i < d.ids.size(); ++i) {
    const auto it = label.find(d.ids[i]);
    if (it == label.end()) throw Error(ErrorKind::IdSetMismatch, "image store id not in manifest: " + d.ids[i]);
    d.labels.push_back(it->second);
    d.row[d.ids[i]] = static_cast<Index>(i);
  }
  d.images = images_to_tensor(images);
  return d;
}

/// Rows of one partition, logged under `stage`.
nn::Dataset<float> image_partition(const ImageData& d, const SplitAssignment& split, Partition p,
                                   const std::string& stage, AccessLog* log) {
  if (log) log->record(stage, p);
  std::vector<Index> rows;
  std::vector<int> labels;
  for (const auto& id : split.ids(p)) {
    const auto it = d.row.find(id);
    if (it == d.row.end()) throw Error(ErrorKind::IdSetMismatch, "split id missing from image store: " + id);
    rows.push_back(it->second);
    labels.push_back(d.labels[static_cast<std::size_t>(it->second)]);
  }
  return {d.images.gather(rows), std::move(labels)};
}

const nn::Tensor<float>& all_images(const ImageData& d, const std::string& stage, AccessLog* log) {
  if (log)
    for (Partition p : {Partition::Train, Partition::Val, Partition::Test}) log->record(stage, p);
  return d.images;
}

nn::TrainConfig seeded(nn::TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

nn::EpochCallback epoch_printer(const StageContext& ctx, const std::string& name) {
  if (!ctx.progress) return {};
  return [&ctx, name](const nn::EpochMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %s epoch %d  train %.4f  val log loss %.4f  val acc %.4f", name.c_str(),
                  m.epoch, m.train_loss, m.val_log_loss, m.val_accuracy);
    say(ctx, buf);
  };
}

/// Trains `net` on the image partitions, saves checkpoint and log, and
/// optionally writes class probabilities for every sample.
void train_image_classifier(const StageContext& ctx, nn::Network<float>& net, const std::string& stage,
                            const nn::TrainConfig& config, const char* ckpt, const char* log_name,
                            const char* probs, const std::string& prefix) {
  const auto data = load_images(ctx);
  const auto split = load_split(ctx);
  const auto train = image_partition(data, split, Partition::Train, stage + ":fit", ctx.log);
  const auto val = image_partition(data, split, Partition::Val, stage + ":fit", ctx.log);
  const auto result = nn::train_classifier(net, train, val, seeded(config, ctx.seed), epoch_printer(ctx, stage));
  nn::save_checkpoint(result.best, ctx.path(ckpt));
  nn::write_metrics_log(result.log, ctx.path(log_name));
  if (probs) {
    const auto& x = all_images(data, stage + ":infer", ctx.log);
    write_feature_table(extract_probability_features(net, x, data.ids, data.labels, prefix), ctx.path(probs));
  }
}

FeatureTable probability_table(const FeatureTable& source, const MatrixXd& p, const std::string& prefix) {
  FeatureTable t;
  t.ids = source.ids;
  t.labels = source.labels;
  for (int j = 0; j < kNumClasses; ++j) t.columns.push_back(prefix + std::to_string(j));
  t.values = p;
  return t;
}

nn::Tensor<float> table_tensor(const FeatureTable& t) {
  nn::Tensor<float> x({t.rows(), t.cols()});
  x.batch_matrix() = t.values.cast<float>();
  return x;
}

std::vector<Index> column_indices(const FeatureTable& t, const std::vector<std::string>& names) {
  std::map<std::string, Index> at;
  for (std::size_t j = 0; j < t.columns.size(); ++j) at[t.columns[j]] = static_cast<Index>(j);
  std::vector<Index> out;
  for (const auto& n : names) {
    const auto it = at.find(n);
    if (it == at.end()) throw Error(ErrorKind::WidthMismatch, "selected feature '" + n + "' not in the TF table");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- stages

CorpusManifest stage_corpus(const ExperimentConfig& config, const fs::path& corpus_dir, const fs::path& manifest_path) {
  CorpusManifest manifest;
  if (config.data_root.empty()) {
    fs::create_directories(corpus_dir);
    const auto spec = default_synth_spec(config.synth_families, config.synth_per_family);
    manifest = generate_synthetic_corpus(spec, config.seed, corpus_dir).manifest;
  } else {
    const fs::path labels = config.data_root / "trainLabels.csv";
    const fs::path files = fs::is_directory(config.data_root / "train") ? config.data_root / "train" : config.data_root;
    manifest = ingest_corpus(files, load_labels(labels));
  }
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  write_manifest(manifest, manifest_path);
  return manifest;
}

void stage_split(const StageContext& ctx) {
  fs::create_directories(ctx.dir);
  const auto manifest = read_manifest(ctx.manifest_path());
  const auto split = stratified_split(manifest, ctx.seed, ctx.config.test_fraction, ctx.config.val_fraction);
  write_split(split, ctx.path(layout::kSplit));
  say(ctx, "  split: train " + std::to_string(split.count(Partition::Train)) + ", val " +
               std::to_string(split.count(Partition::Val)) + ", test " + std::to_string(split.count(Partition::Test)));
}

void stage_featurize(const StageContext& ctx) {
  const auto manifest = read_manifest(ctx.manifest_path());
  const auto split = load_split(ctx);
  std::vector<std::string> ids;
  std::vector<ByteImage> images;
  std::vector<AsmDocument> docs;
  for (const auto& s : manifest.samples) {
    ids.push_back(s.id);
    images.push_back(bytes_to_image(parse_bytes_file(s.bytes_path)));
    docs.push_back(parse_asm_file(s.asm_path));
  }
  if (ctx.log)
    for (Partition p : {Partition::Train, Partition::Val, Partition::Test}) ctx.log->record("featurize:infer", p);

  // Vocabulary from TRAIN listings only.
  if (ctx.log) ctx.log->record("featurize:fit", Partition::Train);
  std::vector<AsmDocument> train_docs;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = split.partition_of.find(ids[i]);
    if (it != split.partition_of.end() && it->second == Partition::Train) train_docs.push_back(docs[i]);
  }
  const auto vocab = build_vocabulary(train_docs, ctx.config.vocabulary_cap);
  write_image_store(ctx.path(layout::kImages), ids, images);
  write_vocabulary(vocab, ctx.path(layout::kVocabulary));
  write_feature_table(assemble_feature_table(manifest.samples, docs, vocab), ctx.path(layout::kTf));
  say(ctx, "  featurize: " + std::to_string(ids.size()) + " samples, vocabulary " + std::to_string(vocab.size()));
}

void stage_train_cnn(const StageContext& ctx) {
  nn::Network<float> net(five_layer_cnn(CnnWidths{}.scaled(ctx.config.cnn_width_divisor)), ctx.seed);
  train_image_classifier(ctx, net, "train-cnn", ctx.config.cnn, layout::kCnn, layout::kCnnLog, layout::kCnnProbs,
                         "cnn_");
}

void stage_pretrain_cae(const StageContext& ctx) {
  const auto data = load_images(ctx);
  const auto split = load_split(ctx);
  const auto train = image_partition(data, split, Partition::Train, "pretrain-cae:fit", ctx.log);
  const auto widths = CaeWidths{}.scaled(ctx.config.cae_width_divisor);
  std::vector<std::string> lines{"stage,epoch,mse"};
  const auto w = pretrain_cae_stack(train.inputs, seeded(ctx.config.cae, ctx.seed), widths,
                                    [&](int stage, int epoch, double mse) {
                                      lines.push_back(std::to_string(stage) + "," + std::to_string(epoch) + "," +
                                                      io::format_real(mse));
                                    });
  nn::save_checkpoint(w.cae1, ctx.path(layout::kCae1));
  nn::save_checkpoint(w.cae2, ctx.path(layout::kCae2));
  io::write_lines(ctx.path(layout::kCaeLog), lines);
  say(ctx, "  pretrain-cae: final mse " + io::format_real(w.cae1_history.back()) + " / " +
               io::format_real(w.cae2_history.back()));
}

void stage_train_pretrained_cnn(const StageContext& ctx, bool random_init) {
  const auto widths = CaeWidths{}.scaled(ctx.config.cae_width_divisor);
  if (random_init) {
    nn::Network<float> net(pretrained_cnn(widths), ctx.seed);
    train_image_classifier(ctx, net, "train-random-init-cnn", ctx.config.pretrained_cnn, layout::kRandomInit,
                           layout::kRandomInitLog, nullptr, "");
    return;
  }
  EncoderWeights w;
  w.cae1 = nn::load_checkpoint(ctx.path(layout::kCae1));
  w.cae2 = nn::load_checkpoint(ctx.path(layout::kCae2));
  auto net = build_pretrained_cnn(w, widths, ctx.seed);
  train_image_classifier(ctx, net, "train-pretrained-cnn", ctx.config.pretrained_cnn, layout::kPretrained,
                         layout::kPretrainedLog, layout::kPretrainedProbs, "pcnn_");
}

void stage_baseline_svm(const StageContext& ctx) {
  const auto tf = read_feature_table(ctx.path(layout::kTf));
  const auto split = load_split(ctx);
  SplitView view(tf, split, ctx.log);
  const auto train = view.rows(Partition::Train, "baseline-svm:fit");
  const auto val = view.rows(Partition::Val, "baseline-svm:fit");
  const auto norm = minmax_fit(train.values);
  const MatrixXd X = minmax_apply(norm, train.values);
  const MatrixXd V = minmax_apply(norm, val.values);
  const auto& all = view.all("baseline-svm:infer");
  const MatrixXd A = minmax_apply(norm, all.values);
  for (const bool linear : {true, false}) {
    const SvmParams& p = linear ? ctx.config.baseline_linear : ctx.config.baseline_rbf;
    const auto model = train_multiclass_svm(X, train.labels, p, kNumClasses, &V, val.labels);
    const auto pred = svm_predict(model, A);
    write_feature_table(probability_table(all, pred.probabilities, linear ? "linear_svm_" : "rbf_svm_"),
                        ctx.path(linear ? layout::kSvmLinearProbs : layout::kSvmRbfProbs));
    if (!linear) write_svm_model(model, ctx.path(layout::kSvmRbfModel));
  }
  say(ctx, "  baseline-svm: linear and rbf trained on " + std::to_string(tf.cols()) + " opcode columns");
}

void stage_baseline_mlp(const StageContext& ctx) {
  nn::Network<float> net(baseline_mlp(), ctx.seed);
  train_image_classifier(ctx, net, "baseline-mlp", ctx.config.baseline_mlp, layout::kMlp, layout::kMlpLog,
                         layout::kMlpProbs, "mlp_");
}

void stage_select(const StageContext& ctx) {
  const auto tf = read_feature_table(ctx.path(layout::kTf));
  const auto split = load_split(ctx);
  SplitView view(tf, split, ctx.log);
  const auto trace = select_features(view, ctx.config.selection);
  write_selection_trace(trace, ctx.path(layout::kTrace));
  write_subset(trace.final_subset, ctx.path(layout::kSubset));
  say(ctx, "  select: peak " + std::to_string(trace.peak_size) + " features, final " +
               std::to_string(trace.final_subset.size()) + " (val " +
               std::string(to_string(ctx.config.selection.evaluator.metric)) + " " +
               io::format_real(trace.final_metric) + ")");
}

void stage_fuse(const StageContext& ctx) {
  const auto tf = read_feature_table(ctx.path(layout::kTf));
  const auto split = load_split(ctx);
  const auto subset = read_subset(ctx.path(layout::kSubset));
  const auto a = read_feature_table(ctx.path(layout::kCnnProbs));
  const auto b = read_feature_table(ctx.path(layout::kPretrainedProbs));

  const auto cols = column_indices(tf, subset);
  SplitView view(tf, split, ctx.log);
  const auto train_sel = view.rows(Partition::Train, "fuse:fit").select_columns(cols);
  auto sel = view.all("fuse:infer").select_columns(cols);
  sel.values = minmax_apply(minmax_fit(train_sel.values), sel.values);

  const auto fused = fuse_features(a, b, sel, split.ids(Partition::Train));
  write_feature_table(fused.table, ctx.path(layout::kHybrid));
  write_normalizer(fused.normalizer, ctx.path(layout::kHybridNorm));
  say(ctx, "  fuse: hybrid width " + std::to_string(fused.table.cols()));
}

nn::TrainResult train_fusion_mlp(nn::Network<float>& net, const FeatureTable& hybrid, const SplitAssignment& split,
                                 const nn::TrainConfig& config, AccessLog* log) {
  SplitView view(hybrid, split, log);
  const auto tr = view.rows(Partition::Train, "train-mlp:fit");
  const auto va = view.rows(Partition::Val, "train-mlp:fit");
  return nn::train_classifier(net, {table_tensor(tr), tr.labels}, {table_tensor(va), va.labels}, config);
}

void stage_train_fusion_mlp(const StageContext& ctx) {
  const auto hybrid = read_feature_table(ctx.path(layout::kHybrid));
  const auto split = load_split(ctx);
  const auto& c = ctx.config;
  nn::Network<float> net(fusion_mlp(hybrid.cols(), c.fusion_hidden1, c.fusion_hidden2), ctx.seed);
  const auto result = train_fusion_mlp(net, hybrid, split, seeded(c.fusion_mlp, ctx.seed), ctx.log);
  nn::save_checkpoint(result.best, ctx.path(layout::kFusion));
  nn::write_metrics_log(result.log, ctx.path(layout::kFusionLog));

  SplitView view(hybrid, split, ctx.log);
  const auto& all = view.all("train-mlp:infer");
  write_feature_table(probability_table(all, nn::predict_proba(net, table_tensor(all)), "dlmd_"),
                      ctx.path(layout::kFusionProbs));
  say(ctx, "  train-mlp: best val log loss " + io::format_real(result.best.best_val_log_loss));
}

// ---------------------------------------------------------------- evaluation

namespace {

struct ModelFiles {
  const char* model;
  const char* probs;
};

constexpr ModelFiles kModelFiles[] = {{"LINEAR-SVM", layout::kSvmLinearProbs},
                                      {"RBF-SVM", layout::kSvmRbfProbs},
                                      {"MLP", layout::kMlpProbs},
                                      {"CNN", layout::kCnnProbs},
                                      {"PRETRAINED-CNN", layout::kPretrainedProbs},
                                      {"DLMD", layout::kFusionProbs}};

double best_val_log_loss(const fs::path& log_path) {
  const auto log = nn::read_metrics_log(log_path);
  if (log.empty()) throw Error(ErrorKind::EmptyInput, log_path.string() + ": empty metrics log");
  double best = log.front().val_log_loss;
  for (const auto& m : log) best = std::min(best, m.val_log_loss);
  return best;
}

}  // namespace

RunEvaluation stage_evaluate(const StageContext& ctx) {
  const auto split = load_split(ctx);
  RunEvaluation e;
  for (const auto& [model, file] : kModelFiles) {
    if (!fs::exists(ctx.path(file))) continue;
    const auto probs = read_feature_table(ctx.path(file));
    SplitView view(probs, split, ctx.log);
    const auto test = view.rows(Partition::Test, "evaluate:infer");
    const PredictionBatch batch{test.values, test.labels};
    e.test.push_back({model, log_loss(batch), accuracy(batch)});
    if (std::string_view(model) == "DLMD") e.dlmd_confusion = confusion(batch);
  }
  if (fs::exists(ctx.path(layout::kPretrainedLog)))
    e.pretrained_val_log_loss = best_val_log_loss(ctx.path(layout::kPretrainedLog));
  if (fs::exists(ctx.path(layout::kRandomInitLog)))
    e.random_init_val_log_loss = best_val_log_loss(ctx.path(layout::kRandomInitLog));
  write_evaluation(e, ctx.path(layout::kEvaluation));
  write_confusion(e.dlmd_confusion, ctx.path(layout::kConfusion));
  for (const auto& s : e.test) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "  evaluate: %-15s test log loss %.4f  accuracy %.4f", s.model.c_str(), s.log_loss,
                  s.accuracy);
    say(ctx, buf);
  }
  return e;
}

void write_evaluation(const RunEvaluation& e, const fs::path& path) {
  std::vector<std::string> lines{"split,model,log_loss,accuracy"};
  for (const auto& s : e.test)
    lines.push_back("test," + s.model + "," + io::format_real(s.log_loss) + "," + io::format_real(s.accuracy));
  lines.push_back("val,PRETRAINED-CNN," + io::format_real(e.pretrained_val_log_loss) + ",");
  if (e.random_init_val_log_loss)
    lines.push_back("val,RANDOM-INIT-CNN," + io::format_real(*e.random_init_val_log_loss) + ",");
  io::write_lines(path, lines);
}

RunEvaluation read_evaluation(const fs::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines[0] != "split,model,log_loss,accuracy")
    throw Error(ErrorKind::MalformedLine, path.string() + ": bad header");
  RunEvaluation e;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto c = io::split(lines[n], ',');
    if (c.size() != 4) throw Error(ErrorKind::MalformedLine, path.string() + ":" + std::to_string(n + 1));
    if (c[0] == "test")
      e.test.push_back({std::string(c[1]), io::parse_real(c[2]), io::parse_real(c[3])});
    else if (c[1] == "PRETRAINED-CNN")
      e.pretrained_val_log_loss = io::parse_real(c[2]);
    else
      e.random_init_val_log_loss = io::parse_real(c[2]);
  }
  const auto conf = path.parent_path() / layout::kConfusion;
  if (fs::exists(conf)) e.dlmd_confusion = read_confusion(conf);
  return e;
}

// ---------------------------------------------------------------- experiment

const ReportRow* ExperimentReport::row(const std::string& model) const {
  for (const auto& r : summary)
    if (r.model == model) return &r;
  return nullptr;
}

std::vector<ReportRow> compare_baselines(const ExperimentReport& report) {
  std::vector<ReportRow> out;
  for (const char* m : kReportModels)
    if (const auto* r = report.row(m)) out.push_back(*r);
  return out;
}

namespace {

std::string strip_kind(const Error& e) {
  const std::string what = e.what();
  const std::string prefix = std::string(to_string(e.kind())) + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

template <typename F>
void run_stage(const std::string& where, const char* name, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    throw Error(e.kind(), where + ", stage " + name + ": " + strip_kind(e));
  } catch (const std::exception& e) {
    throw Error(ErrorKind::StageError, where + ", stage " + name + ": " + e.what());
  }
}

std::vector<ReportRow> summarize(const std::vector<RunRecord>& runs) {
  std::vector<std::string> order(kReportModels.begin(), kReportModels.end());
  for (const auto& r : runs)
    for (const auto& s : r.evaluation.test)
      if (std::find(order.begin(), order.end(), s.model) == order.end()) order.push_back(s.model);
  std::vector<ReportRow> rows;
  for (const auto& m : order) {
    std::vector<double> ll, acc;
    for (const auto& r : runs)
      for (const auto& s : r.evaluation.test)
        if (s.model == m) {
          ll.push_back(s.log_loss);
          acc.push_back(s.accuracy);
        }
    if (ll.empty()) continue;
    rows.push_back({m, mean_std(ll), mean_std(acc)});
  }
  return rows;
}

}  // namespace

RunEvaluation run_single(const StageContext& ctx) {
  const std::string where = "seed " + std::to_string(ctx.seed);
  fs::create_directories(ctx.dir);
  io::write_lines(ctx.path(layout::kFingerprint), {config_fingerprint(ctx.config), std::to_string(ctx.seed)});
  run_stage(where, "split", [&] { stage_split(ctx); });
  run_stage(where, "featurize", [&] { stage_featurize(ctx); });
  run_stage(where, "train-cnn", [&] { stage_train_cnn(ctx); });
  run_stage(where, "pretrain-cae", [&] { stage_pretrain_cae(ctx); });
  run_stage(where, "train-pretrained-cnn", [&] { stage_train_pretrained_cnn(ctx); });
  if (ctx.config.compare_random_init)
    run_stage(where, "train-pretrained-cnn --random-init", [&] { stage_train_pretrained_cnn(ctx, true); });
  run_stage(where, "baseline-svm", [&] { stage_baseline_svm(ctx); });
  run_stage(where, "baseline-mlp", [&] { stage_baseline_mlp(ctx); });
  run_stage(where, "select", [&] { stage_select(ctx); });
  run_stage(where, "fuse", [&] { stage_fuse(ctx); });
  run_stage(where, "train-mlp", [&] { stage_train_fusion_mlp(ctx); });
  RunEvaluation e;
  run_stage(where, "evaluate", [&] { e = stage_evaluate(ctx); });
  if (ctx.log) write_access_log(*ctx.log, ctx.path(layout::kAccessLog));
  return e;
}

ExperimentReport run_experiment(const ExperimentConfig& config, std::ostream* progress) {
  validate_config(config);
  const fs::path root = config.output_root;
  fs::create_directories(root);
  ExperimentReport report;
  report.fingerprint = config_fingerprint(config);
  io::write_lines(root / layout::kFingerprint, {report.fingerprint});
  {
    auto out = io::open_output(root / "config.txt");
    out << format_config(config);
  }
  const fs::path manifest = root / layout::kManifest;
  run_stage("corpus", "ingest", [&] { stage_corpus(config, root / "corpus", manifest); });

  for (int r = 0; r < config.runs; ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "run-%02d", r);
    AccessLog log;
    StageContext ctx{config, root / name, manifest, config.seed + static_cast<std::uint64_t>(r), &log, progress};
    if (progress) *progress << "run " << r + 1 << "/" << config.runs << " (seed " << ctx.seed << ")" << std::endl;
    RunRecord rec{r, ctx.seed, ctx.dir, {}};
    try {
      rec.evaluation = run_single(ctx);
    } catch (const Error& e) {
      throw Error(e.kind(), "run " + std::to_string(r) + " (" + strip_kind(e) + ")");
    }
    const auto bad = test_hygiene_violations(log);
    if (!bad.empty()) throw Error(ErrorKind::StageError, "stage " + bad.front() + " read TEST rows");
    report.runs.push_back(std::move(rec));
  }
  report.summary = summarize(report.runs);
  write_report(report, root);
  return report;
}

void write_report_text(const ExperimentReport& report, std::ostream& out) {
  char buf[256];
  out << "experiment fingerprint " << report.fingerprint << ", " << report.runs.size() << " run(s)\n\n";
  const auto models = report.summary;
  out << "run  seed ";
  for (const auto& m : models) {
    std::snprintf(buf, sizeof buf, " %15s", m.model.c_str());
    out << buf;
  }
  out << "\n";
  for (const auto& r : report.runs) {
    std::snprintf(buf, sizeof buf, "%3d %5llu ", r.run + 1, static_cast<unsigned long long>(r.seed));
    out << buf;
    for (const auto& m : models) {
      double v = NAN;
      for (const auto& s : r.evaluation.test)
        if (s.model == m.model) v = s.log_loss;
      std::snprintf(buf, sizeof buf, " %15.4f", v);
      out << buf;
    }
    out << "\n";
  }
  out << "\ntest log loss and accuracy (mean +- sample std over runs)\n";
  for (const auto& m : models) {
    std::snprintf(buf, sizeof buf, "  %-15s %.4f +- %.4f   %.4f +- %.4f\n", m.model.c_str(), m.log_loss.mean,
                  m.log_loss.std, m.accuracy.mean, m.accuracy.std);
    out << buf;
  }
  if (!report.runs.empty()) {
    const auto& rr = report.runs[static_cast<std::size_t>(report.designated_run)];
    const auto& c = rr.evaluation.dlmd_confusion;
    out << "\nDLMD confusion matrix, run " << rr.run + 1 << " (rows true, columns predicted)\n     ";
    for (int j = 0; j < kNumClasses; ++j) {
      std::snprintf(buf, sizeof buf, " %5s", ("C" + std::to_string(j + 1)).c_str());
      out << buf;
    }
    out << "\n";
    for (int i = 0; i < kNumClasses; ++i) {
      std::snprintf(buf, sizeof buf, "  C%d ", i + 1);
      out << buf;
      for (int j = 0; j < kNumClasses; ++j) {
        std::snprintf(buf, sizeof buf, " %5ld", c.counts(i, j));
        out << buf;
      }
      out << "\n";
    }
    out << "  trace/total = " << c.trace() << "/" << c.total() << "\n";
  }
}

void write_report(const ExperimentReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = io::open_output(dir / "report.txt");
    write_report_text(report, out);
  }
  std::vector<std::string> runs{"run,seed,model,log_loss,accuracy"};
  for (const auto& r : report.runs)
    for (const auto& s : r.evaluation.test)
      runs.push_back(std::to_string(r.run) + "," + std::to_string(r.seed) + "," + s.model + "," +
                     io::format_real(s.log_loss) + "," + io::format_real(s.accuracy));
  io::write_lines(dir / "runs.csv", runs);
  std::vector<std::string> summary{"model,log_loss_mean,log_loss_std,accuracy_mean,accuracy_std"};
  for (const auto& m : report.summary)
    summary.push_back(m.model + "," + io::format_real(m.log_loss.mean) + "," + io::format_real(m.log_loss.std) + "," +
                      io::format_real(m.accuracy.mean) + "," + io::format_real(m.accuracy.std));
  io::write_lines(dir / "summary.csv", summary);
  if (!report.runs.empty())
    write_confusion(report.runs[static_cast<std::size_t>(report.designated_run)].evaluation.dlmd_confusion,
                    dir / layout::kConfusion);
}

// ---------------------------------------------------------------- access log

bool is_inference_stage(const std::string& stage) {
  const std::string suffix = ":infer";
  return stage.size() >= suffix.size() && stage.compare(stage.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> test_hygiene_violations(const AccessLog& log) {
  std::vector<std::string> out;
  for (const auto& s : log.readers(Partition::Test))
    if (!is_inference_stage(s) && std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  return out;
}

void write_access_log(const AccessLog& log, const fs::path& path) {
  std::vector<std::string> lines;
  for (const auto& e : log.entries()) lines.push_back(e.stage + "\t" + std::string(to_string(e.partition)));
  io::write_lines(path, lines);
}

AccessLog read_access_log(const fs::path& path) {
  AccessLog log;
  for (const auto& line : io::read_lines(path)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorKind::MalformedLine, path.string() + ": missing tab");
    const std::string_view part = std::string_view(line).substr(tab + 1);
    Partition p;
    if (part == "TRAIN")
      p = Partition::Train;
    else if (part == "VAL")
      p = Partition::Val;
    else if (part == "TEST")
      p = Partition::Test;
    else
      throw Error(ErrorKind::MalformedLine, path.string() + ": unknown partition '" + std::string(part) + "'");
    log.record(line.substr(0, tab), p);
  }
  return log;
}

}  // namespace malfuse
