#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "malfuse/corpus.hpp"
#include "malfuse/features.hpp"
#include "malfuse/models.hpp"
#include "malfuse/nn/optim.hpp"
#include "malfuse/nn/train.hpp"
#include "malfuse/selection.hpp"
#include "malfuse/split_view.hpp"
#include "malfuse/stats.hpp"
#include "malfuse/svm.hpp"

namespace malfuse {

// ---------------------------------------------------------------- metrics

/// Probability rows and the true class of each row.
struct PredictionBatch {
  Eigen::MatrixXd probabilities;  // N x 9
  std::vector<int> labels;
};

/// -(1/N) sum_i ln p_i,y_i with p clipped to [1e-15, 1 - 1e-15].
double log_loss(const PredictionBatch& batch);
/// Fraction of rows whose argmax (ties to the lower index) is the label.
double accuracy(const PredictionBatch& batch);

struct ConfusionMatrix {
  Eigen::Matrix<long, kNumClasses, kNumClasses> counts = decltype(counts)::Zero();  // rows true, cols predicted

  long total() const { return counts.sum(); }
  long trace() const { return counts.trace(); }
  double accuracy() const { return total() ? static_cast<double>(trace()) / static_cast<double>(total()) : 0.0; }
  std::array<long, kNumClasses> row_sums() const;
};

ConfusionMatrix confusion(const PredictionBatch& batch);

void write_confusion(const ConfusionMatrix& m, const std::filesystem::path& path);
ConfusionMatrix read_confusion(const std::filesystem::path& path);

/// The published 9x9 confusion matrix of the reference run, for identity checks.
ConfusionMatrix reference_confusion();

// ---------------------------------------------------------------- fusion

/// [A 9 | B 9 | selected TF] over the id set shared by all three blocks, in
/// the row order of `probs_a`, then min-max normalized with statistics fitted
/// on `train_ids`. Throws IdSetMismatch when the blocks cover different ids
/// or disagree on a label. `tf_selected` should already be normalized.
struct FusedTable {
  FeatureTable table;
  NormalizerParams normalizer;
};

FusedTable fuse_features(const FeatureTable& probs_a, const FeatureTable& probs_b, const FeatureTable& tf_selected,
                         const std::vector<std::string>& train_ids);

// ---------------------------------------------------------------- configuration

struct ExperimentConfig {
  std::filesystem::path data_root;  // BIG-2015 layout; empty means synthesize
  std::filesystem::path output_root = "malfuse-out";
  std::uint64_t seed = 1;
  int runs = 10;
  double test_fraction = 0.25;
  double val_fraction = 0.25;
  std::size_t vocabulary_cap = kDefaultVocabularyCap;

  int synth_families = kNumFamilies;
  std::size_t synth_per_family = 90;

  nn::TrainConfig cnn;
  nn::Index cnn_width_divisor = 1;
  nn::TrainConfig cae = nn::cae_train_config();
  nn::Index cae_width_divisor = 1;
  nn::TrainConfig pretrained_cnn;
  nn::TrainConfig baseline_mlp;
  nn::TrainConfig fusion_mlp;
  nn::Index fusion_hidden1 = 100;
  nn::Index fusion_hidden2 = 50;

  SvmParams baseline_linear = [] {
    SvmParams p;
    p.C = 1;
    p.kernel = Kernel::linear();
    return p;
  }();
  SvmParams baseline_rbf = [] {
    SvmParams p;
    p.C = 10;
    p.kernel = Kernel::rbf(0.1);
    return p;
  }();
  SelectionOptions selection;

  /// Also train the pretrained-CNN architecture from random weights.
  bool compare_random_init = false;
  bool deterministic = true;
  int workers = 1;
};

// ---------------------------------------------------------------- stages

/// File names inside one run directory.
namespace layout {
inline constexpr const char* kManifest = "manifest.tsv";
inline constexpr const char* kSplit = "split.csv";
inline constexpr const char* kImages = "images.f32";
inline constexpr const char* kVocabulary = "vocabulary.txt";
inline constexpr const char* kTf = "tf.csv";
inline constexpr const char* kCnn = "cnn.ckpt";
inline constexpr const char* kCnnLog = "cnn_metrics.csv";
inline constexpr const char* kCnnProbs = "probs_cnn.csv";
inline constexpr const char* kCae1 = "cae1.ckpt";
inline constexpr const char* kCae2 = "cae2.ckpt";
inline constexpr const char* kCaeLog = "cae_mse.csv";
inline constexpr const char* kPretrained = "pretrained_cnn.ckpt";
inline constexpr const char* kPretrainedLog = "pretrained_cnn_metrics.csv";
inline constexpr const char* kPretrainedProbs = "probs_pretrained_cnn.csv";
inline constexpr const char* kRandomInit = "random_init_cnn.ckpt";
inline constexpr const char* kRandomInitLog = "random_init_cnn_metrics.csv";
inline constexpr const char* kSvmLinearProbs = "probs_linear_svm.csv";
inline constexpr const char* kSvmRbfProbs = "probs_rbf_svm.csv";
inline constexpr const char* kSvmRbfModel = "rbf_svm.model";
inline constexpr const char* kMlp = "baseline_mlp.ckpt";
inline constexpr const char* kMlpLog = "baseline_mlp_metrics.csv";
inline constexpr const char* kMlpProbs = "probs_baseline_mlp.csv";
inline constexpr const char* kTrace = "selection_trace.txt";
inline constexpr const char* kSubset = "subset.csv";
inline constexpr const char* kHybrid = "hybrid.csv";
inline constexpr const char* kHybridNorm = "hybrid_normalizer.txt";
inline constexpr const char* kFusion = "fusion_mlp.ckpt";
inline constexpr const char* kFusionLog = "fusion_mlp_metrics.csv";
inline constexpr const char* kFusionProbs = "probs_dlmd.csv";
inline constexpr const char* kEvaluation = "evaluation.csv";
inline constexpr const char* kConfusion = "confusion.csv";
inline constexpr const char* kAccessLog = "access.log";
inline constexpr const char* kFingerprint = "fingerprint.txt";
}  // namespace layout

/// Where a stage reads and writes. Every stage takes its inputs from `dir`
/// (the manifest may live elsewhere) and writes its outputs there.
struct StageContext {
  ExperimentConfig config;
  std::filesystem::path dir;
  std::filesystem::path manifest;  // defaults to dir / manifest.tsv
  std::uint64_t seed = 0;
  AccessLog* log = nullptr;
  std::ostream* progress = nullptr;

  std::filesystem::path path(const char* name) const { return dir / name; }
  std::filesystem::path manifest_path() const { return manifest.empty() ? dir / layout::kManifest : manifest; }
};

/// Synthesizes (empty data root) or ingests the corpus, writing the manifest.
CorpusManifest stage_corpus(const ExperimentConfig& config, const std::filesystem::path& corpus_dir,
                            const std::filesystem::path& manifest_path);

/// Stratified split with the run seed.
void stage_split(const StageContext& ctx);
/// Byte images for every sample, vocabulary from TRAIN listings, raw TF table.
void stage_featurize(const StageContext& ctx);
void stage_train_cnn(const StageContext& ctx);
void stage_pretrain_cae(const StageContext& ctx);
/// `random_init` trains the same architecture from scratch instead.
void stage_train_pretrained_cnn(const StageContext& ctx, bool random_init = false);
void stage_baseline_svm(const StageContext& ctx);
void stage_baseline_mlp(const StageContext& ctx);
void stage_select(const StageContext& ctx);
void stage_fuse(const StageContext& ctx);
void stage_train_fusion_mlp(const StageContext& ctx);

/// Trains the fusion MLP on TRAIN with VAL checkpointing.
nn::TrainResult train_fusion_mlp(nn::Network<float>& net, const FeatureTable& hybrid, const SplitAssignment& split,
                                 const nn::TrainConfig& config, AccessLog* log = nullptr);

// ---------------------------------------------------------------- evaluation

/// Names of the compared models, in report order.
inline constexpr std::array<const char*, 5> kReportModels = {"LINEAR-SVM", "RBF-SVM", "MLP", "CNN", "DLMD"};

struct ModelScore {
  std::string model;
  double log_loss = 0.0;
  double accuracy = 0.0;
};

struct RunEvaluation {
  std::vector<ModelScore> test;  // every model whose probabilities exist
  ConfusionMatrix dlmd_confusion;
  double pretrained_val_log_loss = 0.0;
  std::optional<double> random_init_val_log_loss;
};

/// TEST metrics of every model, read from the probability tables in `dir`.
RunEvaluation stage_evaluate(const StageContext& ctx);

void write_evaluation(const RunEvaluation& e, const std::filesystem::path& path);
RunEvaluation read_evaluation(const std::filesystem::path& path);

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  RunEvaluation evaluation;
};

struct ReportRow {
  std::string model;
  MeanStd log_loss;
  MeanStd accuracy;
};

struct ExperimentReport {
  std::vector<RunRecord> runs;
  std::vector<ReportRow> summary;  // one row per model in kReportModels order, then any extras
  int designated_run = 0;          // run whose confusion matrix is reported
  std::string fingerprint;

  const ReportRow* row(const std::string& model) const;
};

/// Summary rows for the five compared models only.
std::vector<ReportRow> compare_baselines(const ExperimentReport& report);

/// Runs the whole flow `config.runs` times with seeds seed+0, seed+1, ...
/// One directory per run under config.output_root; the corpus is shared.
/// Stage failures are rethrown as StageError naming the run.
ExperimentReport run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr);

/// One full run into ctx.dir (split through evaluation).
RunEvaluation run_single(const StageContext& ctx);

void write_report_text(const ExperimentReport& report, std::ostream& out);
/// report.txt, runs.csv, summary.csv, confusion.csv under `dir`.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

/// Stages allowed to read TEST rows (prediction and feature transforms).
bool is_inference_stage(const std::string& stage);
/// Stages that read TEST without being inference stages; empty when clean.
std::vector<std::string> test_hygiene_violations(const AccessLog& log);
void write_access_log(const AccessLog& log, const std::filesystem::path& path);
AccessLog read_access_log(const std::filesystem::path& path);

}  // namespace malfuse
