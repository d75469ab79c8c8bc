#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "malfuse/corpus.hpp"
#include "malfuse/features.hpp"
#include "malfuse/stats.hpp"

namespace malfuse {

enum class KernelType { Linear, Rbf };

struct Kernel {
  KernelType type = KernelType::Rbf;
  double gamma = 0.1;

  static Kernel linear() { return {KernelType::Linear, 0.0}; }
  static Kernel rbf(double gamma) { return {KernelType::Rbf, gamma}; }

  std::string to_string() const;  // "linear" or "rbf gamma=0.1"
  static Kernel parse(std::string_view text);
};

/// Throws WidthMismatch on unequal lengths.
double kernel_eval(const Kernel& k, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y);

struct SvmParams {
  double C = 1.0;
  Kernel kernel;
  double tolerance = 1e-3;
  long max_iterations = 1'000'000;
  std::size_t cache_bytes = std::size_t{64} << 20;
};

/// Rows of the kernel matrix over a fixed sample set, computed on demand and
/// kept in a least-recently-used cache bounded by a byte budget.
class KernelCache {
 public:
  KernelCache(const Eigen::MatrixXd& X, const Kernel& kernel, std::size_t budget_bytes);

  Eigen::Index size() const { return x_.rows(); }
  double diagonal(Eigen::Index i) const { return diag_[i]; }
  /// Valid until the next call.
  const Eigen::VectorXd& row(Eigen::Index i);

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  const Eigen::MatrixXd& x_;
  Kernel kernel_;
  Eigen::VectorXd sq_norms_, diag_;
  std::size_t capacity_;
  std::list<std::pair<Eigen::Index, Eigen::VectorXd>> lru_;
  std::unordered_map<Eigen::Index, std::list<std::pair<Eigen::Index, Eigen::VectorXd>>::iterator> where_;
  std::size_t hits_ = 0, misses_ = 0;
};

struct SmoDiagnostics {
  long iterations = 0;
  bool converged = false;
  double max_violation = 0.0;  // maximal KKT gap m(alpha) - M(alpha)
  double dual_objective = 0.0;  // 0.5 a'Qa - e'a (minimized)
};

struct BinarySvmModel {
  Kernel kernel;
  Eigen::MatrixXd support_vectors;  // one per row
  Eigen::VectorXd coefficients;     // alpha_i * y_i
  double bias = 0.0;
  std::vector<Eigen::Index> support_indices;  // rows of the training matrix
  Eigen::VectorXd alpha;                      // all training alphas
  SmoDiagnostics diagnostics;

  double decision(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd decisions(const Eigen::MatrixXd& X) const;
};

/// Labels are +1 / -1. Throws SingleClassInput when one side is missing.
BinarySvmModel train_binary_svm(const Eigen::MatrixXd& X, std::span<const int> y, const SvmParams& params);
BinarySvmModel train_binary_svm(const Eigen::MatrixXd& X, std::span<const int> y, const SvmParams& params,
                                KernelCache& cache);

/// 0.5 a'Qa - e'a with Q_ij = y_i y_j K_ij.
double svm_dual_objective(const Eigen::MatrixXd& K, std::span<const int> y, const Eigen::VectorXd& alpha);

/// Largest KKT residual of `alpha` (same gap measure the solver stops on).
double svm_kkt_violation(const Eigen::MatrixXd& K, std::span<const int> y, const Eigen::VectorXd& alpha, double C);

struct PlattParams {
  double A = -1.0;
  double B = 0.0;

  double probability(double decision) const;
};

/// Sigmoid fit P(y=1|f) = 1 / (1 + exp(A f + B)) by Newton's method with
/// backtracking, on smoothed targets.
PlattParams fit_platt(std::span<const double> decisions, std::span<const int> positive);

struct MulticlassSvmModel {
  int num_classes = 9;
  std::vector<bool> trained;  // false for classes absent from training
  std::vector<BinarySvmModel> machines;
  std::vector<PlattParams> calibration;
  bool calibrated = false;
};

/// One-vs-rest over classes 0..num_classes-1. When calibration data is
/// given, a Platt sigmoid per class is fitted on it; otherwise on the
/// training decision values. Throws SingleClassInput with fewer than two
/// classes present.
MulticlassSvmModel train_multiclass_svm(const Eigen::MatrixXd& X, std::span<const int> labels, const SvmParams& params,
                                        int num_classes = 9, const Eigen::MatrixXd* calib_X = nullptr,
                                        std::span<const int> calib_labels = {});

struct SvmPrediction {
  Eigen::VectorXi classes;
  Eigen::MatrixXd probabilities;  // rows sum to 1
  Eigen::MatrixXd decisions;
};

/// With `calibrated` false, probabilities are a softmax of the raw decision values.
SvmPrediction svm_predict(const MulticlassSvmModel& model, const Eigen::MatrixXd& X, bool calibrated = true);

void write_svm_model(const MulticlassSvmModel& model, const std::filesystem::path& path);
MulticlassSvmModel read_svm_model(const std::filesystem::path& path);

struct BaselineRow {
  std::string name;
  std::vector<double> log_loss;  // per run
  std::vector<double> accuracy;
  MeanStd log_loss_stats;
  MeanStd accuracy_stats;
};

/// LINEAR C=1 and RBF C=10 gamma=0.1 on each split: min-max fitted on TRAIN,
/// SVM trained on TRAIN, calibrated on VAL, scored on TEST.
std::vector<BaselineRow> grid_baseline_eval(const FeatureTable& raw, std::span<const SplitAssignment> splits);

}  // namespace malfuse
