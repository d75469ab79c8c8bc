#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "malfuse/split_view.hpp"
#include "malfuse/svm.hpp"

namespace malfuse {

enum class SelectionMetric { LogLoss, Accuracy };
enum class BackwardMode { Greedy, LastAdded };

std::string_view to_string(SelectionMetric m);
std::string_view to_string(BackwardMode m);
SelectionMetric parse_selection_metric(std::string_view s);
BackwardMode parse_backward_mode(std::string_view s);

struct EvaluatorConfig {
  SvmParams svm = [] {
    SvmParams p;
    p.C = 10;
    p.kernel = Kernel::rbf(0.1);
    return p;
  }();
  SelectionMetric metric = SelectionMetric::LogLoss;
};

/// Scores feature subsets by training a fresh one-vs-rest SVM on TRAIN
/// and measuring the metric on VAL (Platt scaling also fitted on VAL).
/// Only TRAIN and VAL are ever requested from the view. Columns are
/// min-max normalized with TRAIN statistics.
class SubsetEvaluator {
 public:
  SubsetEvaluator(const SplitView& view, EvaluatorConfig config);

  /// Metric value in its natural orientation. Duplicate ids are ignored.
  double evaluate(const std::vector<std::string>& features);
  /// Lower is better for either metric.
  double loss(const std::vector<std::string>& features);
  /// True when `a` is strictly better than `b` (both natural values).
  bool better(double a, double b) const;

  const EvaluatorConfig& config() const { return config_; }
  std::size_t evaluations() const { return evaluations_; }

 private:
  EvaluatorConfig config_;
  FeatureTable train_, val_;
  std::map<std::string, Eigen::Index> column_;
  std::map<std::vector<Eigen::Index>, double> memo_;
  std::size_t evaluations_ = 0;
};

/// Columns ordered by training document frequency (rows with a nonzero
/// count) descending, ties by name.
std::vector<std::string> rank_candidates(const FeatureTable& train_tf);

enum class SelectionPhase { Forward, Backward };

struct TraceEntry {
  SelectionPhase phase = SelectionPhase::Forward;
  std::size_t size = 0;
  double metric = 0.0;
  std::vector<std::string> features;
};

struct SelectionTrace {
  std::vector<TraceEntry> entries;
  std::size_t peak_size = 0;
  double peak_metric = 0.0;
  std::vector<std::string> final_subset;
  double final_metric = 0.0;
};

/// Prefixes of 10, 20, ... (and the whole pool last when it is not a
/// multiple of the step). Stops after `patience` consecutive prefixes that
/// do not beat the best so far. Throws PoolTooSmall when fewer than `step`
/// candidates exist.
void forward_search(const std::vector<std::string>& ranked, SubsetEvaluator& eval, SelectionTrace& trace,
                    std::size_t step = 10, std::size_t patience = 1);

/// Removes one feature per step while the metric does not get worse.
/// Greedy mode removes the feature whose removal scores best (ties: the
/// lexicographically smallest id); last-added mode removes the last one.
void backward_refine(SubsetEvaluator& eval, SelectionTrace& trace, BackwardMode mode = BackwardMode::Greedy);

struct SelectionOptions {
  EvaluatorConfig evaluator;
  std::size_t step = 10;
  std::size_t patience = 1;
  BackwardMode backward = BackwardMode::Greedy;
};

/// Ranks on TRAIN, then forward and backward phases.
SelectionTrace select_features(const SplitView& view, const SelectionOptions& options);

void write_selection_trace(const SelectionTrace& trace, const std::filesystem::path& path);
SelectionTrace read_selection_trace(const std::filesystem::path& path);
void write_subset(const std::vector<std::string>& subset, const std::filesystem::path& path);
std::vector<std::string> read_subset(const std::filesystem::path& path);

}  // namespace malfuse
