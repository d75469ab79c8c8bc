#include "malfuse/selection.hpp"

#include <algorithm>
#include <set>

#include "malfuse/error.hpp"
#include "malfuse/features.hpp"
#include "malfuse/io.hpp"
#include "malfuse/nn/loss.hpp"

namespace malfuse {

namespace {

constexpr const char* kStage = "selection";
constexpr const char* kTraceHeader = "selection-trace 1";

std::string_view phase_name(SelectionPhase p) { return p == SelectionPhase::Forward ? "forward" : "backward"; }

std::vector<std::string> unique_ids(const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (seen.insert(id).second) out.push_back(id);
  return out;
}

}  // namespace

std::string_view to_string(SelectionMetric m) { return m == SelectionMetric::LogLoss ? "logloss" : "accuracy"; }
std::string_view to_string(BackwardMode m) { return m == BackwardMode::Greedy ? "greedy" : "last-added"; }

SelectionMetric parse_selection_metric(std::string_view s) {
  if (s == "logloss") return SelectionMetric::LogLoss;
  if (s == "accuracy") return SelectionMetric::Accuracy;
  throw Error(ErrorKind::ConfigError, "unknown selection metric '" + std::string(s) + "'");
}

BackwardMode parse_backward_mode(std::string_view s) {
  if (s == "greedy") return BackwardMode::Greedy;
  if (s == "last-added") return BackwardMode::LastAdded;
  throw Error(ErrorKind::ConfigError, "unknown backward mode '" + std::string(s) + "'");
}

SubsetEvaluator::SubsetEvaluator(const SplitView& view, EvaluatorConfig config)
    : config_(std::move(config)), train_(view.rows(Partition::Train, kStage)), val_(view.rows(Partition::Val, kStage)) {
  for (Eigen::Index j = 0; j < train_.cols(); ++j) column_[train_.columns[static_cast<std::size_t>(j)]] = j;
}

double SubsetEvaluator::evaluate(const std::vector<std::string>& features) {
  std::vector<Eigen::Index> cols;
  for (const auto& id : features) {
    const auto it = column_.find(id);
    if (it == column_.end()) throw Error(ErrorKind::WidthMismatch, "unknown feature '" + id + "'");
    cols.push_back(it->second);
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  if (cols.empty()) throw Error(ErrorKind::EmptyInput, "empty feature subset");
  if (const auto hit = memo_.find(cols); hit != memo_.end()) return hit->second;

  const FeatureTable tr = train_.select_columns(cols);
  const FeatureTable va = val_.select_columns(cols);
  const auto norm = minmax_fit(tr.values);
  const Eigen::MatrixXd X = minmax_apply(norm, tr.values);
  const Eigen::MatrixXd V = minmax_apply(norm, va.values);
  const auto model = train_multiclass_svm(X, tr.labels, config_.svm, 9, &V, va.labels);
  const auto pred = svm_predict(model, V);
  ++evaluations_;
  const double value = config_.metric == SelectionMetric::LogLoss
                           ? nn::multiclass_log_loss(pred.probabilities, va.labels)
                           : nn::argmax_accuracy(pred.probabilities, va.labels);
  memo_.emplace(std::move(cols), value);
  return value;
}

double SubsetEvaluator::loss(const std::vector<std::string>& features) {
  const double v = evaluate(features);
  return config_.metric == SelectionMetric::LogLoss ? v : -v;
}

bool SubsetEvaluator::better(double a, double b) const {
  return config_.metric == SelectionMetric::LogLoss ? a < b : a > b;
}

std::vector<std::string> rank_candidates(const FeatureTable& train_tf) {
  std::vector<std::pair<Eigen::Index, std::string>> df;
  for (Eigen::Index j = 0; j < train_tf.cols(); ++j)
    df.emplace_back((train_tf.values.col(j).array() != 0).count(), train_tf.columns[static_cast<std::size_t>(j)]);
  std::sort(df.begin(), df.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (auto& [count, name] : df) out.push_back(std::move(name));
  return out;
}

void forward_search(const std::vector<std::string>& ranked, SubsetEvaluator& eval, SelectionTrace& trace,
                    std::size_t step, std::size_t patience) {
  if (step == 0 || patience == 0) throw Error(ErrorKind::ConfigError, "forward step and patience must be positive");
  const auto pool = unique_ids(ranked);
  if (pool.size() < step)
    throw Error(ErrorKind::PoolTooSmall,
                std::to_string(pool.size()) + " candidates, need at least " + std::to_string(step));

  std::size_t best_size = 0, stale = 0;
  double best = 0.0;
  for (std::size_t k = step;; k += step) {
    k = std::min(k, pool.size());
    std::vector<std::string> prefix(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    const double m = eval.evaluate(prefix);
    trace.entries.push_back({SelectionPhase::Forward, k, m, prefix});
    if (best_size == 0 || eval.better(m, best)) {
      best = m;
      best_size = k;
      stale = 0;
    } else if (++stale >= patience) {
      break;
    }
    if (k == pool.size()) break;
  }
  trace.peak_size = best_size;
  trace.peak_metric = best;
  trace.final_subset.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(best_size));
  trace.final_metric = best;
}

void backward_refine(SubsetEvaluator& eval, SelectionTrace& trace, BackwardMode mode) {
  auto current = unique_ids(trace.final_subset);
  if (current.empty()) throw Error(ErrorKind::EmptyInput, "backward refinement needs a starting subset");
  double score = eval.loss(current);

  while (current.size() > 1) {
    std::size_t drop = 0;
    double cand = 0.0;
    if (mode == BackwardMode::LastAdded) {
      drop = current.size() - 1;
      std::vector<std::string> trial(current.begin(), current.end() - 1);
      cand = eval.loss(trial);
    } else {
      bool have = false;
      for (std::size_t i = 0; i < current.size(); ++i) {
        std::vector<std::string> trial = current;
        trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(i));
        const double v = eval.loss(trial);
        if (!have || v < cand || (v == cand && current[i] < current[drop])) {
          have = true;
          cand = v;
          drop = i;
        }
      }
    }
    if (cand > score) break;
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(drop));
    score = cand;
    trace.entries.push_back({SelectionPhase::Backward, current.size(), eval.evaluate(current), current});
  }
  trace.final_subset = current;
  trace.final_metric = eval.evaluate(current);
}

SelectionTrace select_features(const SplitView& view, const SelectionOptions& options) {
  SubsetEvaluator eval(view, options.evaluator);
  const auto ranked = rank_candidates(view.rows(Partition::Train, kStage));
  SelectionTrace trace;
  forward_search(ranked, eval, trace, options.step, options.patience);
  backward_refine(eval, trace, options.backward);
  return trace;
}

void write_selection_trace(const SelectionTrace& trace, const std::filesystem::path& path) {
  std::vector<std::string> lines{kTraceHeader};
  lines.push_back("peak " + std::to_string(trace.peak_size) + " " + io::format_real(trace.peak_metric));
  std::string fin = "final " + io::format_real(trace.final_metric);
  for (const auto& id : trace.final_subset) fin += " " + id;
  lines.push_back(std::move(fin));
  for (const auto& e : trace.entries) {
    std::string line = "step " + std::string(phase_name(e.phase)) + " " + std::to_string(e.size) + " " +
                       io::format_real(e.metric);
    for (const auto& id : e.features) line += " " + id;
    lines.push_back(std::move(line));
  }
  io::write_lines(path, lines);
}

SelectionTrace read_selection_trace(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  auto bad = [&](std::size_t n, const std::string& why) {
    return Error(ErrorKind::MalformedLine, path.string() + ":" + std::to_string(n + 1) + ": " + why);
  };
  if (lines.empty() || lines[0] != kTraceHeader) throw bad(0, "missing selection trace header");
  SelectionTrace t;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto tok = io::split_whitespace(lines[n]);
    if (tok.empty()) continue;
    if (tok[0] == "peak" && tok.size() == 3) {
      t.peak_size = static_cast<std::size_t>(io::parse_int(tok[1]));
      t.peak_metric = io::parse_real(tok[2]);
    } else if (tok[0] == "final" && tok.size() >= 2) {
      t.final_metric = io::parse_real(tok[1]);
      for (std::size_t i = 2; i < tok.size(); ++i) t.final_subset.emplace_back(tok[i]);
    } else if (tok[0] == "step" && tok.size() >= 4) {
      TraceEntry e;
      if (tok[1] == "forward")
        e.phase = SelectionPhase::Forward;
      else if (tok[1] == "backward")
        e.phase = SelectionPhase::Backward;
      else
        throw bad(n, "unknown phase");
      e.size = static_cast<std::size_t>(io::parse_int(tok[2]));
      e.metric = io::parse_real(tok[3]);
      for (std::size_t i = 4; i < tok.size(); ++i) e.features.emplace_back(tok[i]);
      if (e.features.size() != e.size) throw bad(n, "size does not match feature count");
      t.entries.push_back(std::move(e));
    } else {
      throw bad(n, "unrecognized record");
    }
  }
  return t;
}

void write_subset(const std::vector<std::string>& subset, const std::filesystem::path& path) {
  std::vector<std::string> lines{"feature"};
  lines.insert(lines.end(), subset.begin(), subset.end());
  io::write_lines(path, lines);
}

std::vector<std::string> read_subset(const std::filesystem::path& path) {
  auto lines = io::read_lines(path);
  if (lines.empty() || lines[0] != "feature")
    throw Error(ErrorKind::MalformedLine, path.string() + ": missing 'feature' header");
  std::vector<std::string> out;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) out.push_back(std::move(lines[i]));
  return out;
}

}  // namespace malfuse
