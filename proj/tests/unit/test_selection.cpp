#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "malfuse/error.hpp"
#include "malfuse/selection.hpp"
#include "planted.hpp"
#include "temp_dir.hpp"

using namespace malfuse;

TEST_CASE("candidates rank by document frequency then name") {
  FeatureTable t;
  t.columns = {"mov", "add", "jmp", "xor"};
  t.values.resize(4, 4);
  t.values << 1, 0, 5, 0,  //
      2, 3, 0, 0,          //
      0, 1, 1, 0,          //
      9, 0, 0, 0;
  t.ids = {"a", "b", "c", "d"};
  t.labels = {0, 0, 1, 1};
  // Frequencies: mov 3, add 2, jmp 2, xor 0.
  CHECK(rank_candidates(t) == std::vector<std::string>{"mov", "add", "jmp", "xor"});
}

TEST_CASE("pool smaller than one step is rejected") {
  const auto d = test::make_planted(1, 9, 2);
  SplitView view(d.table, d.split);
  SubsetEvaluator eval(view, {});
  SelectionTrace trace;
  try {
    forward_search(rank_candidates(d.table), eval, trace);
    FAIL("expected PoolTooSmall");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PoolTooSmall);
  }
}

TEST_CASE("forward prefixes grow by the step and stop after the first non-improvement") {
  const auto d = test::make_planted(3, 45, 5);
  SplitView view(d.table, d.split);
  SubsetEvaluator eval(view, {});
  SelectionTrace trace;
  forward_search(rank_candidates(d.table), eval, trace);
  REQUIRE(!trace.entries.empty());
  double best = trace.entries[0].metric;
  for (std::size_t i = 0; i < trace.entries.size(); ++i) {
    const auto& e = trace.entries[i];
    CHECK(e.size == std::min<std::size_t>(10 * (i + 1), 45));
    if (i > 0 && i + 1 < trace.entries.size()) {
      CHECK(e.metric < best);  // every non-final step improved
      best = e.metric;
    }
  }
  const auto& last = trace.entries.back();
  CHECK((last.size == 45 || trace.entries.size() == 1 || last.metric >= best));
  CHECK(std::find_if(trace.entries.begin(), trace.entries.end(), [&](const TraceEntry& e) {
          return e.size == trace.peak_size && e.metric == trace.peak_metric;
        }) != trace.entries.end());
}

TEST_CASE("duplicate ids do not change the metric") {
  const auto d = test::make_planted(5);
  SplitView view(d.table, d.split);
  SubsetEvaluator eval(view, {});
  std::vector<std::string> s = d.informative;
  const double base = eval.evaluate(s);
  s.push_back(d.informative[0]);
  s.insert(s.begin(), d.informative[2]);
  CHECK(eval.evaluate(s) == base);

  // Fresh evaluator, reversed order: same value without the memo.
  SubsetEvaluator fresh(view, {});
  std::vector<std::string> rev(d.informative.rbegin(), d.informative.rend());
  CHECK(std::abs(fresh.evaluate(rev) - base) < 1e-12);
  CHECK_THROWS_AS(eval.evaluate({"nope"}), Error);
}

TEST_CASE("accuracy metric is maximized") {
  const auto d = test::make_planted(6);
  SplitView view(d.table, d.split);
  EvaluatorConfig cfg;
  cfg.metric = SelectionMetric::Accuracy;
  SubsetEvaluator eval(view, cfg);
  const double acc = eval.evaluate(d.informative);
  CHECK(acc > 0.5);
  CHECK(acc <= 1.0);
  CHECK(eval.loss(d.informative) == -acc);
  CHECK(eval.better(0.9, 0.8));
  CHECK(parse_selection_metric(to_string(SelectionMetric::Accuracy)) == SelectionMetric::Accuracy);
  CHECK(parse_backward_mode("last-added") == BackwardMode::LastAdded);
  CHECK_THROWS_AS(parse_backward_mode("sideways"), Error);
}

TEST_CASE("planted informative features survive and TEST is never read") {
  int kept = 0;
  const int seeds = 3;
  for (int s = 0; s < seeds; ++s) {
    const auto d = test::make_planted(100 + static_cast<std::uint64_t>(s));
    AccessLog log;
    SplitView view(d.table, d.split, &log);
    const auto trace = select_features(view, {});
    std::vector<std::string> fin = trace.final_subset;
    std::sort(fin.begin(), fin.end());
    INFO("seed " << s << " kept " << fin.size());
    if (std::includes(fin.begin(), fin.end(), d.informative.begin(), d.informative.end())) ++kept;
    CHECK(!log.touched(Partition::Test));
    CHECK(log.touched(Partition::Train));
    CHECK(log.touched(Partition::Val));
    CHECK(trace.final_metric <= trace.peak_metric);
  }
  CHECK(kept == seeds);
}

TEST_CASE("uninformative features score near chance") {
  const auto d = test::make_planted(9, 20, 0);
  SplitView view(d.table, d.split);
  SubsetEvaluator eval(view, {});
  std::vector<std::string> all(d.table.columns.begin(), d.table.columns.begin() + 10);
  CHECK(std::abs(eval.evaluate(all) - std::log(9.0)) < 0.3);
}

TEST_CASE("last-added backward mode only removes from the tail") {
  const auto d = test::make_planted(12);
  SplitView view(d.table, d.split);
  SubsetEvaluator eval(view, {});
  SelectionTrace trace;
  forward_search(rank_candidates(d.table), eval, trace);
  const auto start = trace.final_subset;
  backward_refine(eval, trace, BackwardMode::LastAdded);
  REQUIRE(trace.final_subset.size() <= start.size());
  CHECK(std::equal(trace.final_subset.begin(), trace.final_subset.end(), start.begin()));
}

TEST_CASE("trace and subset persistence") {
  const auto d = test::make_planted(21);
  SplitView view(d.table, d.split);
  const auto trace = select_features(view, {});
  test::TempDir dir("sel");
  write_selection_trace(trace, dir / "trace.txt");
  const auto back = read_selection_trace(dir / "trace.txt");
  REQUIRE(back.entries.size() == trace.entries.size());
  for (std::size_t i = 0; i < trace.entries.size(); ++i) {
    CHECK(back.entries[i].phase == trace.entries[i].phase);
    CHECK(back.entries[i].features == trace.entries[i].features);
    CHECK(back.entries[i].metric == trace.entries[i].metric);
  }
  CHECK(back.final_subset == trace.final_subset);
  CHECK(back.peak_size == trace.peak_size);

  // Replaying the final subset reproduces its metric.
  SubsetEvaluator eval(view, {});
  CHECK(eval.evaluate(back.final_subset) == back.final_metric);

  write_subset(trace.final_subset, dir / "subset.csv");
  CHECK(read_subset(dir / "subset.csv") == trace.final_subset);
}
