#pragma once

#include <string>
#include <vector>

#include "malfuse/corpus.hpp"
#include "malfuse/features.hpp"

namespace malfuse {

/// Record of which partitions each stage read.
class AccessLog {
 public:
  struct Entry {
    std::string stage;
    Partition partition;
  };

  void record(std::string stage, Partition p) { entries_.push_back({std::move(stage), p}); }
  const std::vector<Entry>& entries() const { return entries_; }
  bool touched(Partition p) const;
  /// Stages that read partition `p`, in order.
  std::vector<std::string> readers(Partition p) const;

 private:
  std::vector<Entry> entries_;
};

/// A feature table seen through a split. All row access goes through
/// `rows`, which logs the stage and partition.
class SplitView {
 public:
  SplitView(const FeatureTable& table, const SplitAssignment& split, AccessLog* log = nullptr)
      : table_(table), split_(split), log_(log) {}

  FeatureTable rows(Partition p, const std::string& stage) const;
  /// The whole table; logs every partition.
  const FeatureTable& all(const std::string& stage) const;
  std::vector<std::string> ids(Partition p) const { return split_.ids(p); }
  const std::vector<std::string>& columns() const { return table_.columns; }

 private:
  const FeatureTable& table_;
  const SplitAssignment& split_;
  AccessLog* log_;
};

}  // namespace malfuse
