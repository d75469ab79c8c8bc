#include "malfuse/split_view.hpp"

#include <algorithm>

namespace malfuse {

bool AccessLog::touched(Partition p) const {
  return std::any_of(entries_.begin(), entries_.end(), [p](const Entry& e) { return e.partition == p; });
}

std::vector<std::string> AccessLog::readers(Partition p) const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.partition == p) out.push_back(e.stage);
  return out;
}

FeatureTable SplitView::rows(Partition p, const std::string& stage) const {
  if (log_) log_->record(stage, p);
  return table_.select_rows(split_.ids(p));
}

const FeatureTable& SplitView::all(const std::string& stage) const {
  if (log_)
    for (Partition p : {Partition::Train, Partition::Val, Partition::Test}) log_->record(stage, p);
  return table_;
}

}  // namespace malfuse
