#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "malfuse/nn/gradcheck.hpp"
#include "malfuse/nn/network.hpp"

namespace malfuse {

struct GradCheckCase {
  std::string name;
  nn::ArchitectureDescriptor arch;
  double threshold = 1e-4;  // 1e-6 for pointwise smooth layers
  nn::Index batch = 2;
};

struct GradCheckOutcome {
  std::string name;
  double threshold = 0.0;
  nn::GradCheckReport report;

  bool passed() const { return report.max_relative_error < threshold; }
};

/// One case per layer kind on a small input, then every network of the
/// toolkit (five-layer CNN, both autoencoders, pretrained CNN, baseline and
/// fusion MLPs) with channel widths divided by `divisor`.
std::vector<GradCheckCase> gradcheck_cases(nn::Index divisor = 32);

/// Runs every case in double precision and prints one line per case.
std::vector<GradCheckOutcome> run_gradcheck_suite(nn::Index divisor = 32, std::uint64_t seed = 0,
                                                  std::ostream* progress = nullptr);

}  // namespace malfuse
