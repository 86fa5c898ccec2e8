#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/rng.hpp"

namespace vci {

enum class SplitLabel { kTrain, kTest, kOod };

struct SplitAssignment {
  std::vector<SplitLabel> labels;  // one per unit
  // (covariate tuple, perturbation) pairs whose units are all OOD
  std::vector<std::pair<std::vector<int>, int>> held_out;
  uint64_t seed = 0;

  std::vector<int> rows_with(SplitLabel label) const;
  void validate(const Dataset& dataset) const;
};

// Euclidean distance between the pseudobulk (per-gene mean) of units with
// T = level and the pseudobulk of all other units.
double pseudobulk_distance(const Dataset& dataset, int level);

// Ranks levels by pseudobulk distance (descending, ties by level index),
// holds out the top k for one covariate tuple drawn uniformly, then splits
// the remaining units train/test at the given test fraction (default 4:1).
SplitAssignment select_ood(const Dataset& dataset, int k, RngStream& stream,
                           double test_fraction = 0.2);

}  // namespace vci
