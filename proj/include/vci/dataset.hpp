#pragma once

#include <span>
#include <vector>

#include "vci/matrix.hpp"

namespace vci {

// In-memory dataset: one row per unit. Covariates and treatment are integer
// category codes; outcomes are real gene values.
struct Dataset {
  Matrix outcomes;                   // units x genes
  std::vector<int> treatments;       // units
  std::vector<int> covariates;       // units x m, row-major
  std::vector<int> covariate_levels; // m entries, level count per covariate
  int treatment_levels = 0;

  int units() const { return outcomes.rows(); }
  int genes() const { return outcomes.cols(); }
  int covariate_count() const {
    return static_cast<int>(covariate_levels.size());
  }

  std::span<const int> covariate_row(int unit) const {
    const size_t m = covariate_levels.size();
    return {covariates.data() + static_cast<size_t>(unit) * m, m};
  }

  std::vector<int> all_rows() const;
  // Throws DomainError / ShapeError on inconsistent codes or sizes.
  void validate() const;
};

// Row subset of a dataset, materialized for batched model evaluation.
struct Batch {
  Matrix outcomes;             // B x genes
  std::vector<int> treatments; // B
  std::vector<int> covariates; // B x m, row-major
  int covariate_count = 0;

  int size() const { return outcomes.rows(); }
  std::span<const int> covariate_row(int i) const {
    const size_t m = static_cast<size_t>(covariate_count);
    return {covariates.data() + static_cast<size_t>(i) * m, m};
  }
};

Batch gather(const Dataset& dataset, std::span<const int> rows);

}  // namespace vci
