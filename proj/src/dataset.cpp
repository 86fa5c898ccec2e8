#include "vci/dataset.hpp"

#include <numeric>
#include <string>

#include "vci/error.hpp"

namespace vci {

std::vector<int> Dataset::all_rows() const {
  std::vector<int> rows(static_cast<size_t>(units()));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void Dataset::validate() const {
  const size_t m = covariate_levels.size();
  if (treatments.size() != static_cast<size_t>(units())) {
    throw ShapeError("dataset: treatment count " +
                     std::to_string(treatments.size()) +
                     " does not match unit count " + std::to_string(units()));
  }
  if (covariates.size() != static_cast<size_t>(units()) * m) {
    throw ShapeError("dataset: covariate storage does not match units x m");
  }
  if (treatment_levels < 1) {
    throw DomainError("dataset: treatment_levels must be >= 1");
  }
  for (size_t j = 0; j < m; ++j) {
    if (covariate_levels[j] < 1) {
      throw DomainError("dataset: covariate " + std::to_string(j) +
                        " has no levels");
    }
  }
  for (int u = 0; u < units(); ++u) {
    const int t = treatments[static_cast<size_t>(u)];
    if (t < 0 || t >= treatment_levels) {
      throw DomainError("dataset: unit " + std::to_string(u) +
                        " treatment code " + std::to_string(t) +
                        " outside [0, " + std::to_string(treatment_levels) + ")");
    }
    std::span<const int> cov = covariate_row(u);
    for (size_t j = 0; j < m; ++j) {
      if (cov[j] < 0 || cov[j] >= covariate_levels[j]) {
        throw DomainError("dataset: unit " + std::to_string(u) +
                          " covariate " + std::to_string(j) + " code " +
                          std::to_string(cov[j]) + " outside [0, " +
                          std::to_string(covariate_levels[j]) + ")");
      }
    }
  }
  ensure_finite(outcomes, "dataset outcomes");
}

Batch gather(const Dataset& dataset, std::span<const int> rows) {
  Batch batch;
  batch.covariate_count = dataset.covariate_count();
  batch.outcomes = Matrix(static_cast<int>(rows.size()), dataset.genes());
  batch.treatments.reserve(rows.size());
  batch.covariates.reserve(rows.size() *
                           static_cast<size_t>(batch.covariate_count));
  for (size_t i = 0; i < rows.size(); ++i) {
    const int u = rows[i];
    if (u < 0 || u >= dataset.units()) {
      throw DomainError("gather: row index " + std::to_string(u) +
                        " out of range");
    }
    std::span<const double> src = dataset.outcomes.row(u);
    std::span<double> dst = batch.outcomes.row(static_cast<int>(i));
    std::copy(src.begin(), src.end(), dst.begin());
    batch.treatments.push_back(dataset.treatments[static_cast<size_t>(u)]);
    std::span<const int> cov = dataset.covariate_row(u);
    batch.covariates.insert(batch.covariates.end(), cov.begin(), cov.end());
  }
  return batch;
}

}  // namespace vci
