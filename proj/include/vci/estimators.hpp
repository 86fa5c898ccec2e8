#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/model.hpp"
#include "vci/rng.hpp"
#include "vci/trainer.hpp"

namespace vci {

// Source of the regression-adjustment term E[Y' | unit, level]: the trained
// decoder in production, oracle or deliberately corrupted surrogates in
// robustness tests.
class OutcomeAdjustment {
 public:
  virtual ~OutcomeAdjustment() = default;
  // Expected counterfactual outcome under `level` for the given rows,
  // one output row per input row.
  virtual Matrix expected_outcome(const Dataset& dataset,
                                  std::span<const int> rows, int level,
                                  int samples, RngStream& stream) const = 0;
};

// Adjustment backed by a trained model's predict_counterfactual.
class ModelAdjustment final : public OutcomeAdjustment {
 public:
  explicit ModelAdjustment(const VciModel& model) : model_(&model) {}
  Matrix expected_outcome(const Dataset& dataset, std::span<const int> rows,
                          int level, int samples,
                          RngStream& stream) const override;

 private:
  const VciModel* model_;
};

// Covariate-only adjustment: the stratified (X, level) mean, with the usual
// treatment-marginal fallback. Ignores samples and stream.
class StratifiedAdjustment final : public OutcomeAdjustment {
 public:
  explicit StratifiedAdjustment(const StratifiedOutcomeModel& strat)
      : strat_(&strat) {}
  Matrix expected_outcome(const Dataset& dataset, std::span<const int> rows,
                          int level, int samples,
                          RngStream& stream) const override;

 private:
  const StratifiedOutcomeModel* strat_;
};

enum class EstimatorMethod { kMean, kRobust };

struct MarginalEstimate {
  std::vector<double> psi_hat;
  EstimatorMethod method = EstimatorMethod::kMean;
  int treatment = 0;
  std::optional<std::vector<int>> covariate_filter;
  long unit_count = 0;
  int samples = 1;
  uint64_t seed = 0;
};

// Per-unit robust terms, one row per input row:
//   w * Y + (1 - w) * adjustment,   w = I(T = level) / p(T | X).
// The estimate is the column mean; the rows also carry the spread used for
// Monte Carlo standard errors.
Matrix robust_terms(const Dataset& dataset, std::span<const int> rows,
                    const OutcomeAdjustment& adjustment,
                    const PropensityTable& propensity, int level, int samples,
                    RngStream& stream);

MarginalEstimate robust_marginal(const Dataset& dataset,
                                 std::span<const int> rows,
                                 const OutcomeAdjustment& adjustment,
                                 const PropensityTable& propensity, int level,
                                 int samples, RngStream& stream);

// Column mean of a prediction matrix (the plug-in baseline).
MarginalEstimate mean_marginal(const Matrix& predictions);

// robust_marginal restricted to rows with X = cov_tuple.
MarginalEstimate covariate_marginal(const Dataset& dataset,
                                    std::span<const int> rows,
                                    const OutcomeAdjustment& adjustment,
                                    const PropensityTable& propensity,
                                    std::span<const int> cov_tuple, int level,
                                    int samples, RngStream& stream);

// DSV export (`gene_index,psi_hat`) plus a `<path>.meta` sidecar with the
// estimate's metadata.
void save_marginal_estimate(const MarginalEstimate& estimate,
                            const std::string& path);

}  // namespace vci
