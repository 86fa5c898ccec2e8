#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/estimators.hpp"
#include "vci/splits.hpp"
#include "vci/trainer.hpp"

namespace vci {

// |mean(Y_g | T=t) - mean(Y_g | T=control)| ranking, descending, ties by
// gene index; returns the top n_de gene indices.
std::vector<int> select_de_genes(const Dataset& dataset, int level, int control,
                                 int n_de);

// 1 - sum (true - pred)^2 / sum (true - mean(true))^2. The `true` side is
// the target; zero variance there is a DomainError.
double r2_average(std::span<const double> pred_mean,
                  std::span<const double> true_mean);

struct EvalCell {
  std::vector<int> covariate;
  int treatment = 0;
  long n_test = 0;
  long n_ood = 0;
  double r2_all = 0.0;
  double r2_de = 0.0;

  bool operator==(const EvalCell& other) const = default;
};

struct EstimatorRow {
  int epoch = 0;
  std::string method;     // "mean" | "robust"
  int treatment = -1;     // -1 = average over levels
  double r2_all = 0.0;
  double r2_de = 0.0;

  bool operator==(const EstimatorRow& other) const = default;
};

struct EvalReport {
  std::vector<std::pair<std::string, std::string>> config;  // echoed settings
  std::vector<EvalCell> cells;
  double avg_r2_all = 0.0;
  double avg_r2_de = 0.0;
  long cells_evaluated = 0;
  long cells_skipped = 0;
  std::vector<EstimatorRow> estimators;

  bool operator==(const EvalReport& other) const = default;
};

struct EvalOptions {
  int n_de = 50;
  int control_level = 0;   // DE-gene reference level
  int samples = 1;         // latent samples per prediction (0 = encoder mean)
};

// For each held-out (covariate, perturbation) cell: predict the perturbation
// for the test-set units with that covariate, average, and score against the
// OOD empirical average on all genes and on that perturbation's DE genes.
EvalReport evaluate_ood(const OutcomeAdjustment& predictor,
                        const Dataset& dataset, const SplitAssignment& splits,
                        const EvalOptions& options, RngStream& stream);

struct ComparisonOptions {
  int n_de = 50;
  int control_level = 0;
  int samples = 1;
  // cap on training rows fed to the estimators (0 = all); a uniform
  // subsample keeps large comparisons affordable
  int max_rows = 0;
  std::optional<int> treatment;  // restrict to one level; otherwise all
};

// Marginal-estimator comparison at the supplied checkpoints: estimates are
// computed on training rows, targets are test-set empirical averages per
// treatment level. Appends average rows (treatment = -1) over levels.
std::vector<EstimatorRow> compare_estimators(
    std::span<const TrainedBundle* const> checkpoints, const Dataset& dataset,
    const SplitAssignment& splits, const ComparisonOptions& options,
    RngStream& stream);

// Mean and standard deviation of estimator rows across runs, matched by
// (epoch, method, treatment).
struct ComparisonSummary {
  int epoch = 0;
  std::string method;
  int treatment = -1;
  double mean_r2_all = 0.0, sd_r2_all = 0.0;
  double mean_r2_de = 0.0, sd_r2_de = 0.0;
};
std::vector<ComparisonSummary> summarize_comparisons(
    const std::vector<std::vector<EstimatorRow>>& runs);

// Structured-text report: `key = value` header, then DSV sections [cells],
// [summary] and (when present) [estimators]. Round-trips losslessly.
void run_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

}  // namespace vci
