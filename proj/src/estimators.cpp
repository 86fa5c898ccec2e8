#include "vci/estimators.hpp"

#include <fstream>
#include <string>

#include "vci/dataio.hpp"
#include "vci/error.hpp"

namespace vci {

Matrix ModelAdjustment::expected_outcome(const Dataset& dataset,
                                         std::span<const int> rows, int level,
                                         int samples, RngStream& stream) const {
  Batch batch = gather(dataset, rows);
  return predict_counterfactual(*model_, batch, level, samples, stream);
}

Matrix StratifiedAdjustment::expected_outcome(const Dataset& dataset,
                                              std::span<const int> rows,
                                              int level, int /*samples*/,
                                              RngStream& /*stream*/) const {
  Matrix out(static_cast<int>(rows.size()), dataset.genes());
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& stats = strat_->lookup(dataset.covariate_row(rows[i]), level);
    double* dst = out.row(static_cast<int>(i)).data();
    std::copy(stats.mean.begin(), stats.mean.end(), dst);
  }
  return out;
}

Matrix robust_terms(const Dataset& dataset, std::span<const int> rows,
                    const OutcomeAdjustment& adjustment,
                    const PropensityTable& propensity, int level, int samples,
                    RngStream& stream) {
  if (rows.empty()) throw DomainError("robust estimator: no rows");
  if (level < 0 || level >= dataset.treatment_levels) {
    throw DomainError("robust estimator: treatment level " +
                      std::to_string(level) + " out of range");
  }
  Matrix adjusted =
      adjustment.expected_outcome(dataset, rows, level, samples, stream);
  if (adjusted.rows() != static_cast<int>(rows.size()) ||
      adjusted.cols() != dataset.genes()) {
    throw ShapeError("robust estimator: adjustment output has wrong shape");
  }
  Matrix terms(static_cast<int>(rows.size()), dataset.genes());
  for (size_t i = 0; i < rows.size(); ++i) {
    const int u = rows[i];
    const int t = dataset.treatments[static_cast<size_t>(u)];
    // the weight divides by the propensity of the unit's own observed
    // treatment; the indicator zeroes it unless that treatment is `level`
    const double w =
        t == level
            ? 1.0 / propensity.prob(dataset.covariate_row(u), t)
            : 0.0;
    const double* y = dataset.outcomes.row(u).data();
    const double* m = adjusted.row(static_cast<int>(i)).data();
    double* out = terms.row(static_cast<int>(i)).data();
    for (int g = 0; g < dataset.genes(); ++g) {
      out[g] = w * y[g] + (1.0 - w) * m[g];
    }
  }
  ensure_finite(terms, "robust estimator terms");
  return terms;
}

MarginalEstimate robust_marginal(const Dataset& dataset,
                                 std::span<const int> rows,
                                 const OutcomeAdjustment& adjustment,
                                 const PropensityTable& propensity, int level,
                                 int samples, RngStream& stream) {
  Matrix terms =
      robust_terms(dataset, rows, adjustment, propensity, level, samples, stream);
  MarginalEstimate est;
  est.psi_hat = column_means(terms);
  est.method = EstimatorMethod::kRobust;
  est.treatment = level;
  est.unit_count = static_cast<long>(rows.size());
  est.samples = samples;
  return est;
}

MarginalEstimate mean_marginal(const Matrix& predictions) {
  if (predictions.rows() == 0) throw DomainError("mean_marginal: no rows");
  MarginalEstimate est;
  est.psi_hat = column_means(predictions);
  est.method = EstimatorMethod::kMean;
  est.unit_count = predictions.rows();
  return est;
}

MarginalEstimate covariate_marginal(const Dataset& dataset,
                                    std::span<const int> rows,
                                    const OutcomeAdjustment& adjustment,
                                    const PropensityTable& propensity,
                                    std::span<const int> cov_tuple, int level,
                                    int samples, RngStream& stream) {
  std::vector<int> subset;
  for (int u : rows) {
    std::span<const int> cov = dataset.covariate_row(u);
    if (std::equal(cov.begin(), cov.end(), cov_tuple.begin(), cov_tuple.end())) {
      subset.push_back(u);
    }
  }
  if (subset.empty()) {
    std::string tuple;
    for (int c : cov_tuple) tuple += std::to_string(c) + " ";
    throw DomainError("covariate_marginal: no units with covariates " + tuple);
  }
  MarginalEstimate est = robust_marginal(dataset, subset, adjustment,
                                         propensity, level, samples, stream);
  est.covariate_filter = std::vector<int>(cov_tuple.begin(), cov_tuple.end());
  return est;
}

void save_marginal_estimate(const MarginalEstimate& estimate,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "gene_index,psi_hat\n";
  for (size_t g = 0; g < estimate.psi_hat.size(); ++g) {
    out << g << "," << format_double(estimate.psi_hat[g]) << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
  out.close();

  std::ofstream meta(path + ".meta");
  if (!meta) throw IoError("cannot open " + path + ".meta for writing");
  meta << "method = "
       << (estimate.method == EstimatorMethod::kRobust ? "robust" : "mean")
       << "\n";
  meta << "treatment = " << estimate.treatment << "\n";
  if (estimate.covariate_filter.has_value()) {
    meta << "covariate = ";
    for (size_t i = 0; i < estimate.covariate_filter->size(); ++i) {
      if (i > 0) meta << "|";
      meta << (*estimate.covariate_filter)[i];
    }
    meta << "\n";
  }
  meta << "units = " << estimate.unit_count << "\n";
  meta << "samples = " << estimate.samples << "\n";
  meta << "seed = " << estimate.seed << "\n";
  if (!meta) throw IoError("write failed for " + path + ".meta");
}

}  // namespace vci
