#pragma once

// Shared fixtures for the unit suites.

#include <vector>

#include "vci/dataset.hpp"
#include "vci/matrix.hpp"
#include "vci/model.hpp"
#include "vci/rng.hpp"

namespace vci::testutil {

// Single categorical covariate; rows given as (covariate, treatment, genes...).
inline Dataset make_dataset(int covariate_levels, int treatment_levels,
                            int genes,
                            const std::vector<std::vector<double>>& rows) {
  Dataset d;
  d.covariate_levels = {covariate_levels};
  d.treatment_levels = treatment_levels;
  d.outcomes = Matrix(static_cast<int>(rows.size()), genes);
  for (size_t i = 0; i < rows.size(); ++i) {
    d.covariates.push_back(static_cast<int>(rows[i][0]));
    d.treatments.push_back(static_cast<int>(rows[i][1]));
    for (int j = 0; j < genes; ++j) {
      d.outcomes(static_cast<int>(i), j) = rows[i][static_cast<size_t>(j) + 2];
    }
  }
  d.validate();
  return d;
}

inline VciModel make_toy_model(int genes, int covariate_levels,
                               int treatment_levels, int latent_dim,
                               int hidden, uint64_t seed) {
  ModelDims dims;
  dims.genes = genes;
  dims.covariate_levels = {covariate_levels};
  dims.treatment_levels = treatment_levels;
  dims.latent_dim = latent_dim;
  RngStream stream = RngStream::from_seed(seed);
  return make_vci_model(dims, std::vector<int>{hidden}, stream);
}

inline void zero_weights(MlpParams& params) {
  for (MlpLayer& l : params.layers) {
    for (double& v : l.weight.data()) v = 0.0;
    for (double& v : l.bias) v = 0.0;
  }
}

}  // namespace vci::testutil
