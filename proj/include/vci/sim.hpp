#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/matrix.hpp"
#include "vci/rng.hpp"

namespace vci {

// Synthetic-world configuration. The mixing seed fixes the structural
// matrices (the "laws" of the world); the simulate() seed fixes the draws.
struct SimConfig {
  int units = 1000;
  std::vector<int> covariate_levels = {3};  // m categorical covariates
  int treatment_levels = 4;
  int latent_dim = 8;
  int genes = 32;
  double noise_z = 0.5;       // latent noise scale
  double noise_y = 0.3;       // shared outcome noise scale
  double confounding = 1.0;   // weight of X in p(T | X); 0 = randomized trial
  double covariate_effect = 1.0;
  double treatment_effect = 1.0;
  enum class OutcomeLink { kTanh, kLinear };
  OutcomeLink link = OutcomeLink::kTanh;
  uint64_t mixing_seed = 7;
  bool materialize_counterfactuals = true;

  void validate() const;
};

struct SimDataset {
  Dataset data;
  // counterfactuals[a] holds Y'(a) rows; empty when not materialized.
  std::vector<Matrix> counterfactuals;
  Matrix latents;  // units x latent_dim, ground truth Z
};

// Structural model with fixed mixing matrices:
//   Z    = covariate_effect * A * onehot(X) + noise_z * eps_Z
//   T    ~ softmax(confounding * G * onehot(X))
//   Y(a) = link(B * Z + treatment_effect * C * onehot(a)) + U_Y
// with U_Y shared across all treatment levels of a unit, so the factual and
// counterfactual conditionals coincide and Y'(T) = Y exactly.
class Simulator {
 public:
  explicit Simulator(SimConfig cfg);

  SimDataset simulate(uint64_t seed) const;

  // E[Y | Z = z, T = level]; the oracle adjustment surface.
  std::vector<double> conditional_mean(std::span<const double> z,
                                       int level) const;
  // True assignment probabilities for one covariate tuple.
  std::vector<double> propensity(std::span<const int> cov_tuple) const;
  // Closed-form E[Y'(a)] for the linear link; throws ConfigError for tanh.
  std::vector<double> analytic_marginal(int level) const;

  const SimConfig& config() const { return cfg_; }

 private:
  std::vector<double> onehot_covariates(std::span<const int> cov_tuple) const;

  SimConfig cfg_;
  int cov_width_ = 0;
  Matrix covariate_mixing_;  // A: latent_dim x cov_width
  Matrix latent_loading_;    // B: genes x latent_dim
  Matrix treatment_shift_;   // C: genes x treatment_levels
  Matrix assignment_score_;  // G: treatment_levels x cov_width
};

SimDataset simulate(const SimConfig& cfg, uint64_t seed);

// Per-gene mean of the ground-truth Y'(a) over all units: the estimand that
// marginal estimators are judged against.
std::vector<double> true_marginal(const SimDataset& sim, int level);

}  // namespace vci
