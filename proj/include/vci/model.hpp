#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/matrix.hpp"
#include "vci/mlp.hpp"
#include "vci/rng.hpp"

namespace vci {

inline constexpr double kLogvarClamp = 10.0;

// Diagonal Gaussian over one latent vector.
struct LatentGaussian {
  std::vector<double> mean;
  std::vector<double> logvar;
};

// Diagonal Gaussians for a batch, one row per unit.
struct GaussianBatch {
  Matrix mean;
  Matrix logvar;

  LatentGaussian row(int i) const {
    auto m = mean.row(i);
    auto lv = logvar.row(i);
    return {{m.begin(), m.end()}, {lv.begin(), lv.end()}};
  }
};

struct ModelDims {
  int genes = 0;
  std::vector<int> covariate_levels;
  int treatment_levels = 0;
  int latent_dim = 0;

  int covariate_onehot_width() const;
  int encoder_input_width() const;   // genes + covariate one-hots + treatment one-hot
  int decoder_input_width() const;   // latent_dim + treatment one-hot
  void validate() const;
};

// Encoder q(Z | Y, X, T) and decoder p(Y | Z, T), both emitting diagonal
// Gaussian (mean, logvar) pairs; categorical inputs enter one-hot encoded.
struct VciModel {
  ModelDims dims;
  MlpParams encoder;  // -> 2 * latent_dim
  MlpParams decoder;  // -> 2 * genes

  void validate() const;
};

VciModel make_vci_model(const ModelDims& dims,
                        std::span<const int> hidden_widths, RngStream& stream);

// Input assembly (shared with the objective's backward pass, which needs to
// know the column layout).
Matrix encoder_input(const ModelDims& dims, const Matrix& outcomes,
                     std::span<const int> covariates,
                     std::span<const int> treatments);
Matrix decoder_input(const ModelDims& dims, const Matrix& latents,
                     std::span<const int> treatments);

GaussianBatch encode(const VciModel& model, const Matrix& outcomes,
                     std::span<const int> covariates,
                     std::span<const int> treatments);
GaussianBatch encode(const VciModel& model, const Batch& batch);

GaussianBatch decode(const VciModel& model, const Matrix& latents,
                     std::span<const int> treatments);
GaussianBatch decode(const VciModel& model, const Matrix& latents, int level);

// Splits a raw network output (batch x 2*half) into mean and clamped logvar.
GaussianBatch split_gaussian_output(const Matrix& raw, int half);

// Log density of y under a diagonal Gaussian given as (mean, logvar) rows.
double gaussian_loglik(std::span<const double> y, std::span<const double> mean,
                       std::span<const double> logvar);

// Per-(covariate tuple, treatment) empirical outcome Gaussians with a
// treatment-marginal fallback for thin strata.
class StratifiedOutcomeModel {
 public:
  struct Stats {
    std::vector<double> mean;
    std::vector<double> var;  // floored elementwise
    long count = 0;
  };

  StratifiedOutcomeModel() = default;

  static StratifiedOutcomeModel fit(const Dataset& dataset,
                                    std::span<const int> rows,
                                    double variance_floor = 1e-4);

  // Resolves (x, t) to the stratum stats, falling back to the treatment
  // marginal when the stratum holds fewer than 2 units. Throws DomainError
  // naming (x, t) when the fallback is missing too.
  const Stats& lookup(std::span<const int> cov_tuple, int treatment) const;

  double loglik(std::span<const double> y, std::span<const int> cov_tuple,
                int treatment) const;
  // d loglik / d y = -(y - mean) / var, written into grad_out.
  void loglik_grad(std::span<const double> y, std::span<const int> cov_tuple,
                   int treatment, std::span<double> grad_out) const;

  double variance_floor() const { return variance_floor_; }
  int genes() const { return genes_; }
  const std::map<std::vector<int>, Stats>& strata() const { return strata_; }
  const std::map<int, Stats>& fallback() const { return fallback_; }

  // Direct construction (checkpoint loading, synthetic fixtures).
  static StratifiedOutcomeModel from_parts(std::map<std::vector<int>, Stats> strata,
                                           std::map<int, Stats> fallback,
                                           double variance_floor, int genes);

 private:
  std::map<std::vector<int>, Stats> strata_;  // key: covariate tuple + [t]
  std::map<int, Stats> fallback_;             // treatment marginal
  double variance_floor_ = 1e-4;
  int genes_ = 0;
};

// Empirical p(T | X) with add-one smoothing, floored at the clip value and
// renormalized so rows still sum to one.
class PropensityTable {
 public:
  PropensityTable() = default;

  static PropensityTable fit(const Dataset& dataset, std::span<const int> rows,
                             double clip_floor = 0.01);
  static PropensityTable from_probabilities(
      std::map<std::vector<int>, std::vector<double>> table,
      double clip_floor = 0.01);
  // Adopts already-normalized rows verbatim (checkpoint loading).
  static PropensityTable from_parts(
      std::map<std::vector<int>, std::vector<double>> table, double clip_floor);

  double prob(std::span<const int> cov_tuple, int treatment) const;
  const std::vector<double>& probs(std::span<const int> cov_tuple) const;

  double clip_floor() const { return clip_floor_; }
  int treatment_levels() const { return treatment_levels_; }
  const std::map<std::vector<int>, std::vector<double>>& table() const {
    return table_;
  }

 private:
  std::map<std::vector<int>, std::vector<double>> table_;
  double clip_floor_ = 0.01;
  int treatment_levels_ = 0;
};

// Floors entries at clip_floor and renormalizes the rest so the vector sums
// to one without dipping below the floor again.
std::vector<double> clip_and_renormalize(std::vector<double> probs,
                                         double clip_floor);

}  // namespace vci
