#pragma once

#include <optional>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/matrix.hpp"
#include "vci/mlp.hpp"
#include "vci/model.hpp"
#include "vci/rng.hpp"

namespace vci {

enum class DetachMode { kNone, kEncoder, kBoth };
enum class ObjectiveKind { kVci, kSae };

struct ObjectiveConfig {
  double omega1 = 1.0;      // covariate-likelihood weight (vci)
  double omega2 = 0.1;      // divergence weight (vci)
  double omega_sae = 1.0;   // counterfactual weight (sae)
  DetachMode detach_mode = DetachMode::kNone;
  ObjectiveKind objective_kind = ObjectiveKind::kVci;
  int cf_sample_count = 1;
  bool cf_use_mean = false;  // counterfactual sample = decoder mean
  bool track_term_grad_norms = false;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double recon_term = 0.0;      // vci: reconstruction log-likelihood; sae: MSE
  double covariate_term = 0.0;  // stratified log-likelihood of the cf sample
  double kl_term = 0.0;         // vci only
  // Euclidean norms of each raw term's parameter gradient; zero unless
  // track_term_grad_norms was set.
  double recon_grad_norm = 0.0;
  double covariate_grad_norm = 0.0;
  double kl_grad_norm = 0.0;
};

struct ModelGrads {
  MlpGrads encoder;
  MlpGrads decoder;

  static ModelGrads zeros_like(const VciModel& model);
  void accumulate(const ModelGrads& other);
  void scale(double factor);
  double squared_norm() const;
};

// Noise consumed by one objective evaluation, drawn up front so the loss is
// a deterministic function of (model, batch, noise).
struct ObjectiveNoise {
  std::vector<Matrix> latent_eps;   // cf_sample_count matrices, B x d
  std::vector<Matrix> outcome_eps;  // cf_sample_count matrices, B x n
  std::vector<int> cf_treatments;   // B
};

ObjectiveNoise draw_objective_noise(const ModelDims& dims, const Batch& batch,
                                    const ObjectiveConfig& cfg,
                                    RngStream& stream);

// Frozen counterfactual samples for gradient verification: when set, the
// listed use site consumes the provided constant instead of the live sample,
// which is exactly what a detach mode's gradient treats as constant.
struct FrozenCounterfactuals {
  std::optional<std::vector<Matrix>> covariate_input;  // per sample, B x n
  std::optional<std::vector<Matrix>> kl_encode_input;  // per sample, B x n
};

struct ObjectiveResult {
  LossReport report;
  ModelGrads grads;
  std::vector<Matrix> cf_samples;  // realized Y'~ per latent sample, B x n
};

// KL[q1 || q2] between diagonal Gaussians; >= 0, 0 iff equal parameters.
double kl_diag_gaussians(const LatentGaussian& q1, const LatentGaussian& q2);

// Each entry drawn uniformly over levels \ {t}; requires levels >= 2.
std::vector<int> sample_counterfactual_treatments(std::span<const int> treatments,
                                                  int levels, RngStream& stream);

// Eq-style weighted objective with reconstruction, covariate-likelihood and
// divergence terms; gradients honor cfg.detach_mode.
ObjectiveResult vci_objective(const VciModel& model, const Batch& batch,
                              const StratifiedOutcomeModel& strat,
                              const ObjectiveConfig& cfg, RngStream& stream);
ObjectiveResult vci_objective_with_noise(const VciModel& model, const Batch& batch,
                                         const StratifiedOutcomeModel& strat,
                                         const ObjectiveConfig& cfg,
                                         const ObjectiveNoise& noise);

// Semi-autoencoder loss: MSE reconstruction plus the weighted counterfactual
// likelihood term, no divergence.
ObjectiveResult sae_loss(const VciModel& model, const Batch& batch,
                         const StratifiedOutcomeModel& strat,
                         const ObjectiveConfig& cfg, RngStream& stream);
ObjectiveResult sae_loss_with_noise(const VciModel& model, const Batch& batch,
                                    const StratifiedOutcomeModel& strat,
                                    const ObjectiveConfig& cfg,
                                    const ObjectiveNoise& noise);

// Scalar total only, for finite-difference probes. `frozen` freezes the
// counterfactual sample at selected use sites (see FrozenCounterfactuals).
double objective_value(const VciModel& model, const Batch& batch,
                       const StratifiedOutcomeModel& strat,
                       const ObjectiveConfig& cfg, const ObjectiveNoise& noise,
                       const FrozenCounterfactuals* frozen = nullptr);

}  // namespace vci
