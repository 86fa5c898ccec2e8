#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/model.hpp"
#include "vci/objective.hpp"
#include "vci/rng.hpp"
#include "vci/splits.hpp"

namespace vci {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double learning_rate = 1e-3;
  int latent_dim = 32;
  std::vector<int> hidden_widths = {128, 128};
  ObjectiveConfig objective;
  uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0 = only the final state is reported
  double variance_floor = 1e-4;
  double propensity_clip = 0.01;

  void validate() const;
};

struct EpochStats {
  LossReport mean_loss;  // batch-averaged terms
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  // per-row instrumentation: how often each dataset row fed a gradient step
  // and how often it entered the stratified/propensity fits
  std::vector<uint32_t> gradient_uses;
  std::vector<uint32_t> fit_uses;
};

// Everything needed to predict and estimate after training.
struct TrainedBundle {
  VciModel model;
  StratifiedOutcomeModel stratified;
  PropensityTable propensity;
  uint64_t seed = 0;
  int epoch = 0;
};

struct TrainResult {
  TrainedBundle bundle;
  TrainLog log;
};

using CheckpointHook = std::function<void(const TrainedBundle&)>;

// Fits the stratified and propensity models on the training rows, then runs
// shuffled minibatch epochs of the configured objective. OOD rows never
// contribute to anything. Deterministic given cfg.seed. Progress lines
// (`epoch=.. total=.. recon=.. cov=.. kl=..`) go to `progress` when non-null.
TrainResult train(const Dataset& dataset, const SplitAssignment& splits,
                  const TrainConfig& cfg, const CheckpointHook& hook = {},
                  std::ostream* progress = nullptr);

// Per-unit counterfactual prediction under `level`: draws `samples` latents
// from the encoder posterior (0 = use the posterior mean) and averages the
// decoder means.
Matrix predict_counterfactual(const VciModel& model, const Batch& batch,
                              int level, int samples, RngStream& stream);

}  // namespace vci
