#include "vci/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <string>

#include "vci/error.hpp"

namespace vci {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (latent_dim < 1) throw ConfigError("train: latent dim must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
  if (checkpoint_interval < 0) {
    throw ConfigError("train: checkpoint interval must be >= 0");
  }
  objective.validate();
}

TrainResult train(const Dataset& dataset, const SplitAssignment& splits,
                  const TrainConfig& cfg, const CheckpointHook& hook,
                  std::ostream* progress) {
  cfg.validate();
  dataset.validate();
  if (splits.labels.size() != static_cast<size_t>(dataset.units())) {
    throw ShapeError("train: split labels do not match dataset units");
  }
  std::vector<int> train_rows = splits.rows_with(SplitLabel::kTrain);
  if (train_rows.empty()) throw ConfigError("train: empty training split");

  TrainResult result;
  result.log.gradient_uses.assign(static_cast<size_t>(dataset.units()), 0);
  result.log.fit_uses.assign(static_cast<size_t>(dataset.units()), 0);

  // Empirical statistics are fit once, before gradient training, on the
  // training rows only.
  result.bundle.stratified =
      StratifiedOutcomeModel::fit(dataset, train_rows, cfg.variance_floor);
  result.bundle.propensity =
      PropensityTable::fit(dataset, train_rows, cfg.propensity_clip);
  for (int r : train_rows) result.log.fit_uses[static_cast<size_t>(r)] += 1;

  ModelDims dims;
  dims.genes = dataset.genes();
  dims.covariate_levels = dataset.covariate_levels;
  dims.treatment_levels = dataset.treatment_levels;
  dims.latent_dim = cfg.latent_dim;

  RngStream root = RngStream::from_seed(cfg.seed);
  RngStream init_stream = root.child("model-init");
  result.bundle.model = make_vci_model(dims, cfg.hidden_widths, init_stream);
  result.bundle.seed = cfg.seed;

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  AdamState enc_state = AdamState::init(result.bundle.model.encoder, adam_cfg);
  AdamState dec_state = AdamState::init(result.bundle.model.decoder, adam_cfg);

  RngStream shuffle_root = root.child("shuffle");
  RngStream noise_root = root.child("objective-noise");

  std::vector<int> order = train_rows;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    RngStream shuffle = shuffle_root.child(static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = shuffle.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }
    RngStream epoch_noise = noise_root.child(static_cast<uint64_t>(epoch));

    LossReport epoch_loss;
    long batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::span<const int> rows(order.data() + begin, end - begin);
      for (int r : rows) result.log.gradient_uses[static_cast<size_t>(r)] += 1;
      Batch batch = gather(dataset, rows);
      RngStream batch_stream = epoch_noise.child(static_cast<uint64_t>(batches));
      ObjectiveResult obj;
      try {
        obj = cfg.objective.objective_kind == ObjectiveKind::kVci
                  ? vci_objective(result.bundle.model, batch,
                                  result.bundle.stratified, cfg.objective,
                                  batch_stream)
                  : sae_loss(result.bundle.model, batch,
                             result.bundle.stratified, cfg.objective,
                             batch_stream);
      } catch (const NumericError& e) {
        throw NumericError("train: " + std::string(e.what()) + " at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      if (!std::isfinite(obj.report.total)) {
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      adam_step(result.bundle.model.encoder, obj.grads.encoder, enc_state);
      adam_step(result.bundle.model.decoder, obj.grads.decoder, dec_state);
      epoch_loss.total += obj.report.total;
      epoch_loss.recon_term += obj.report.recon_term;
      epoch_loss.covariate_term += obj.report.covariate_term;
      epoch_loss.kl_term += obj.report.kl_term;
      ++batches;
    }
    epoch_loss.total /= batches;
    epoch_loss.recon_term /= batches;
    epoch_loss.covariate_term /= batches;
    epoch_loss.kl_term /= batches;

    EpochStats stats;
    stats.mean_loss = epoch_loss;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    result.log.epochs.push_back(stats);
    result.bundle.epoch = epoch;

    if (progress != nullptr) {
      (*progress) << "epoch=" << epoch << " total=" << epoch_loss.total
                  << " recon=" << epoch_loss.recon_term
                  << " cov=" << epoch_loss.covariate_term
                  << " kl=" << epoch_loss.kl_term << "\n";
    }
    if (hook && cfg.checkpoint_interval > 0 &&
        (epoch % cfg.checkpoint_interval == 0 || epoch == cfg.epochs)) {
      hook(result.bundle);
    }
  }
  return result;
}

Matrix predict_counterfactual(const VciModel& model, const Batch& batch,
                              int level, int samples, RngStream& stream) {
  model.validate();
  if (level < 0 || level >= model.dims.treatment_levels) {
    throw DomainError("predict_counterfactual: treatment level " +
                      std::to_string(level) + " out of range");
  }
  if (samples < 0) {
    throw ConfigError("predict_counterfactual: samples must be >= 0");
  }
  GaussianBatch posterior = encode(model, batch);
  const int b = batch.size();
  const int genes = model.dims.genes;
  if (samples == 0) {
    GaussianBatch out = decode(model, posterior.mean, level);
    return out.mean;
  }
  Matrix mean_accum(b, genes);
  RngStream noise = stream.child("predict-noise");
  for (int s = 0; s < samples; ++s) {
    RngStream sample_stream = noise.child(static_cast<uint64_t>(s));
    Matrix eps(b, model.dims.latent_dim);
    for (double& v : eps.data()) v = sample_stream.normal();
    Matrix z = gaussian_reparameterize(posterior.mean, posterior.logvar, eps);
    GaussianBatch out = decode(model, z, level);
    add_inplace(mean_accum, out.mean);
  }
  for (double& v : mean_accum.data()) v /= samples;
  return mean_accum;
}

}  // namespace vci
