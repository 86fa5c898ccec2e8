#include "vci/objective.hpp"

#include <cmath>
#include <string>

#include "vci/error.hpp"

namespace vci {

void ObjectiveConfig::validate() const {
  if (omega1 < 0.0 || omega2 < 0.0 || omega_sae < 0.0) {
    throw ConfigError("objective weights must be >= 0");
  }
  if (cf_sample_count < 1) {
    throw ConfigError("cf_sample_count must be >= 1");
  }
}

ModelGrads ModelGrads::zeros_like(const VciModel& model) {
  return {MlpGrads::zeros_like(model.encoder),
          MlpGrads::zeros_like(model.decoder)};
}

void ModelGrads::accumulate(const ModelGrads& other) {
  encoder.accumulate(other.encoder);
  decoder.accumulate(other.decoder);
}

void ModelGrads::scale(double factor) {
  encoder.scale(factor);
  decoder.scale(factor);
}

double ModelGrads::squared_norm() const {
  return encoder.squared_norm() + decoder.squared_norm();
}

double kl_diag_gaussians(const LatentGaussian& q1, const LatentGaussian& q2) {
  if (q1.mean.size() != q1.logvar.size() || q1.mean.size() != q2.mean.size() ||
      q2.mean.size() != q2.logvar.size()) {
    throw ShapeError("kl_diag_gaussians: dimension mismatch (" +
                     std::to_string(q1.mean.size()) + " vs " +
                     std::to_string(q2.mean.size()) + ")");
  }
  double acc = 0.0;
  for (size_t i = 0; i < q1.mean.size(); ++i) {
    const double dm = q2.mean[i] - q1.mean[i];
    acc += 0.5 * (std::exp(q1.logvar[i] - q2.logvar[i]) +
                  dm * dm * std::exp(-q2.logvar[i]) - 1.0 + q2.logvar[i] -
                  q1.logvar[i]);
  }
  return acc;
}

std::vector<int> sample_counterfactual_treatments(std::span<const int> treatments,
                                                  int levels,
                                                  RngStream& stream) {
  if (levels < 2) {
    throw ConfigError("counterfactual sampling needs >= 2 treatment levels");
  }
  std::vector<int> out(treatments.size());
  for (size_t k = 0; k < treatments.size(); ++k) {
    const int t = treatments[k];
    if (t < 0 || t >= levels) {
      throw DomainError("treatment code " + std::to_string(t) +
                        " outside [0, " + std::to_string(levels) + ")");
    }
    const int draw =
        static_cast<int>(stream.uniform_int(static_cast<uint64_t>(levels - 1)));
    out[k] = draw >= t ? draw + 1 : draw;
  }
  return out;
}

ObjectiveNoise draw_objective_noise(const ModelDims& dims, const Batch& batch,
                                    const ObjectiveConfig& cfg,
                                    RngStream& stream) {
  cfg.validate();
  ObjectiveNoise noise;
  const int b = batch.size();
  RngStream latent_root = stream.child("latent-eps");
  RngStream outcome_root = stream.child("outcome-eps");
  for (int s = 0; s < cfg.cf_sample_count; ++s) {
    RngStream ls = latent_root.child(static_cast<uint64_t>(s));
    Matrix eps(b, dims.latent_dim);
    for (double& v : eps.data()) v = ls.normal();
    noise.latent_eps.push_back(std::move(eps));
    RngStream os = outcome_root.child(static_cast<uint64_t>(s));
    Matrix oeps(b, dims.genes);
    for (double& v : oeps.data()) v = os.normal();
    noise.outcome_eps.push_back(std::move(oeps));
  }
  RngStream cf_stream = stream.child("cf-treatments");
  noise.cf_treatments = sample_counterfactual_treatments(
      batch.treatments, dims.treatment_levels, cf_stream);
  return noise;
}

namespace {

// Forward intermediates for one evaluation; everything the backward pass
// needs to avoid recomputation.
struct ForwardState {
  Matrix enc_in;               // E1
  MlpTrace enc_trace;          // pass 1
  GaussianBatch latent;        // mu1 / lv1 (clamped)

  struct Sample {
    Matrix z;
    MlpTrace dec_trace_fact;   // decode with T
    GaussianBatch out_fact;
    MlpTrace dec_trace_cf;     // decode with T'
    GaussianBatch out_cf;
    Matrix cf_sample;          // realized Y'~
    MlpTrace enc_trace_cf;     // encode(Y'~, X, T'), vci only
    GaussianBatch latent_cf;
  };
  std::vector<Sample> samples;

  double recon = 0.0;
  double cov = 0.0;
  double kl = 0.0;
};

// Per-unit stratum stats resolved once per evaluation.
std::vector<const StratifiedOutcomeModel::Stats*> resolve_strata(
    const Batch& batch, const std::vector<int>& cf_treatments,
    const StratifiedOutcomeModel& strat) {
  std::vector<const StratifiedOutcomeModel::Stats*> stats;
  stats.reserve(static_cast<size_t>(batch.size()));
  for (int k = 0; k < batch.size(); ++k) {
    stats.push_back(
        &strat.lookup(batch.covariate_row(k),
                      cf_treatments[static_cast<size_t>(k)]));
  }
  return stats;
}

void check_noise(const ModelDims& dims, const Batch& batch,
                 const ObjectiveConfig& cfg, const ObjectiveNoise& noise) {
  const size_t s = static_cast<size_t>(cfg.cf_sample_count);
  if (noise.latent_eps.size() != s || noise.outcome_eps.size() != s) {
    throw ShapeError("objective noise does not match cf_sample_count");
  }
  if (noise.cf_treatments.size() != static_cast<size_t>(batch.size())) {
    throw ShapeError("objective noise: counterfactual treatments do not match batch");
  }
  for (int i = 0; i < cfg.cf_sample_count; ++i) {
    const Matrix& le = noise.latent_eps[static_cast<size_t>(i)];
    const Matrix& oe = noise.outcome_eps[static_cast<size_t>(i)];
    if (le.rows() != batch.size() || le.cols() != dims.latent_dim ||
        oe.rows() != batch.size() || oe.cols() != dims.genes) {
      throw ShapeError("objective noise matrices have wrong shape");
    }
  }
}

ForwardState run_forward(const VciModel& model, const Batch& batch,
                         const std::vector<const StratifiedOutcomeModel::Stats*>& stats,
                         const ObjectiveConfig& cfg, const ObjectiveNoise& noise,
                         const FrozenCounterfactuals* frozen) {
  const ModelDims& dims = model.dims;
  const int b = batch.size();
  const int n = dims.genes;
  const int d = dims.latent_dim;
  const int s_count = cfg.cf_sample_count;
  const bool vci_kind = cfg.objective_kind == ObjectiveKind::kVci;

  ForwardState fs;
  fs.enc_in = encoder_input(dims, batch.outcomes, batch.covariates,
                            batch.treatments);
  Matrix h1 = mlp_forward(model.encoder, fs.enc_in, &fs.enc_trace);
  fs.latent = split_gaussian_output(h1, d);

  for (int s = 0; s < s_count; ++s) {
    ForwardState::Sample sample;
    sample.z = gaussian_reparameterize(fs.latent.mean, fs.latent.logvar,
                                       noise.latent_eps[static_cast<size_t>(s)]);
    Matrix dec_in_fact = decoder_input(dims, sample.z, batch.treatments);
    Matrix h2 = mlp_forward(model.decoder, dec_in_fact, &sample.dec_trace_fact);
    sample.out_fact = split_gaussian_output(h2, n);

    if (vci_kind) {
      for (int k = 0; k < b; ++k) {
        fs.recon += gaussian_loglik(batch.outcomes.row(k),
                                    sample.out_fact.mean.row(k),
                                    sample.out_fact.logvar.row(k));
      }
    } else {
      for (int k = 0; k < b; ++k) {
        const double* y = batch.outcomes.row(k).data();
        const double* mu = sample.out_fact.mean.row(k).data();
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
          const double diff = mu[j] - y[j];
          acc += diff * diff;
        }
        fs.recon += acc / n;
      }
    }

    Matrix dec_in_cf = decoder_input(dims, sample.z, noise.cf_treatments);
    Matrix h3 = mlp_forward(model.decoder, dec_in_cf, &sample.dec_trace_cf);
    sample.out_cf = split_gaussian_output(h3, n);
    sample.cf_sample =
        cfg.cf_use_mean
            ? sample.out_cf.mean
            : gaussian_reparameterize(sample.out_cf.mean, sample.out_cf.logvar,
                                      noise.outcome_eps[static_cast<size_t>(s)]);

    const Matrix& cov_input =
        (frozen != nullptr && frozen->covariate_input.has_value())
            ? (*frozen->covariate_input)[static_cast<size_t>(s)]
            : sample.cf_sample;
    for (int k = 0; k < b; ++k) {
      const auto* st = stats[static_cast<size_t>(k)];
      const double* y = cov_input.row(k).data();
      double acc = 0.0;
      for (int j = 0; j < n; ++j) {
        const double diff = y[j] - st->mean[static_cast<size_t>(j)];
        acc += -0.5 * (1.8378770664093454835606594728112 +
                       std::log(st->var[static_cast<size_t>(j)]) +
                       diff * diff / st->var[static_cast<size_t>(j)]);
      }
      fs.cov += acc;
    }

    if (vci_kind) {
      const Matrix& kl_input =
          (frozen != nullptr && frozen->kl_encode_input.has_value())
              ? (*frozen->kl_encode_input)[static_cast<size_t>(s)]
              : sample.cf_sample;
      Matrix enc_in_cf = encoder_input(dims, kl_input, batch.covariates,
                                       noise.cf_treatments);
      Matrix h4 = mlp_forward(model.encoder, enc_in_cf, &sample.enc_trace_cf);
      sample.latent_cf = split_gaussian_output(h4, d);
      for (int k = 0; k < b; ++k) {
        const double* m1 = fs.latent.mean.row(k).data();
        const double* l1 = fs.latent.logvar.row(k).data();
        const double* m2 = sample.latent_cf.mean.row(k).data();
        const double* l2 = sample.latent_cf.logvar.row(k).data();
        for (int j = 0; j < d; ++j) {
          const double dm = m2[j] - m1[j];
          fs.kl += 0.5 * (std::exp(l1[j] - l2[j]) +
                          dm * dm * std::exp(-l2[j]) - 1.0 + l2[j] - l1[j]);
        }
      }
    }
    fs.samples.push_back(std::move(sample));
  }
  const double scale = 1.0 / (static_cast<double>(s_count) * b);
  fs.recon *= scale;
  fs.cov *= scale;
  fs.kl *= scale;
  return fs;
}

// Columns [col, col+width) of `grad` as a standalone matrix.
Matrix slice_columns(const Matrix& grad, int col, int width) {
  Matrix out(grad.rows(), width);
  for (int i = 0; i < grad.rows(); ++i) {
    const double* src = grad.row(i).data() + col;
    double* dst = out.row(i).data();
    for (int j = 0; j < width; ++j) dst[j] = src[j];
  }
  return out;
}

// Gradient of (a_r * recon + a_c * cov + a_k * kl) with respect to all
// encoder and decoder parameters, reusing the recorded forward state.
// Detach semantics: kEncoder zeroes the flow through the counterfactual
// sample inside the second encode; kBoth treats the sample as a constant in
// both the covariate and divergence terms.
ModelGrads run_backward(const VciModel& model, const Batch& batch,
                        const std::vector<const StratifiedOutcomeModel::Stats*>& stats,
                        const ObjectiveConfig& cfg, const ObjectiveNoise& noise,
                        const ForwardState& fs, double a_r, double a_c,
                        double a_k) {
  const ModelDims& dims = model.dims;
  const int b = batch.size();
  const int n = dims.genes;
  const int d = dims.latent_dim;
  const int s_count = cfg.cf_sample_count;
  const bool vci_kind = cfg.objective_kind == ObjectiveKind::kVci;
  const double c = 1.0 / (static_cast<double>(s_count) * b);

  ModelGrads grads = ModelGrads::zeros_like(model);
  Matrix dmu1(b, d);
  Matrix dlv1(b, d);

  // Clamp mask: raw logvar outputs outside (-clamp, clamp) carry no gradient.
  auto lv_mask = [](const MlpTrace& trace, int half, int i, int j) {
    const double raw = trace.output()(i, half + j);
    return raw > -kLogvarClamp && raw < kLogvarClamp;
  };

  const bool cov_flows = a_c != 0.0 && cfg.detach_mode != DetachMode::kBoth;
  const bool kl_flows_into_cf =
      vci_kind && a_k != 0.0 && cfg.detach_mode == DetachMode::kNone;

  for (int s = 0; s < s_count; ++s) {
    const ForwardState::Sample& sample = fs.samples[static_cast<size_t>(s)];
    Matrix dz(b, d);

    if (a_r != 0.0) {
      Matrix dh2(b, 2 * n);
      if (vci_kind) {
        for (int i = 0; i < b; ++i) {
          const double* y = batch.outcomes.row(i).data();
          const double* mu = sample.out_fact.mean.row(i).data();
          const double* lv = sample.out_fact.logvar.row(i).data();
          double* out = dh2.row(i).data();
          for (int j = 0; j < n; ++j) {
            const double inv_var = std::exp(-lv[j]);
            const double diff = y[j] - mu[j];
            out[j] = a_r * c * diff * inv_var;
            const double dlv = a_r * c * (-0.5) * (1.0 - diff * diff * inv_var);
            out[n + j] = lv_mask(sample.dec_trace_fact, n, i, j) ? dlv : 0.0;
          }
        }
      } else {
        for (int i = 0; i < b; ++i) {
          const double* y = batch.outcomes.row(i).data();
          const double* mu = sample.out_fact.mean.row(i).data();
          double* out = dh2.row(i).data();
          for (int j = 0; j < n; ++j) {
            out[j] = a_r * c * 2.0 * (mu[j] - y[j]) / n;
            out[n + j] = 0.0;
          }
        }
      }
      MlpBackwardResult back =
          mlp_backward(model.decoder, sample.dec_trace_fact, dh2);
      grads.decoder.accumulate(back.param_grads);
      add_inplace(dz, slice_columns(back.input_grad, 0, d));
    }

    Matrix dcf(b, n);
    bool dcf_nonzero = false;

    if (cov_flows) {
      for (int i = 0; i < b; ++i) {
        const auto* st = stats[static_cast<size_t>(i)];
        const double* y = sample.cf_sample.row(i).data();
        double* out = dcf.row(i).data();
        for (int j = 0; j < n; ++j) {
          // d loglik / dy = -(y - mean) / var
          out[j] = a_c * c *
                   (-(y[j] - st->mean[static_cast<size_t>(j)]) /
                    st->var[static_cast<size_t>(j)]);
        }
      }
      dcf_nonzero = true;
    }

    if (vci_kind && a_k != 0.0) {
      Matrix dh4(b, 2 * d);
      for (int i = 0; i < b; ++i) {
        const double* m1 = fs.latent.mean.row(i).data();
        const double* l1 = fs.latent.logvar.row(i).data();
        const double* m2 = sample.latent_cf.mean.row(i).data();
        const double* l2 = sample.latent_cf.logvar.row(i).data();
        double* out4 = dh4.row(i).data();
        double* out_mu1 = dmu1.row(i).data();
        double* out_lv1 = dlv1.row(i).data();
        for (int j = 0; j < d; ++j) {
          const double e12 = std::exp(l1[j] - l2[j]);
          const double inv_v2 = std::exp(-l2[j]);
          const double dm = m2[j] - m1[j];
          out_mu1[j] += a_k * c * (m1[j] - m2[j]) * inv_v2;
          out_lv1[j] += a_k * c * 0.5 * (e12 - 1.0);
          out4[j] = a_k * c * dm * inv_v2;
          const double dlv2 = a_k * c * 0.5 * (1.0 - e12 - dm * dm * inv_v2);
          out4[d + j] = lv_mask(sample.enc_trace_cf, d, i, j) ? dlv2 : 0.0;
        }
      }
      MlpBackwardResult back =
          mlp_backward(model.encoder, sample.enc_trace_cf, dh4);
      grads.encoder.accumulate(back.param_grads);
      if (kl_flows_into_cf) {
        add_inplace(dcf, slice_columns(back.input_grad, 0, n));
        dcf_nonzero = true;
      }
    }

    if (dcf_nonzero) {
      Matrix dh3(b, 2 * n);
      for (int i = 0; i < b; ++i) {
        const double* g = dcf.row(i).data();
        double* out = dh3.row(i).data();
        if (cfg.cf_use_mean) {
          for (int j = 0; j < n; ++j) {
            out[j] = g[j];
            out[n + j] = 0.0;
          }
        } else {
          const double* lv = sample.out_cf.logvar.row(i).data();
          const double* eps =
              noise.outcome_eps[static_cast<size_t>(s)].row(i).data();
          for (int j = 0; j < n; ++j) {
            out[j] = g[j];
            const double dlv = g[j] * 0.5 * std::exp(0.5 * lv[j]) * eps[j];
            out[n + j] = lv_mask(sample.dec_trace_cf, n, i, j) ? dlv : 0.0;
          }
        }
      }
      MlpBackwardResult back =
          mlp_backward(model.decoder, sample.dec_trace_cf, dh3);
      grads.decoder.accumulate(back.param_grads);
      add_inplace(dz, slice_columns(back.input_grad, 0, d));
    }

    // Latent reparameterization: z = mu1 + exp(0.5 lv1) * eps
    const Matrix& eps = noise.latent_eps[static_cast<size_t>(s)];
    for (int i = 0; i < b; ++i) {
      const double* gz = dz.row(i).data();
      const double* lv = fs.latent.logvar.row(i).data();
      const double* e = eps.row(i).data();
      double* out_mu = dmu1.row(i).data();
      double* out_lv = dlv1.row(i).data();
      for (int j = 0; j < d; ++j) {
        out_mu[j] += gz[j];
        out_lv[j] += gz[j] * 0.5 * std::exp(0.5 * lv[j]) * e[j];
      }
    }
  }

  Matrix dh1(b, 2 * d);
  for (int i = 0; i < b; ++i) {
    const double* gm = dmu1.row(i).data();
    const double* gl = dlv1.row(i).data();
    double* out = dh1.row(i).data();
    for (int j = 0; j < d; ++j) {
      out[j] = gm[j];
      out[d + j] = lv_mask(fs.enc_trace, d, i, j) ? gl[j] : 0.0;
    }
  }
  MlpBackwardResult back = mlp_backward(model.encoder, fs.enc_trace, dh1);
  grads.encoder.accumulate(back.param_grads);
  return grads;
}

ObjectiveResult evaluate(const VciModel& model, const Batch& batch,
                         const StratifiedOutcomeModel& strat,
                         const ObjectiveConfig& cfg,
                         const ObjectiveNoise& noise) {
  model.validate();
  cfg.validate();
  check_noise(model.dims, batch, cfg, noise);
  const bool vci_kind = cfg.objective_kind == ObjectiveKind::kVci;
  const auto stats = resolve_strata(batch, noise.cf_treatments, strat);
  ForwardState fs = run_forward(model, batch, stats, cfg, noise, nullptr);

  const double a_r = vci_kind ? -1.0 : 1.0;
  const double a_c = vci_kind ? -cfg.omega1 : -cfg.omega_sae;
  const double a_k = vci_kind ? cfg.omega2 : 0.0;

  ObjectiveResult result;
  result.report.recon_term = fs.recon;
  result.report.covariate_term = fs.cov;
  result.report.kl_term = fs.kl;
  result.report.total = a_r * fs.recon + a_c * fs.cov + a_k * fs.kl;
  result.grads = run_backward(model, batch, stats, cfg, noise, fs, a_r, a_c, a_k);
  if (cfg.track_term_grad_norms) {
    result.report.recon_grad_norm = std::sqrt(
        run_backward(model, batch, stats, cfg, noise, fs, 1, 0, 0).squared_norm());
    result.report.covariate_grad_norm = std::sqrt(
        run_backward(model, batch, stats, cfg, noise, fs, 0, 1, 0).squared_norm());
    if (vci_kind) {
      result.report.kl_grad_norm = std::sqrt(
          run_backward(model, batch, stats, cfg, noise, fs, 0, 0, 1).squared_norm());
    }
  }
  for (auto& sample : fs.samples) {
    result.cf_samples.push_back(std::move(sample.cf_sample));
  }
  return result;
}

}  // namespace

ObjectiveResult vci_objective_with_noise(const VciModel& model, const Batch& batch,
                                         const StratifiedOutcomeModel& strat,
                                         const ObjectiveConfig& cfg,
                                         const ObjectiveNoise& noise) {
  if (cfg.objective_kind != ObjectiveKind::kVci) {
    throw ConfigError("vci_objective requires objective_kind = vci");
  }
  return evaluate(model, batch, strat, cfg, noise);
}

ObjectiveResult vci_objective(const VciModel& model, const Batch& batch,
                              const StratifiedOutcomeModel& strat,
                              const ObjectiveConfig& cfg, RngStream& stream) {
  ObjectiveNoise noise = draw_objective_noise(model.dims, batch, cfg, stream);
  return vci_objective_with_noise(model, batch, strat, cfg, noise);
}

ObjectiveResult sae_loss_with_noise(const VciModel& model, const Batch& batch,
                                    const StratifiedOutcomeModel& strat,
                                    const ObjectiveConfig& cfg,
                                    const ObjectiveNoise& noise) {
  if (cfg.objective_kind != ObjectiveKind::kSae) {
    throw ConfigError("sae_loss requires objective_kind = sae");
  }
  return evaluate(model, batch, strat, cfg, noise);
}

ObjectiveResult sae_loss(const VciModel& model, const Batch& batch,
                         const StratifiedOutcomeModel& strat,
                         const ObjectiveConfig& cfg, RngStream& stream) {
  ObjectiveNoise noise = draw_objective_noise(model.dims, batch, cfg, stream);
  return sae_loss_with_noise(model, batch, strat, cfg, noise);
}

double objective_value(const VciModel& model, const Batch& batch,
                       const StratifiedOutcomeModel& strat,
                       const ObjectiveConfig& cfg, const ObjectiveNoise& noise,
                       const FrozenCounterfactuals* frozen) {
  model.validate();
  cfg.validate();
  check_noise(model.dims, batch, cfg, noise);
  const bool vci_kind = cfg.objective_kind == ObjectiveKind::kVci;
  const auto stats = resolve_strata(batch, noise.cf_treatments, strat);
  ForwardState fs = run_forward(model, batch, stats, cfg, noise, frozen);
  const double a_r = vci_kind ? -1.0 : 1.0;
  const double a_c = vci_kind ? -cfg.omega1 : -cfg.omega_sae;
  const double a_k = vci_kind ? cfg.omega2 : 0.0;
  return a_r * fs.recon + a_c * fs.cov + a_k * fs.kl;
}

}  // namespace vci
