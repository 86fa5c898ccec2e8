#include "vci/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vci/error.hpp"

namespace vci {

void SimConfig::validate() const {
  if (units < 1) throw ConfigError("sim: units must be >= 1");
  if (covariate_levels.empty()) {
    throw ConfigError("sim: at least one covariate required");
  }
  for (int l : covariate_levels) {
    if (l < 1) throw ConfigError("sim: covariate levels must be >= 1");
  }
  if (treatment_levels < 2) {
    throw ConfigError("sim: treatment levels must be >= 2");
  }
  if (latent_dim < 1) throw ConfigError("sim: latent dim must be >= 1");
  if (genes < 1) throw ConfigError("sim: genes must be >= 1");
  if (noise_z < 0.0 || noise_y < 0.0) {
    throw ConfigError("sim: noise scales must be >= 0");
  }
}

Simulator::Simulator(SimConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  cov_width_ = std::accumulate(cfg_.covariate_levels.begin(),
                               cfg_.covariate_levels.end(), 0);
  RngStream mix = RngStream::from_seed(cfg_.mixing_seed).child("mixing");
  RngStream a_stream = mix.child("covariate-mixing");
  RngStream b_stream = mix.child("latent-loading");
  RngStream c_stream = mix.child("treatment-shift");
  RngStream g_stream = mix.child("assignment-score");

  covariate_mixing_ = Matrix(cfg_.latent_dim, cov_width_);
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(cov_width_));
  for (double& v : covariate_mixing_.data()) v = a_scale * a_stream.normal();

  latent_loading_ = Matrix(cfg_.genes, cfg_.latent_dim);
  const double b_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim));
  for (double& v : latent_loading_.data()) v = b_scale * b_stream.normal();

  treatment_shift_ = Matrix(cfg_.genes, cfg_.treatment_levels);
  for (double& v : treatment_shift_.data()) v = c_stream.normal();

  assignment_score_ = Matrix(cfg_.treatment_levels, cov_width_);
  for (double& v : assignment_score_.data()) v = g_stream.normal();
}

std::vector<double> Simulator::onehot_covariates(
    std::span<const int> cov_tuple) const {
  if (cov_tuple.size() != cfg_.covariate_levels.size()) {
    throw ShapeError("sim: covariate tuple arity mismatch");
  }
  std::vector<double> onehot(static_cast<size_t>(cov_width_), 0.0);
  int offset = 0;
  for (size_t j = 0; j < cov_tuple.size(); ++j) {
    const int code = cov_tuple[j];
    if (code < 0 || code >= cfg_.covariate_levels[j]) {
      throw DomainError("sim: covariate code " + std::to_string(code) +
                        " outside its level range");
    }
    onehot[static_cast<size_t>(offset + code)] = 1.0;
    offset += cfg_.covariate_levels[j];
  }
  return onehot;
}

std::vector<double> Simulator::propensity(std::span<const int> cov_tuple) const {
  std::vector<double> onehot = onehot_covariates(cov_tuple);
  std::vector<double> scores(static_cast<size_t>(cfg_.treatment_levels), 0.0);
  for (int a = 0; a < cfg_.treatment_levels; ++a) {
    double acc = 0.0;
    const double* row = assignment_score_.row(a).data();
    for (int j = 0; j < cov_width_; ++j) acc += row[j] * onehot[static_cast<size_t>(j)];
    scores[static_cast<size_t>(a)] = cfg_.confounding * acc;
  }
  const double peak = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double& s : scores) {
    s = std::exp(s - peak);
    sum += s;
  }
  for (double& s : scores) s /= sum;
  return scores;
}

std::vector<double> Simulator::conditional_mean(std::span<const double> z,
                                                int level) const {
  if (static_cast<int>(z.size()) != cfg_.latent_dim) {
    throw ShapeError("sim: latent vector has wrong length");
  }
  if (level < 0 || level >= cfg_.treatment_levels) {
    throw DomainError("sim: treatment level " + std::to_string(level) +
                      " out of range");
  }
  std::vector<double> mean(static_cast<size_t>(cfg_.genes), 0.0);
  for (int g = 0; g < cfg_.genes; ++g) {
    double acc = 0.0;
    const double* brow = latent_loading_.row(g).data();
    for (int j = 0; j < cfg_.latent_dim; ++j) acc += brow[j] * z[static_cast<size_t>(j)];
    acc += cfg_.treatment_effect * treatment_shift_(g, level);
    mean[static_cast<size_t>(g)] =
        cfg_.link == SimConfig::OutcomeLink::kTanh ? std::tanh(acc) : acc;
  }
  return mean;
}

std::vector<double> Simulator::analytic_marginal(int level) const {
  if (cfg_.link != SimConfig::OutcomeLink::kLinear) {
    throw ConfigError("analytic_marginal is closed-form only for the linear link");
  }
  if (level < 0 || level >= cfg_.treatment_levels) {
    throw DomainError("sim: treatment level out of range");
  }
  // E[onehot(X)] under uniform covariate draws, E[eps] = 0:
  //   E[Y'(a)] = B * (covariate_effect * A * pi) + treatment_effect * C[:, a]
  std::vector<double> pi(static_cast<size_t>(cov_width_), 0.0);
  int offset = 0;
  for (int levels : cfg_.covariate_levels) {
    for (int c = 0; c < levels; ++c) {
      pi[static_cast<size_t>(offset + c)] = 1.0 / levels;
    }
    offset += levels;
  }
  std::vector<double> ez(static_cast<size_t>(cfg_.latent_dim), 0.0);
  for (int i = 0; i < cfg_.latent_dim; ++i) {
    double acc = 0.0;
    const double* arow = covariate_mixing_.row(i).data();
    for (int j = 0; j < cov_width_; ++j) acc += arow[j] * pi[static_cast<size_t>(j)];
    ez[static_cast<size_t>(i)] = cfg_.covariate_effect * acc;
  }
  return conditional_mean(ez, level);
}

SimDataset Simulator::simulate(uint64_t seed) const {
  SimDataset sim;
  const int n_units = cfg_.units;
  const int genes = cfg_.genes;
  const int d = cfg_.latent_dim;
  const int levels = cfg_.treatment_levels;
  const size_t m = cfg_.covariate_levels.size();

  sim.data.covariate_levels = cfg_.covariate_levels;
  sim.data.treatment_levels = levels;
  sim.data.outcomes = Matrix(n_units, genes);
  sim.data.treatments.resize(static_cast<size_t>(n_units));
  sim.data.covariates.resize(static_cast<size_t>(n_units) * m);
  sim.latents = Matrix(n_units, d);
  if (cfg_.materialize_counterfactuals) {
    sim.counterfactuals.assign(static_cast<size_t>(levels),
                               Matrix(n_units, genes));
  }

  RngStream root = RngStream::from_seed(seed).child("simulate");
  std::vector<double> u_y(static_cast<size_t>(genes));
  for (int u = 0; u < n_units; ++u) {
    // per-unit stream so generation order is irrelevant
    RngStream us = root.child(static_cast<uint64_t>(u));
    std::vector<int> cov(m);
    for (size_t j = 0; j < m; ++j) {
      cov[j] = static_cast<int>(us.uniform_int(
          static_cast<uint64_t>(cfg_.covariate_levels[j])));
      sim.data.covariates[static_cast<size_t>(u) * m + j] = cov[j];
    }
    std::vector<double> onehot = onehot_covariates(cov);
    double* z = sim.latents.row(u).data();
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      const double* arow = covariate_mixing_.row(i).data();
      for (int j = 0; j < cov_width_; ++j) acc += arow[j] * onehot[static_cast<size_t>(j)];
      z[i] = cfg_.covariate_effect * acc + cfg_.noise_z * us.normal();
    }
    std::vector<double> probs = propensity(cov);
    const double draw = us.uniform01();
    int t = levels - 1;
    double cum = 0.0;
    for (int a = 0; a < levels; ++a) {
      cum += probs[static_cast<size_t>(a)];
      if (draw < cum) {
        t = a;
        break;
      }
    }
    sim.data.treatments[static_cast<size_t>(u)] = t;
    for (int g = 0; g < genes; ++g) u_y[static_cast<size_t>(g)] = cfg_.noise_y * us.normal();

    std::span<const double> zs(z, static_cast<size_t>(d));
    for (int a = 0; a < levels; ++a) {
      if (!cfg_.materialize_counterfactuals && a != t) continue;
      std::vector<double> mean = conditional_mean(zs, a);
      for (int g = 0; g < genes; ++g) mean[static_cast<size_t>(g)] += u_y[static_cast<size_t>(g)];
      if (a == t) {
        double* yrow = sim.data.outcomes.row(u).data();
        std::copy(mean.begin(), mean.end(), yrow);
      }
      if (cfg_.materialize_counterfactuals) {
        double* cfrow = sim.counterfactuals[static_cast<size_t>(a)].row(u).data();
        std::copy(mean.begin(), mean.end(), cfrow);
      }
    }
  }
  sim.data.validate();
  return sim;
}

SimDataset simulate(const SimConfig& cfg, uint64_t seed) {
  return Simulator(cfg).simulate(seed);
}

std::vector<double> true_marginal(const SimDataset& sim, int level) {
  if (level < 0 ||
      level >= static_cast<int>(sim.counterfactuals.size())) {
    throw DomainError("true_marginal: treatment level " +
                      std::to_string(level) +
                      " has no materialized counterfactual truth");
  }
  return column_means(sim.counterfactuals[static_cast<size_t>(level)]);
}

}  // namespace vci
