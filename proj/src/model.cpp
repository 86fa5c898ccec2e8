#include "vci/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vci/error.hpp"

namespace vci {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2*pi)

std::string tuple_string(std::span<const int> t) {
  std::string s = "(";
  for (size_t i = 0; i < t.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(t[i]);
  }
  s += ")";
  return s;
}

void check_codes(const ModelDims& dims, std::span<const int> covariates,
                 std::span<const int> treatments, int batch) {
  const size_t m = dims.covariate_levels.size();
  if (covariates.size() != static_cast<size_t>(batch) * m) {
    throw ShapeError("covariate codes do not match batch x m");
  }
  if (treatments.size() != static_cast<size_t>(batch)) {
    throw ShapeError("treatment codes do not match batch size");
  }
  for (int i = 0; i < batch; ++i) {
    const int t = treatments[static_cast<size_t>(i)];
    if (t < 0 || t >= dims.treatment_levels) {
      throw DomainError("unknown treatment level " + std::to_string(t));
    }
    for (size_t j = 0; j < m; ++j) {
      const int c = covariates[static_cast<size_t>(i) * m + j];
      if (c < 0 || c >= dims.covariate_levels[j]) {
        throw DomainError("unknown covariate level " + std::to_string(c) +
                          " in covariate " + std::to_string(j));
      }
    }
  }
}

}  // namespace

GaussianBatch split_gaussian_output(const Matrix& raw, int half) {
  if (raw.cols() != 2 * half) {
    throw ShapeError("split_gaussian_output: raw width " +
                     std::to_string(raw.cols()) + " != 2 * " +
                     std::to_string(half));
  }
  GaussianBatch out;
  out.mean = Matrix(raw.rows(), half);
  out.logvar = Matrix(raw.rows(), half);
  for (int i = 0; i < raw.rows(); ++i) {
    const double* src = raw.row(i).data();
    double* mu = out.mean.row(i).data();
    double* lv = out.logvar.row(i).data();
    for (int j = 0; j < half; ++j) {
      mu[j] = src[j];
      lv[j] = std::clamp(src[half + j], -kLogvarClamp, kLogvarClamp);
    }
  }
  return out;
}

int ModelDims::covariate_onehot_width() const {
  return std::accumulate(covariate_levels.begin(), covariate_levels.end(), 0);
}

int ModelDims::encoder_input_width() const {
  return genes + covariate_onehot_width() + treatment_levels;
}

int ModelDims::decoder_input_width() const {
  return latent_dim + treatment_levels;
}

void ModelDims::validate() const {
  if (genes < 1) throw ConfigError("model dims: genes must be >= 1");
  if (latent_dim < 1) throw ConfigError("model dims: latent_dim must be >= 1");
  if (treatment_levels < 2) {
    throw ConfigError("model dims: treatment_levels must be >= 2");
  }
  for (int l : covariate_levels) {
    if (l < 1) throw ConfigError("model dims: covariate with no levels");
  }
}

void VciModel::validate() const {
  dims.validate();
  encoder.validate();
  decoder.validate();
  if (encoder.input_width() != dims.encoder_input_width() ||
      encoder.output_width() != 2 * dims.latent_dim) {
    throw ShapeError("encoder widths inconsistent with model dims");
  }
  if (decoder.input_width() != dims.decoder_input_width() ||
      decoder.output_width() != 2 * dims.genes) {
    throw ShapeError("decoder widths inconsistent with model dims");
  }
}

VciModel make_vci_model(const ModelDims& dims,
                        std::span<const int> hidden_widths, RngStream& stream) {
  dims.validate();
  VciModel model;
  model.dims = dims;
  RngStream enc_stream = stream.child("encoder");
  RngStream dec_stream = stream.child("decoder");
  model.encoder = make_mlp(dims.encoder_input_width(), hidden_widths,
                           2 * dims.latent_dim, enc_stream);
  model.decoder = make_mlp(dims.decoder_input_width(), hidden_widths,
                           2 * dims.genes, dec_stream);
  model.validate();
  return model;
}

Matrix encoder_input(const ModelDims& dims, const Matrix& outcomes,
                     std::span<const int> covariates,
                     std::span<const int> treatments) {
  const int batch = outcomes.rows();
  if (outcomes.cols() != dims.genes) {
    throw ShapeError("encoder input: outcome width " +
                     std::to_string(outcomes.cols()) + " != genes " +
                     std::to_string(dims.genes));
  }
  check_codes(dims, covariates, treatments, batch);
  const size_t m = dims.covariate_levels.size();
  Matrix input(batch, dims.encoder_input_width());
  for (int i = 0; i < batch; ++i) {
    double* row = input.row(i).data();
    const double* y = outcomes.row(i).data();
    std::copy(y, y + dims.genes, row);
    int offset = dims.genes;
    for (size_t j = 0; j < m; ++j) {
      row[offset + covariates[static_cast<size_t>(i) * m + j]] = 1.0;
      offset += dims.covariate_levels[j];
    }
    row[offset + treatments[static_cast<size_t>(i)]] = 1.0;
  }
  return input;
}

Matrix decoder_input(const ModelDims& dims, const Matrix& latents,
                     std::span<const int> treatments) {
  const int batch = latents.rows();
  if (latents.cols() != dims.latent_dim) {
    throw ShapeError("decoder input: latent width " +
                     std::to_string(latents.cols()) + " != latent_dim " +
                     std::to_string(dims.latent_dim));
  }
  if (treatments.size() != static_cast<size_t>(batch)) {
    throw ShapeError("decoder input: treatment codes do not match batch");
  }
  Matrix input(batch, dims.decoder_input_width());
  for (int i = 0; i < batch; ++i) {
    const int t = treatments[static_cast<size_t>(i)];
    if (t < 0 || t >= dims.treatment_levels) {
      throw DomainError("unknown treatment level " + std::to_string(t));
    }
    double* row = input.row(i).data();
    const double* z = latents.row(i).data();
    std::copy(z, z + dims.latent_dim, row);
    row[dims.latent_dim + t] = 1.0;
  }
  return input;
}

GaussianBatch encode(const VciModel& model, const Matrix& outcomes,
                     std::span<const int> covariates,
                     std::span<const int> treatments) {
  Matrix input = encoder_input(model.dims, outcomes, covariates, treatments);
  Matrix raw = mlp_forward(model.encoder, input);
  return split_gaussian_output(raw, model.dims.latent_dim);
}

GaussianBatch encode(const VciModel& model, const Batch& batch) {
  return encode(model, batch.outcomes, batch.covariates, batch.treatments);
}

GaussianBatch decode(const VciModel& model, const Matrix& latents,
                     std::span<const int> treatments) {
  Matrix input = decoder_input(model.dims, latents, treatments);
  Matrix raw = mlp_forward(model.decoder, input);
  return split_gaussian_output(raw, model.dims.genes);
}

GaussianBatch decode(const VciModel& model, const Matrix& latents, int level) {
  std::vector<int> treatments(static_cast<size_t>(latents.rows()), level);
  return decode(model, latents, treatments);
}

double gaussian_loglik(std::span<const double> y, std::span<const double> mean,
                       std::span<const double> logvar) {
  if (y.size() != mean.size() || y.size() != logvar.size()) {
    throw ShapeError("gaussian_loglik: length mismatch");
  }
  double acc = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    const double d = y[j] - mean[j];
    acc += -0.5 * (kLog2Pi + logvar[j] + d * d * std::exp(-logvar[j]));
  }
  return acc;
}

StratifiedOutcomeModel StratifiedOutcomeModel::fit(const Dataset& dataset,
                                                   std::span<const int> rows,
                                                   double variance_floor) {
  if (rows.empty()) throw DomainError("fit_stratified: no rows");
  if (!(variance_floor > 0.0)) {
    throw ConfigError("fit_stratified: variance floor must be > 0");
  }
  StratifiedOutcomeModel model;
  model.variance_floor_ = variance_floor;
  model.genes_ = dataset.genes();
  const int n = dataset.genes();

  struct Accum {
    std::vector<double> sum, sumsq;
    long count = 0;
  };
  std::map<std::vector<int>, Accum> strata;
  std::map<int, Accum> marginals;
  auto feed = [n](Accum& acc, std::span<const double> y) {
    if (acc.count == 0) {
      acc.sum.assign(static_cast<size_t>(n), 0.0);
      acc.sumsq.assign(static_cast<size_t>(n), 0.0);
    }
    for (int j = 0; j < n; ++j) {
      acc.sum[static_cast<size_t>(j)] += y[static_cast<size_t>(j)];
      acc.sumsq[static_cast<size_t>(j)] +=
          y[static_cast<size_t>(j)] * y[static_cast<size_t>(j)];
    }
    acc.count += 1;
  };
  for (int r : rows) {
    if (r < 0 || r >= dataset.units()) {
      throw DomainError("fit_stratified: row index out of range");
    }
    std::span<const int> cov = dataset.covariate_row(r);
    std::vector<int> key(cov.begin(), cov.end());
    key.push_back(dataset.treatments[static_cast<size_t>(r)]);
    std::span<const double> y = dataset.outcomes.row(r);
    feed(strata[key], y);
    feed(marginals[dataset.treatments[static_cast<size_t>(r)]], y);
  }
  auto finalize = [&](const Accum& acc) {
    Stats s;
    s.count = acc.count;
    s.mean.resize(static_cast<size_t>(n));
    s.var.resize(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
      const double mu = acc.sum[static_cast<size_t>(j)] / acc.count;
      // population variance, floored
      double var = acc.sumsq[static_cast<size_t>(j)] / acc.count - mu * mu;
      if (var < variance_floor) var = variance_floor;
      s.mean[static_cast<size_t>(j)] = mu;
      s.var[static_cast<size_t>(j)] = var;
    }
    return s;
  };
  for (const auto& [key, acc] : strata) model.strata_[key] = finalize(acc);
  for (const auto& [t, acc] : marginals) model.fallback_[t] = finalize(acc);
  return model;
}

const StratifiedOutcomeModel::Stats& StratifiedOutcomeModel::lookup(
    std::span<const int> cov_tuple, int treatment) const {
  std::vector<int> key(cov_tuple.begin(), cov_tuple.end());
  key.push_back(treatment);
  auto it = strata_.find(key);
  if (it != strata_.end() && it->second.count >= 2) return it->second;
  auto fb = fallback_.find(treatment);
  if (fb == fallback_.end()) {
    throw DomainError("missing stratum: covariates " + tuple_string(cov_tuple) +
                      ", treatment " + std::to_string(treatment) +
                      " and no treatment-marginal fallback");
  }
  return fb->second;
}

double StratifiedOutcomeModel::loglik(std::span<const double> y,
                                      std::span<const int> cov_tuple,
                                      int treatment) const {
  const Stats& s = lookup(cov_tuple, treatment);
  if (y.size() != s.mean.size()) {
    throw ShapeError("stratified_loglik: outcome length mismatch");
  }
  double acc = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    const double d = y[j] - s.mean[j];
    acc += -0.5 * (kLog2Pi + std::log(s.var[j]) + d * d / s.var[j]);
  }
  return acc;
}

void StratifiedOutcomeModel::loglik_grad(std::span<const double> y,
                                         std::span<const int> cov_tuple,
                                         int treatment,
                                         std::span<double> grad_out) const {
  const Stats& s = lookup(cov_tuple, treatment);
  if (y.size() != s.mean.size() || grad_out.size() != y.size()) {
    throw ShapeError("stratified_loglik gradient: length mismatch");
  }
  for (size_t j = 0; j < y.size(); ++j) {
    grad_out[j] = -(y[j] - s.mean[j]) / s.var[j];
  }
}

StratifiedOutcomeModel StratifiedOutcomeModel::from_parts(
    std::map<std::vector<int>, Stats> strata, std::map<int, Stats> fallback,
    double variance_floor, int genes) {
  StratifiedOutcomeModel model;
  model.strata_ = std::move(strata);
  model.fallback_ = std::move(fallback);
  model.variance_floor_ = variance_floor;
  model.genes_ = genes;
  return model;
}

std::vector<double> clip_and_renormalize(std::vector<double> probs,
                                         double clip_floor) {
  const size_t n = probs.size();
  if (n == 0) throw DomainError("clip_and_renormalize: empty vector");
  if (clip_floor * static_cast<double>(n) > 1.0) {
    throw ConfigError("clip floor too large for level count");
  }
  // Waterfill: pin floored entries, renormalize the rest into the remaining
  // mass, repeat until nothing new dips below the floor.
  std::vector<bool> pinned(n, false);
  for (int pass = 0; pass < static_cast<int>(n) + 1; ++pass) {
    double free_mass = 1.0;
    double free_sum = 0.0;
    size_t free_count = 0;
    for (size_t i = 0; i < n; ++i) {
      if (pinned[i]) {
        free_mass -= clip_floor;
      } else {
        free_sum += probs[i];
        ++free_count;
      }
    }
    if (free_count == 0) break;
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      if (pinned[i]) continue;
      const double scaled =
          free_sum > 0.0 ? probs[i] * free_mass / free_sum
                         : free_mass / static_cast<double>(free_count);
      if (scaled < clip_floor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) {
      for (size_t i = 0; i < n; ++i) {
        if (pinned[i]) {
          probs[i] = clip_floor;
        } else {
          probs[i] = free_sum > 0.0
                         ? probs[i] * free_mass / free_sum
                         : free_mass / static_cast<double>(free_count);
        }
      }
      return probs;
    }
  }
  // All entries pinned: uniform at the floor (only possible when
  // clip_floor * n == 1).
  std::fill(probs.begin(), probs.end(), clip_floor);
  return probs;
}

PropensityTable PropensityTable::fit(const Dataset& dataset,
                                     std::span<const int> rows,
                                     double clip_floor) {
  if (rows.empty()) throw DomainError("fit_propensity: no rows");
  PropensityTable table;
  table.clip_floor_ = clip_floor;
  table.treatment_levels_ = dataset.treatment_levels;
  const int levels = dataset.treatment_levels;
  std::map<std::vector<int>, std::vector<long>> counts;
  for (int r : rows) {
    std::span<const int> cov = dataset.covariate_row(r);
    std::vector<int> key(cov.begin(), cov.end());
    auto& c = counts[key];
    if (c.empty()) c.assign(static_cast<size_t>(levels), 0);
    c[static_cast<size_t>(dataset.treatments[static_cast<size_t>(r)])] += 1;
  }
  for (const auto& [key, c] : counts) {
    std::vector<double> probs(static_cast<size_t>(levels));
    long total = 0;
    for (long v : c) total += v;
    for (int a = 0; a < levels; ++a) {
      // add-one smoothing
      probs[static_cast<size_t>(a)] =
          static_cast<double>(c[static_cast<size_t>(a)] + 1) /
          static_cast<double>(total + levels);
    }
    table.table_[key] = clip_and_renormalize(std::move(probs), clip_floor);
  }
  return table;
}

PropensityTable PropensityTable::from_probabilities(
    std::map<std::vector<int>, std::vector<double>> raw, double clip_floor) {
  PropensityTable table;
  table.clip_floor_ = clip_floor;
  for (auto& [key, probs] : raw) {
    if (probs.empty()) throw DomainError("propensity row is empty");
    if (table.treatment_levels_ == 0) {
      table.treatment_levels_ = static_cast<int>(probs.size());
    } else if (table.treatment_levels_ != static_cast<int>(probs.size())) {
      throw ShapeError("propensity rows disagree on level count");
    }
    table.table_[key] = clip_and_renormalize(std::move(probs), clip_floor);
  }
  return table;
}

PropensityTable PropensityTable::from_parts(
    std::map<std::vector<int>, std::vector<double>> table, double clip_floor) {
  PropensityTable out;
  out.clip_floor_ = clip_floor;
  for (const auto& [key, probs] : table) {
    if (probs.empty()) throw DomainError("propensity row is empty");
    if (out.treatment_levels_ == 0) {
      out.treatment_levels_ = static_cast<int>(probs.size());
    } else if (out.treatment_levels_ != static_cast<int>(probs.size())) {
      throw ShapeError("propensity rows disagree on level count");
    }
  }
  out.table_ = std::move(table);
  return out;
}

const std::vector<double>& PropensityTable::probs(
    std::span<const int> cov_tuple) const {
  std::vector<int> key(cov_tuple.begin(), cov_tuple.end());
  auto it = table_.find(key);
  if (it == table_.end()) {
    throw DomainError("propensity table has no entry for covariates " +
                      tuple_string(cov_tuple));
  }
  return it->second;
}

double PropensityTable::prob(std::span<const int> cov_tuple,
                             int treatment) const {
  const std::vector<double>& row = probs(cov_tuple);
  if (treatment < 0 || treatment >= static_cast<int>(row.size())) {
    throw DomainError("propensity: unknown treatment level " +
                      std::to_string(treatment));
  }
  return row[static_cast<size_t>(treatment)];
}

}  // namespace vci
