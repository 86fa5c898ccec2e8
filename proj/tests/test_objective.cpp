#include "vci/objective.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "vci/error.hpp"

using namespace vci;
using namespace vci::testutil;

namespace {

struct Fixture {
  VciModel model;
  Dataset dataset;
  Batch batch;
  StratifiedOutcomeModel strat;

  // 8-gene, 4-latent, 3-treatment toy setup with every stratum populated.
  explicit Fixture(uint64_t seed)
      : model(make_toy_model(8, 2, 3, 4, 6, seed)) {
    RngStream data_stream = RngStream::from_seed(seed).child("data");
    std::vector<std::vector<double>> rows;
    for (int c = 0; c < 2; ++c) {
      for (int t = 0; t < 3; ++t) {
        for (int rep = 0; rep < 3; ++rep) {
          std::vector<double> row{static_cast<double>(c),
                                  static_cast<double>(t)};
          for (int g = 0; g < 8; ++g) row.push_back(data_stream.normal());
          rows.push_back(std::move(row));
        }
      }
    }
    dataset = make_dataset(2, 3, 8, rows);
    batch = gather(dataset, std::vector<int>{0, 4, 8, 11, 15, 17});
    strat = StratifiedOutcomeModel::fit(dataset, dataset.all_rows());
  }
};

// Collects pointers to every parameter of both networks plus the matching
// analytic gradient entries.
void collect(VciModel& model, const ModelGrads& grads,
             std::vector<double*>& values, std::vector<double>& analytic) {
  auto enc_vals = parameter_pointers(model.encoder);
  auto dec_vals = parameter_pointers(model.decoder);
  values = enc_vals;
  values.insert(values.end(), dec_vals.begin(), dec_vals.end());
  analytic = flatten_grads(grads.encoder);
  auto dec_grads = flatten_grads(grads.decoder);
  analytic.insert(analytic.end(), dec_grads.begin(), dec_grads.end());
}

// Builds the surrogate that a detach mode's gradient is exact for: the
// counterfactual sample frozen at its base-parameter value wherever the mode
// declares it constant.
FrozenCounterfactuals frozen_for_mode(DetachMode mode,
                                      const std::vector<Matrix>& base_samples) {
  FrozenCounterfactuals frozen;
  if (mode == DetachMode::kEncoder) {
    frozen.kl_encode_input = base_samples;
  } else if (mode == DetachMode::kBoth) {
    frozen.kl_encode_input = base_samples;
    frozen.covariate_input = base_samples;
  }
  return frozen;
}

double check_vci_grads(uint64_t seed, DetachMode mode, int samples = 1) {
  Fixture fx(seed);
  ObjectiveConfig cfg;
  cfg.omega1 = 0.7;
  cfg.omega2 = 0.4;
  cfg.detach_mode = mode;
  cfg.cf_sample_count = samples;
  RngStream noise_stream = RngStream::from_seed(seed).child("noise");
  ObjectiveNoise noise =
      draw_objective_noise(fx.model.dims, fx.batch, cfg, noise_stream);
  ObjectiveResult result =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, cfg, noise);
  FrozenCounterfactuals frozen = frozen_for_mode(mode, result.cf_samples);
  const FrozenCounterfactuals* frozen_ptr =
      mode == DetachMode::kNone ? nullptr : &frozen;

  std::vector<double*> values;
  std::vector<double> analytic;
  collect(fx.model, result.grads, values, analytic);
  auto loss = [&]() {
    return objective_value(fx.model, fx.batch, fx.strat, cfg, noise, frozen_ptr);
  };
  return finite_diff_check(loss, values, analytic, 1e-5);
}

double check_sae_grads(uint64_t seed, DetachMode mode) {
  Fixture fx(seed);
  ObjectiveConfig cfg;
  cfg.objective_kind = ObjectiveKind::kSae;
  cfg.omega_sae = 0.6;
  cfg.detach_mode = mode;
  RngStream noise_stream = RngStream::from_seed(seed).child("noise");
  ObjectiveNoise noise =
      draw_objective_noise(fx.model.dims, fx.batch, cfg, noise_stream);
  ObjectiveResult result =
      sae_loss_with_noise(fx.model, fx.batch, fx.strat, cfg, noise);
  FrozenCounterfactuals frozen = frozen_for_mode(mode, result.cf_samples);
  const FrozenCounterfactuals* frozen_ptr =
      mode == DetachMode::kNone ? nullptr : &frozen;
  std::vector<double*> values;
  std::vector<double> analytic;
  collect(fx.model, result.grads, values, analytic);
  auto loss = [&]() {
    return objective_value(fx.model, fx.batch, fx.strat, cfg, noise, frozen_ptr);
  };
  return finite_diff_check(loss, values, analytic, 1e-5);
}

}  // namespace

TEST_CASE("kl_diag_gaussians closed-form values") {
  LatentGaussian a{{0.0}, {0.0}};
  CHECK(kl_diag_gaussians(a, a) == 0.0);

  LatentGaussian b{{1.0}, {0.0}};
  CHECK(kl_diag_gaussians(a, b) == doctest::Approx(0.5).epsilon(1e-12));

  LatentGaussian v1{{0.3}, {0.0}};
  LatentGaussian v4{{0.3}, {std::log(4.0)}};
  const double expect = 0.5 * (0.25 + std::log(4.0) - 1.0);
  CHECK(kl_diag_gaussians(v1, v4) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.3181).epsilon(1e-3));

  LatentGaussian wrong{{0.0, 0.0}, {0.0, 0.0}};
  CHECK_THROWS_AS(kl_diag_gaussians(a, wrong), ShapeError);
}

TEST_CASE("kl_diag_gaussians is nonnegative, zero only at equality") {
  RngStream s = RngStream::from_seed(2024);
  for (int trial = 0; trial < 200; ++trial) {
    LatentGaussian q1, q2;
    for (int j = 0; j < 4; ++j) {
      q1.mean.push_back(2.0 * s.normal());
      q1.logvar.push_back(s.normal());
      q2.mean.push_back(2.0 * s.normal());
      q2.logvar.push_back(s.normal());
    }
    const double kl = kl_diag_gaussians(q1, q2);
    CHECK(kl >= 0.0);
    CHECK(kl_diag_gaussians(q1, q1) <= 1e-12);
  }
}

TEST_CASE("sample_counterfactual_treatments: two levels flip, none equal") {
  RngStream s = RngStream::from_seed(5);
  std::vector<int> t{0, 1, 1, 0};
  auto cf = sample_counterfactual_treatments(t, 2, s);
  CHECK(cf == std::vector<int>{1, 0, 0, 1});

  std::vector<int> many(1000);
  RngStream ls = RngStream::from_seed(6);
  for (int& v : many) v = static_cast<int>(ls.uniform_int(5));
  auto cf5 = sample_counterfactual_treatments(many, 5, ls);
  for (size_t i = 0; i < many.size(); ++i) CHECK(cf5[i] != many[i]);

  CHECK_THROWS_AS(sample_counterfactual_treatments(t, 1, s), ConfigError);
}

TEST_CASE("sample_counterfactual_treatments: uniform over remaining levels") {
  RngStream s = RngStream::from_seed(7);
  const int levels = 4;
  const int n = 100000;
  std::vector<int> t(n, 1);  // all units treated with level 1
  auto cf = sample_counterfactual_treatments(t, levels, s);
  std::vector<int> counts(levels, 0);
  for (int v : cf) counts[static_cast<size_t>(v)]++;
  CHECK(counts[1] == 0);
  const double expected = n / 3.0;
  const double sigma = std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
  for (int a : {0, 2, 3}) {
    CHECK(std::abs(counts[static_cast<size_t>(a)] - expected) < 4.0 * sigma);
  }
}

TEST_CASE("vci objective: zero weights reduce the total to -recon") {
  Fixture fx(11);
  ObjectiveConfig cfg;
  cfg.omega1 = 0.0;
  cfg.omega2 = 0.0;
  RngStream s = RngStream::from_seed(11);
  ObjectiveResult result = vci_objective(fx.model, fx.batch, fx.strat, cfg, s);
  CHECK(result.report.total == -result.report.recon_term);
}

TEST_CASE("vci objective: decomposition identity holds to 1e-12") {
  Fixture fx(12);
  ObjectiveConfig cfg;
  cfg.omega1 = 1.3;
  cfg.omega2 = 0.2;
  RngStream s = RngStream::from_seed(12);
  ObjectiveResult r = vci_objective(fx.model, fx.batch, fx.strat, cfg, s);
  const double reconstructed = -r.report.recon_term -
                               cfg.omega1 * r.report.covariate_term +
                               cfg.omega2 * r.report.kl_term;
  CHECK(r.report.total == doctest::Approx(reconstructed).epsilon(1e-12));
}

TEST_CASE("vci objective is deterministic with frozen noise") {
  Fixture fx(13);
  ObjectiveConfig cfg;
  RngStream s = RngStream::from_seed(13);
  ObjectiveNoise noise = draw_objective_noise(fx.model.dims, fx.batch, cfg, s);
  ObjectiveResult a =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, cfg, noise);
  ObjectiveResult b =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, cfg, noise);
  CHECK(a.report.total == b.report.total);
  CHECK(a.grads.encoder.squared_norm() == b.grads.encoder.squared_norm());
  CHECK(a.cf_samples[0] == b.cf_samples[0]);
}

TEST_CASE("detach=both: the covariate and KL paths stop feeding the decoder") {
  Fixture fx(14);
  RngStream s = RngStream::from_seed(14);
  ObjectiveConfig base;
  base.omega1 = 0.0;
  base.omega2 = 0.0;
  ObjectiveNoise noise = draw_objective_noise(fx.model.dims, fx.batch, base, s);

  // decoder gradient from the KL term alone
  ObjectiveConfig kl_only = base;
  kl_only.omega2 = 1.0;
  kl_only.detach_mode = DetachMode::kBoth;
  ObjectiveResult with_kl =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, kl_only, noise);
  ObjectiveResult without =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, base, noise);
  // subtracting the recon-only gradient isolates the KL contribution
  ModelGrads kl_grad = with_kl.grads;
  ModelGrads neg = without.grads;
  neg.scale(-1.0);
  kl_grad.accumulate(neg);
  CHECK(kl_grad.decoder.squared_norm() == 0.0);
  CHECK(kl_grad.encoder.squared_norm() > 0.0);

  // covariate term alone contributes nothing anywhere when fully detached
  ObjectiveConfig cov_only = base;
  cov_only.omega1 = 1.0;
  cov_only.detach_mode = DetachMode::kBoth;
  ObjectiveResult with_cov =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, cov_only, noise);
  ModelGrads cov_grad = with_cov.grads;
  cov_grad.accumulate(neg);
  CHECK(cov_grad.decoder.squared_norm() == 0.0);
  CHECK(cov_grad.encoder.squared_norm() == 0.0);
}

TEST_CASE("gradients of the full objective pass finite differences (all modes)") {
  for (uint64_t seed : {21ULL, 22ULL, 23ULL}) {
    CHECK(check_vci_grads(seed, DetachMode::kNone) < 1e-4);
    CHECK(check_vci_grads(seed, DetachMode::kEncoder) < 1e-4);
    CHECK(check_vci_grads(seed, DetachMode::kBoth) < 1e-4);
    CHECK(check_sae_grads(seed, DetachMode::kNone) < 1e-4);
  }
}

TEST_CASE("gradient check with multiple counterfactual samples") {
  CHECK(check_vci_grads(31, DetachMode::kNone, 3) < 1e-4);
}

TEST_CASE("gradient check with cf_use_mean") {
  Fixture fx(41);
  ObjectiveConfig cfg;
  cfg.cf_use_mean = true;
  RngStream s = RngStream::from_seed(41);
  ObjectiveNoise noise = draw_objective_noise(fx.model.dims, fx.batch, cfg, s);
  ObjectiveResult result =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, cfg, noise);
  std::vector<double*> values;
  std::vector<double> analytic;
  collect(fx.model, result.grads, values, analytic);
  auto loss = [&]() {
    return objective_value(fx.model, fx.batch, fx.strat, cfg, noise);
  };
  CHECK(finite_diff_check(loss, values, analytic, 1e-5) < 1e-4);
}

TEST_CASE("per-term gradients combine linearly into the total gradient") {
  Fixture fx(51);
  ObjectiveConfig cfg;
  cfg.omega1 = 0.9;
  cfg.omega2 = 0.3;
  RngStream s = RngStream::from_seed(51);
  ObjectiveNoise noise = draw_objective_noise(fx.model.dims, fx.batch, cfg, s);

  ObjectiveResult full =
      vci_objective_with_noise(fx.model, fx.batch, fx.strat, cfg, noise);

  auto grads_for = [&](double w1, double w2) {
    ObjectiveConfig c = cfg;
    c.omega1 = w1;
    c.omega2 = w2;
    return vci_objective_with_noise(fx.model, fx.batch, fx.strat, c, noise).grads;
  };
  // total(w1, w2) = -recon - w1 cov + w2 kl is affine in (w1, w2), so
  // grad(full) = grad(0,0) + w1 (grad(1,0) - grad(0,0)) + w2 (grad(0,1) - grad(0,0))
  ModelGrads g00 = grads_for(0.0, 0.0);
  ModelGrads g10 = grads_for(1.0, 0.0);
  ModelGrads g01 = grads_for(0.0, 1.0);

  auto flat = [](const ModelGrads& g) {
    auto a = flatten_grads(g.encoder);
    auto b = flatten_grads(g.decoder);
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  auto f_full = flat(full.grads);
  auto f00 = flat(g00);
  auto f10 = flat(g10);
  auto f01 = flat(g01);
  for (size_t i = 0; i < f_full.size(); ++i) {
    const double combined = f00[i] + cfg.omega1 * (f10[i] - f00[i]) +
                            cfg.omega2 * (f01[i] - f00[i]);
    CHECK(f_full[i] == doctest::Approx(combined).epsilon(1e-9));
  }
}

TEST_CASE("term gradient norms are reported when requested") {
  Fixture fx(61);
  ObjectiveConfig cfg;
  cfg.track_term_grad_norms = true;
  RngStream s = RngStream::from_seed(61);
  ObjectiveResult r = vci_objective(fx.model, fx.batch, fx.strat, cfg, s);
  CHECK(r.report.recon_grad_norm > 0.0);
  CHECK(r.report.covariate_grad_norm > 0.0);
  CHECK(r.report.kl_grad_norm > 0.0);
}

TEST_CASE("sae loss: omega 0 reduces to the autoencoder MSE") {
  Fixture fx(71);
  ObjectiveConfig cfg;
  cfg.objective_kind = ObjectiveKind::kSae;
  cfg.omega_sae = 0.0;
  RngStream s = RngStream::from_seed(71);
  ObjectiveResult r = sae_loss(fx.model, fx.batch, fx.strat, cfg, s);
  CHECK(r.report.total == r.report.recon_term);
  CHECK(r.report.kl_term == 0.0);
  CHECK(r.report.recon_term > 0.0);
}

TEST_CASE("sae loss: perfect reconstruction scores zero") {
  // identity pipeline: encoder mean = Y (d = genes), decoder mean = Z, with
  // zero latent noise injected
  const int genes = 3;
  ModelDims dims;
  dims.genes = genes;
  dims.covariate_levels = {1};
  dims.treatment_levels = 2;
  dims.latent_dim = genes;
  VciModel model;
  model.dims = dims;
  MlpLayer enc;
  enc.weight = Matrix(2 * genes, dims.encoder_input_width());
  for (int j = 0; j < genes; ++j) enc.weight(j, j) = 1.0;  // mean = Y
  enc.bias.assign(static_cast<size_t>(2 * genes), 0.0);
  model.encoder.layers = {enc};
  MlpLayer dec;
  dec.weight = Matrix(2 * genes, dims.decoder_input_width());
  for (int j = 0; j < genes; ++j) dec.weight(j, j) = 1.0;  // mean = Z
  dec.bias.assign(static_cast<size_t>(2 * genes), 0.0);
  model.decoder.layers = {dec};
  model.validate();

  Dataset d = make_dataset(1, 2, genes,
                           {{0, 0, 0.5, -1.0, 2.0}, {0, 1, 1.0, 0.0, -2.0}});
  Batch batch = gather(d, d.all_rows());
  auto strat = StratifiedOutcomeModel::fit(d, d.all_rows());

  ObjectiveConfig cfg;
  cfg.objective_kind = ObjectiveKind::kSae;
  cfg.omega_sae = 0.0;
  ObjectiveNoise noise;
  noise.latent_eps.push_back(Matrix(2, genes));   // zero noise
  noise.outcome_eps.push_back(Matrix(2, genes));
  noise.cf_treatments = {1, 0};
  ObjectiveResult r = sae_loss_with_noise(model, batch, strat, cfg, noise);
  CHECK(r.report.recon_term == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("missing stratum fails loudly naming the cell") {
  Fixture fx(81);
  // refit the stratified model on a subset that lacks treatment 2 entirely
  std::vector<int> rows;
  for (int u = 0; u < fx.dataset.units(); ++u) {
    if (fx.dataset.treatments[static_cast<size_t>(u)] != 2) rows.push_back(u);
  }
  auto strat = StratifiedOutcomeModel::fit(fx.dataset, rows);
  ObjectiveConfig cfg;
  RngStream s = RngStream::from_seed(81);
  bool threw = false;
  // some draw assigns T' = 2 for some unit; try a few streams to make sure
  for (int attempt = 0; attempt < 5 && !threw; ++attempt) {
    RngStream sub = s.child(static_cast<uint64_t>(attempt));
    try {
      vci_objective(fx.model, fx.batch, strat, cfg, sub);
    } catch (const DomainError& e) {
      threw = true;
      CHECK(doctest::String(e.what()) ==
            doctest::Contains("treatment 2"));
    }
  }
  CHECK(threw);
}
