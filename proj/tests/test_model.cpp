#include "vci/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "vci/error.hpp"
#include "vci/sim.hpp"

using namespace vci;
using namespace vci::testutil;

namespace {

Batch batch_of(const Dataset& d) { return gather(d, d.all_rows()); }

}  // namespace

TEST_CASE("encode: zero-weight encoder gives zero mean and logvar") {
  VciModel model = make_toy_model(4, 2, 3, 3, 8, 1);
  zero_weights(model.encoder);
  Dataset d = make_dataset(2, 3, 4,
                           {{0, 1, 1.0, -2.0, 0.5, 3.0},
                            {1, 2, 0.0, 0.0, 0.0, 0.0}});
  GaussianBatch g = encode(model, batch_of(d));
  for (double v : g.mean.data()) CHECK(v == 0.0);
  for (double v : g.logvar.data()) CHECK(v == 0.0);
}

TEST_CASE("encode: identical rows give identical latents, shapes hold") {
  VciModel model = make_toy_model(4, 2, 3, 3, 8, 2);
  Dataset d = make_dataset(2, 3, 4,
                           {{1, 2, 0.3, -1.0, 2.0, 0.7},
                            {1, 2, 0.3, -1.0, 2.0, 0.7}});
  GaussianBatch g = encode(model, batch_of(d));
  CHECK(g.mean.rows() == 2);
  CHECK(g.mean.cols() == 3);
  CHECK(g.logvar.rows() == 2);
  CHECK(g.logvar.cols() == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(g.mean(0, j) == g.mean(1, j));
    CHECK(g.logvar(0, j) == g.logvar(1, j));
  }
}

TEST_CASE("encode rejects unknown covariate and treatment codes") {
  VciModel model = make_toy_model(4, 2, 3, 3, 8, 3);
  Dataset d = make_dataset(2, 3, 4, {{1, 2, 0.0, 0.0, 0.0, 0.0}});
  Batch b = batch_of(d);
  b.treatments[0] = 7;
  CHECK_THROWS_AS(encode(model, b), DomainError);
  b.treatments[0] = 2;
  b.covariates[0] = -1;
  CHECK_THROWS_AS(encode(model, b), DomainError);
}

TEST_CASE("encode/decode are batch-order equivariant") {
  VciModel model = make_toy_model(3, 2, 4, 2, 8, 4);
  Dataset d = make_dataset(2, 4, 3,
                           {{0, 0, 1.0, 2.0, 3.0},
                            {1, 1, -1.0, 0.5, 0.0},
                            {0, 3, 4.0, -4.0, 1.0}});
  Batch fwd = gather(d, std::vector<int>{0, 1, 2});
  Batch rev = gather(d, std::vector<int>{2, 1, 0});
  GaussianBatch gf = encode(model, fwd);
  GaussianBatch gr = encode(model, rev);
  for (int j = 0; j < 2; ++j) {
    CHECK(gf.mean(0, j) == gr.mean(2, j));
    CHECK(gf.mean(2, j) == gr.mean(0, j));
    CHECK(gf.mean(1, j) == gr.mean(1, j));
  }
  GaussianBatch df = decode(model, gf.mean, fwd.treatments);
  GaussianBatch dr = decode(model, gr.mean, rev.treatments);
  for (int j = 0; j < 3; ++j) {
    CHECK(df.mean(0, j) == dr.mean(2, j));
    CHECK(df.mean(2, j) == dr.mean(0, j));
  }
}

TEST_CASE("decode: zero-weight decoder gives zeros; treatments reach the output") {
  VciModel model = make_toy_model(3, 2, 4, 2, 8, 5);
  Matrix z(2, 2, {0.5, -0.5, 1.0, 0.25});

  VciModel zeroed = model;
  zero_weights(zeroed.decoder);
  GaussianBatch g0 = decode(zeroed, z, 1);
  for (double v : g0.mean.data()) CHECK(v == 0.0);

  GaussianBatch g1 = decode(model, z, 0);
  GaussianBatch g2 = decode(model, z, 3);
  CHECK(g1.mean.rows() == 2);
  CHECK(g1.mean.cols() == 3);
  // different treatment level flows through to (generally) different means
  bool any_diff = false;
  for (int j = 0; j < 3; ++j) {
    if (g1.mean(0, j) != g2.mean(0, j)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("decoded log-likelihood matches the diagonal Gaussian density") {
  VciModel model = make_toy_model(3, 2, 4, 2, 8, 6);
  Matrix z(1, 2, {0.3, -0.8});
  GaussianBatch g = decode(model, z, 2);
  std::vector<double> y{0.1, -0.2, 0.4};
  double ll = gaussian_loglik(y, g.mean.row(0), g.logvar.row(0));
  // direct density evaluation
  double expect = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double var = std::exp(g.logvar(0, j));
    const double diff = y[static_cast<size_t>(j)] - g.mean(0, j);
    expect += -0.5 * std::log(2.0 * M_PI * var) - diff * diff / (2.0 * var);
  }
  CHECK(ll == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("fit_stratified: hand-computed stratum mean and population variance") {
  Dataset d = make_dataset(1, 2, 2,
                           {{0, 1, 0.0, 2.0},
                            {0, 1, 2.0, 0.0},
                            {0, 0, 5.0, 5.0},
                            {0, 0, 5.0, 5.0}});
  auto model = StratifiedOutcomeModel::fit(d, d.all_rows());
  std::vector<int> cov{0};
  const auto& s = model.lookup(cov, 1);
  CHECK(s.count == 2);
  CHECK(s.mean[0] == doctest::Approx(1.0));
  CHECK(s.mean[1] == doctest::Approx(1.0));
  CHECK(s.var[0] == doctest::Approx(1.0));
  CHECK(s.var[1] == doctest::Approx(1.0));
}

TEST_CASE("fit_stratified: singleton stratum resolves via treatment marginal") {
  Dataset d = make_dataset(2, 2, 1,
                           {{0, 1, 10.0},
                            {1, 1, 20.0},
                            {1, 1, 30.0},
                            {0, 0, 0.0},
                            {1, 0, 0.0}});
  auto model = StratifiedOutcomeModel::fit(d, d.all_rows());
  std::vector<int> cov{0};
  // stratum (0, 1) has a single row; fallback is the marginal over T=1
  const auto& s = model.lookup(cov, 1);
  CHECK(s.count == 3);
  CHECK(s.mean[0] == doctest::Approx(20.0));
}

TEST_CASE("fit_stratified: constant column is floored, not zero") {
  Dataset d = make_dataset(1, 2, 1, {{0, 1, 3.0}, {0, 1, 3.0}, {0, 0, 0.0}});
  auto model = StratifiedOutcomeModel::fit(d, d.all_rows());
  std::vector<int> cov{0};
  CHECK(model.lookup(cov, 1).var[0] == doctest::Approx(1e-4));
}

TEST_CASE("lookup: treatment with no units anywhere is a loud error") {
  Dataset d = make_dataset(1, 3, 1, {{0, 0, 1.0}, {0, 1, 2.0}, {0, 1, 2.5}});
  auto model = StratifiedOutcomeModel::fit(d, d.all_rows());
  std::vector<int> cov{0};
  CHECK_THROWS_WITH_AS(model.lookup(cov, 2), doctest::Contains("treatment 2"),
                       DomainError);
}

TEST_CASE("stratified_loglik: maximized at the stratum mean, known value") {
  Dataset d = make_dataset(1, 2, 1, {{0, 1, -1.0}, {0, 1, 1.0}, {0, 0, 9.0}});
  // stratum (0, t=1): mean 0, population var 1
  auto model = StratifiedOutcomeModel::fit(d, d.all_rows());
  std::vector<int> cov{0};
  std::vector<double> at_mean{0.0};
  const double peak = model.loglik(at_mean, cov, 1);
  CHECK(peak == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
  for (double y : {-0.5, 0.3, 1.7}) {
    std::vector<double> probe{y};
    CHECK(model.loglik(probe, cov, 1) < peak);
  }
  std::vector<double> grad(1);
  model.loglik_grad(at_mean, cov, 1, grad);
  CHECK(grad[0] == doctest::Approx(0.0));
}

TEST_CASE("stratified_loglik gradient matches finite differences") {
  Dataset d = make_dataset(1, 2, 2,
                           {{0, 1, 0.0, 2.0}, {0, 1, 2.0, 0.0}, {0, 0, 1.0, 1.0}});
  auto model = StratifiedOutcomeModel::fit(d, d.all_rows());
  std::vector<int> cov{0};
  std::vector<double> y{0.7, -0.3};
  std::vector<double> grad(2);
  model.loglik_grad(y, cov, 1, grad);
  const double h = 1e-6;
  for (size_t j = 0; j < y.size(); ++j) {
    std::vector<double> up = y, down = y;
    up[j] += h;
    down[j] -= h;
    const double numeric =
        (model.loglik(up, cov, 1) - model.loglik(down, cov, 1)) / (2.0 * h);
    CHECK(grad[j] == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("fit_propensity: add-one smoothing hand case (9, 1) -> (10/12, 2/12)") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 9; ++i) rows.push_back({0, 0, 0.0});
  rows.push_back({0, 1, 0.0});
  Dataset d = make_dataset(1, 2, 1, rows);
  PropensityTable table = PropensityTable::fit(d, d.all_rows());
  std::vector<int> cov{0};
  CHECK(table.prob(cov, 0) == doctest::Approx(10.0 / 12.0).epsilon(1e-12));
  CHECK(table.prob(cov, 1) == doctest::Approx(2.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("fit_propensity: rows sum to one and never dip below the clip") {
  std::vector<std::vector<double>> rows;
  // covariate 0: extremely unbalanced so smoothing alone would go below 0.01
  for (int i = 0; i < 500; ++i) rows.push_back({0, 0, 0.0});
  rows.push_back({0, 1, 0.0});
  // covariate 1: uniform
  for (int i = 0; i < 30; ++i) rows.push_back({1, i % 2 ? 1.0 : 0.0, 0.0});
  Dataset d = make_dataset(2, 2, 1, rows);
  PropensityTable table = PropensityTable::fit(d, d.all_rows());
  for (const auto& [key, probs] : table.table()) {
    double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (double p : probs) CHECK(p >= 0.01);
  }
  std::vector<int> c1{1};
  CHECK(table.prob(c1, 0) == doctest::Approx(0.5).epsilon(0.05));
  std::vector<int> unseen{2};
  CHECK_THROWS_AS(table.prob(unseen, 0), DomainError);
}

TEST_CASE("clip_and_renormalize keeps the floor under many levels") {
  std::vector<double> probs(10, 0.0005);
  probs[0] = 1.0 - 0.0045;
  auto out = clip_and_renormalize(probs, 0.01);
  double sum = std::accumulate(out.begin(), out.end(), 0.0);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (double p : out) CHECK(p >= 0.01 - 1e-15);
}

TEST_CASE("fit_stratified recovers simulated stratum means within 4 SEs") {
  SimConfig cfg;
  cfg.units = 40000;
  cfg.covariate_levels = {2};
  cfg.treatment_levels = 2;
  cfg.latent_dim = 4;
  cfg.genes = 6;
  cfg.confounding = 0.0;
  SimDataset sim = simulate(cfg, 321);
  auto model = StratifiedOutcomeModel::fit(sim.data, sim.data.all_rows());
  // empirical check against the within-stratum sample spread
  for (int c = 0; c < 2; ++c) {
    for (int t = 0; t < 2; ++t) {
      std::vector<int> cov{c};
      const auto& s = model.lookup(cov, t);
      REQUIRE(s.count > 1000);
      // group rows and recompute the mean independently
      double sum = 0.0;
      long count = 0;
      for (int u = 0; u < sim.data.units(); ++u) {
        if (sim.data.covariate_row(u)[0] == c && sim.data.treatments[static_cast<size_t>(u)] == t) {
          sum += sim.data.outcomes(u, 0);
          ++count;
        }
      }
      CHECK(s.count == count);
      CHECK(s.mean[0] == doctest::Approx(sum / count).epsilon(1e-12));
      // and the stored mean sits within 4 standard errors of the
      // generator's conditional expectation estimated from a fresh draw
      SimDataset fresh = simulate(cfg, 654);
      double fsum = 0.0, fsq = 0.0;
      long fcount = 0;
      for (int u = 0; u < fresh.data.units(); ++u) {
        if (fresh.data.covariate_row(u)[0] == c &&
            fresh.data.treatments[static_cast<size_t>(u)] == t) {
          fsum += fresh.data.outcomes(u, 0);
          fsq += fresh.data.outcomes(u, 0) * fresh.data.outcomes(u, 0);
          ++fcount;
        }
      }
      const double fmean = fsum / fcount;
      const double fvar = fsq / fcount - fmean * fmean;
      const double se = std::sqrt(fvar * (1.0 / count + 1.0 / fcount));
      CHECK(std::abs(s.mean[0] - fmean) < 4.0 * se);
    }
  }
}
