#pragma once

#include <vector>

#include "vci/rng.hpp"

namespace vci {

// Finite-support Bayes net over (X, Z, T, Y) with the causal factorization
//   p(x) p(z|x) p(t|x) p(y|z,t),
// where the counterfactual pair (T', Y') shares the T and Y tables. Small by
// construction so every quantity can be computed by exact summation.
struct DiscreteNet {
  static constexpr int kMaxCategorical = 4;  // |X|, |Z|, |T|
  static constexpr int kMaxOutcome = 8;      // |Y|

  std::vector<double> p_x;                   // |X|
  std::vector<std::vector<double>> p_z_given_x;  // [x][z]
  std::vector<std::vector<double>> p_t_given_x;  // [x][t]
  // [z][t][y]
  std::vector<std::vector<std::vector<double>>> p_y_given_zt;
  std::vector<double> y_values;              // support values; default 0..|Y|-1

  int x_size() const { return static_cast<int>(p_x.size()); }
  int z_size() const {
    return p_z_given_x.empty() ? 0 : static_cast<int>(p_z_given_x[0].size());
  }
  int t_size() const {
    return p_t_given_x.empty() ? 0 : static_cast<int>(p_t_given_x[0].size());
  }
  int y_size() const { return static_cast<int>(y_values.size()); }

  void validate() const;  // rows sum to 1 within 1e-12, sizes within caps

  static DiscreteNet random(int x_size, int z_size, int t_size, int y_size,
                            RngStream& stream);
};

struct DiscreteInstance {
  int x = 0;
  int t = 0;
  int t_prime = 0;
  int y = 0;
  int y_prime = 0;
};

struct ElboReport {
  double lhs = 0.0;   // log p(y'|y,x,t,t') + log p(y|x,t)
  double elbo = 0.0;  // reconstruction + covariate + divergence bound
  double gap = 0.0;   // lhs - elbo; >= 0 with exact posteriors
  // bound components, exposed for inspection
  double recon = 0.0;
  double covariate = 0.0;
  double kl = 0.0;
};

// Computes both sides of the bound exactly, with q taken as the net's exact
// posterior p(z | y, x, t). Throws DomainError when the conditioning events
// have zero probability.
ElboReport enumerate_elbo(const DiscreteNet& net, const DiscreteInstance& inst);

// Exact estimand: sum_{x,z} p(x) p(z|x) E[Y | z, a].
double enumerate_true_psi(const DiscreteNet& net, int level);

// One observational draw (plus latent truth) from the net.
struct DiscreteDraw {
  int x = 0;
  int z = 0;
  int t = 0;
  double y = 0.0;
};
DiscreteDraw sample_discrete(const DiscreteNet& net, RngStream& stream);

}  // namespace vci
