#include "vci/discrete.hpp"

#include <cmath>
#include <string>

#include "vci/error.hpp"

namespace vci {
namespace {

void check_row(const std::vector<double>& row, const std::string& name) {
  double sum = 0.0;
  for (double p : row) {
    if (p < 0.0) throw DomainError("discrete net: negative probability in " + name);
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw DomainError("discrete net: " + name + " sums to " +
                      std::to_string(sum) + ", expected 1");
  }
}

std::vector<double> random_simplex(size_t n, RngStream& stream) {
  // Dirichlet(1) via normalized exponentials.
  std::vector<double> out(n);
  double sum = 0.0;
  for (double& v : out) {
    double u = stream.uniform01();
    v = -std::log(1.0 - u);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

int sample_index(const std::vector<double>& probs, RngStream& stream) {
  const double draw = stream.uniform01();
  double cum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (draw < cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

void DiscreteNet::validate() const {
  const int nx = x_size();
  const int nz = z_size();
  const int nt = t_size();
  const int ny = y_size();
  if (nx < 1 || nz < 1 || nt < 1 || ny < 1) {
    throw DomainError("discrete net: empty support");
  }
  if (nx > kMaxCategorical || nz > kMaxCategorical || nt > kMaxCategorical ||
      ny > kMaxOutcome) {
    throw DomainError("discrete net: support exceeds enumeration caps");
  }
  check_row(p_x, "p(X)");
  if (static_cast<int>(p_z_given_x.size()) != nx ||
      static_cast<int>(p_t_given_x.size()) != nx) {
    throw ShapeError("discrete net: conditional table row count mismatch");
  }
  for (int x = 0; x < nx; ++x) {
    if (static_cast<int>(p_z_given_x[static_cast<size_t>(x)].size()) != nz ||
        static_cast<int>(p_t_given_x[static_cast<size_t>(x)].size()) != nt) {
      throw ShapeError("discrete net: conditional table width mismatch");
    }
    check_row(p_z_given_x[static_cast<size_t>(x)], "p(Z|x)");
    check_row(p_t_given_x[static_cast<size_t>(x)], "p(T|x)");
  }
  if (static_cast<int>(p_y_given_zt.size()) != nz) {
    throw ShapeError("discrete net: p(Y|Z,T) z-extent mismatch");
  }
  for (int z = 0; z < nz; ++z) {
    if (static_cast<int>(p_y_given_zt[static_cast<size_t>(z)].size()) != nt) {
      throw ShapeError("discrete net: p(Y|Z,T) t-extent mismatch");
    }
    for (int t = 0; t < nt; ++t) {
      const auto& row = p_y_given_zt[static_cast<size_t>(z)][static_cast<size_t>(t)];
      if (static_cast<int>(row.size()) != ny) {
        throw ShapeError("discrete net: p(Y|Z,T) y-extent mismatch");
      }
      check_row(row, "p(Y|z,t)");
    }
  }
}

DiscreteNet DiscreteNet::random(int x_size, int z_size, int t_size, int y_size,
                                RngStream& stream) {
  DiscreteNet net;
  net.p_x = random_simplex(static_cast<size_t>(x_size), stream);
  for (int x = 0; x < x_size; ++x) {
    net.p_z_given_x.push_back(random_simplex(static_cast<size_t>(z_size), stream));
    net.p_t_given_x.push_back(random_simplex(static_cast<size_t>(t_size), stream));
  }
  for (int z = 0; z < z_size; ++z) {
    net.p_y_given_zt.emplace_back();
    for (int t = 0; t < t_size; ++t) {
      net.p_y_given_zt.back().push_back(
          random_simplex(static_cast<size_t>(y_size), stream));
    }
  }
  net.y_values.resize(static_cast<size_t>(y_size));
  for (int y = 0; y < y_size; ++y) net.y_values[static_cast<size_t>(y)] = y;
  net.validate();
  return net;
}

ElboReport enumerate_elbo(const DiscreteNet& net, const DiscreteInstance& inst) {
  net.validate();
  const int nz = net.z_size();
  auto in_range = [](int v, int n) { return v >= 0 && v < n; };
  if (!in_range(inst.x, net.x_size()) || !in_range(inst.t, net.t_size()) ||
      !in_range(inst.t_prime, net.t_size()) || !in_range(inst.y, net.y_size()) ||
      !in_range(inst.y_prime, net.y_size())) {
    throw DomainError("enumerate_elbo: instance outside supports");
  }

  const auto& pz = net.p_z_given_x[static_cast<size_t>(inst.x)];
  auto py = [&](int z, int t, int y) {
    return net.p_y_given_zt[static_cast<size_t>(z)][static_cast<size_t>(t)]
                           [static_cast<size_t>(y)];
  };

  // p(y | x, t) = sum_z p(z|x) p(y|z,t); T depends on X only, so
  // p(z | x, t) = p(z | x).
  double p_y_fact = 0.0;
  double p_y_cf = 0.0;
  for (int z = 0; z < nz; ++z) {
    p_y_fact += pz[static_cast<size_t>(z)] * py(z, inst.t, inst.y);
    p_y_cf += pz[static_cast<size_t>(z)] * py(z, inst.t_prime, inst.y_prime);
  }
  if (p_y_fact <= 0.0 || p_y_cf <= 0.0) {
    throw DomainError("enumerate_elbo: zero-probability conditioning event");
  }

  // exact posteriors
  std::vector<double> q1(static_cast<size_t>(nz));  // q(z | y, x, t)
  std::vector<double> q2(static_cast<size_t>(nz));  // q(z | y', x, t')
  for (int z = 0; z < nz; ++z) {
    q1[static_cast<size_t>(z)] =
        pz[static_cast<size_t>(z)] * py(z, inst.t, inst.y) / p_y_fact;
    q2[static_cast<size_t>(z)] =
        pz[static_cast<size_t>(z)] * py(z, inst.t_prime, inst.y_prime) / p_y_cf;
  }

  // p(y' | y, x, t, t') = sum_z q1(z) p(y'|z,t')
  double p_cf_given_fact = 0.0;
  for (int z = 0; z < nz; ++z) {
    p_cf_given_fact += q1[static_cast<size_t>(z)] * py(z, inst.t_prime, inst.y_prime);
  }
  if (p_cf_given_fact <= 0.0) {
    throw DomainError("enumerate_elbo: counterfactual outcome impossible given factual");
  }

  ElboReport report;
  report.lhs = std::log(p_cf_given_fact) + std::log(p_y_fact);

  for (int z = 0; z < nz; ++z) {
    const double q = q1[static_cast<size_t>(z)];
    if (q <= 0.0) continue;
    report.recon += q * std::log(py(z, inst.t, inst.y));
    report.kl += q * std::log(q / q2[static_cast<size_t>(z)]);
  }
  report.covariate = std::log(p_y_cf);
  report.elbo = report.recon + report.covariate - report.kl;
  report.gap = report.lhs - report.elbo;
  return report;
}

double enumerate_true_psi(const DiscreteNet& net, int level) {
  net.validate();
  if (level < 0 || level >= net.t_size()) {
    throw DomainError("enumerate_true_psi: treatment level out of range");
  }
  double psi = 0.0;
  for (int x = 0; x < net.x_size(); ++x) {
    for (int z = 0; z < net.z_size(); ++z) {
      double ey = 0.0;
      for (int y = 0; y < net.y_size(); ++y) {
        ey += net.y_values[static_cast<size_t>(y)] *
              net.p_y_given_zt[static_cast<size_t>(z)][static_cast<size_t>(level)]
                              [static_cast<size_t>(y)];
      }
      psi += net.p_x[static_cast<size_t>(x)] *
             net.p_z_given_x[static_cast<size_t>(x)][static_cast<size_t>(z)] * ey;
    }
  }
  return psi;
}

DiscreteDraw sample_discrete(const DiscreteNet& net, RngStream& stream) {
  DiscreteDraw draw;
  draw.x = sample_index(net.p_x, stream);
  draw.z = sample_index(net.p_z_given_x[static_cast<size_t>(draw.x)], stream);
  draw.t = sample_index(net.p_t_given_x[static_cast<size_t>(draw.x)], stream);
  const int y = sample_index(
      net.p_y_given_zt[static_cast<size_t>(draw.z)][static_cast<size_t>(draw.t)],
      stream);
  draw.y = net.y_values[static_cast<size_t>(y)];
  return draw;
}

}  // namespace vci
