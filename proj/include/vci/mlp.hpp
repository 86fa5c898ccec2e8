#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vci/matrix.hpp"
#include "vci/rng.hpp"

namespace vci {

enum class Activation { kRelu, kIdentity };

struct MlpLayer {
  Matrix weight;             // out x in
  std::vector<double> bias;  // out
  Activation activation = Activation::kIdentity;
};

// Feed-forward network parameters. The last layer is always identity so the
// output can parameterize Gaussian means and log-variances directly.
struct MlpParams {
  std::vector<MlpLayer> layers;

  int input_width() const;
  int output_width() const;
  long parameter_count() const;
  void validate() const;  // throws ShapeError / ConfigError
};

// He-initialized network: hidden layers ReLU, final layer identity.
MlpParams make_mlp(int input_width, std::span<const int> hidden_widths,
                   int output_width, RngStream& stream);

// Gradient (or first/second moment) storage shaped like an MlpParams.
struct MlpGrads {
  std::vector<MlpLayer> layers;  // activation tags unused

  static MlpGrads zeros_like(const MlpParams& params);
  void accumulate(const MlpGrads& other);
  void scale(double factor);
  double squared_norm() const;
};

// Layer activations recorded during a forward pass; activations[0] is the
// input batch and activations.back() the output.
struct MlpTrace {
  std::vector<Matrix> activations;
  const Matrix& output() const { return activations.back(); }
};

Matrix mlp_forward(const MlpParams& params, const Matrix& input,
                   MlpTrace* trace = nullptr);

struct MlpBackwardResult {
  MlpGrads param_grads;
  Matrix input_grad;
};

// Exact gradients of sum(output * output_grad) with respect to every
// parameter and the input, from a recorded trace.
MlpBackwardResult mlp_backward(const MlpParams& params, const MlpTrace& trace,
                               const Matrix& output_grad);
// Convenience form that reruns the forward pass internally.
MlpBackwardResult mlp_backward(const MlpParams& params, const Matrix& input,
                               const Matrix& output_grad);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  MlpGrads first_moment;
  MlpGrads second_moment;

  static AdamState init(const MlpParams& params, const AdamConfig& config);
};

// Bias-corrected adaptive update, applied in place; increments the step
// counter. Non-finite gradient entries throw NumericError naming the block.
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state);

// mean + exp(0.5 * logvar) * noise, elementwise.
Matrix gaussian_reparameterize(const Matrix& mean, const Matrix& logvar,
                               const Matrix& noise);
std::vector<double> gaussian_reparameterize(std::span<const double> mean,
                                            std::span<const double> logvar,
                                            std::span<const double> noise);

// Central-difference gradient checker. `loss` re-evaluates the scalar under
// the current parameter values; `values` point at the parameters to perturb
// and `analytic` holds the gradient entries being checked, in the same order.
// Returns max over entries of |analytic - numeric| / max(1, |numeric|).
double finite_diff_check(const std::function<double()>& loss,
                         std::span<double* const> values,
                         std::span<const double> analytic, double step);

// Convenience overload over one network's full parameter set.
double finite_diff_check(const std::function<double()>& loss, MlpParams& params,
                         const MlpGrads& analytic, double step);

// Enumerates parameter storage of a network in declared order (weights
// row-major, then bias, per layer). Shared by the checker, Adam, and
// checkpoint serialization.
std::vector<double*> parameter_pointers(MlpParams& params);
std::vector<const double*> parameter_pointers(const MlpParams& params);
std::vector<double> flatten_grads(const MlpGrads& grads);

}  // namespace vci
