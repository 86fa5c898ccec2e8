#include "vci/mlp.hpp"

#include <cmath>
#include <string>

#include "vci/error.hpp"

namespace vci {

int MlpParams::input_width() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  return layers.front().weight.cols();
}

int MlpParams::output_width() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  return layers.back().weight.rows();
}

long MlpParams::parameter_count() const {
  long n = 0;
  for (const MlpLayer& l : layers) {
    n += l.weight.size() + static_cast<long>(l.bias.size());
  }
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  for (size_t i = 0; i < layers.size(); ++i) {
    const MlpLayer& l = layers[i];
    if (static_cast<int>(l.bias.size()) != l.weight.rows()) {
      throw ShapeError("layer " + std::to_string(i) + ": bias length " +
                       std::to_string(l.bias.size()) +
                       " does not match weight rows " +
                       std::to_string(l.weight.rows()));
    }
    if (i > 0 && layers[i - 1].weight.rows() != l.weight.cols()) {
      throw ShapeError("layer " + std::to_string(i) + ": input width " +
                       std::to_string(l.weight.cols()) +
                       " does not match previous output width " +
                       std::to_string(layers[i - 1].weight.rows()));
    }
  }
  if (layers.back().activation != Activation::kIdentity) {
    throw ConfigError("final layer activation must be identity");
  }
}

MlpParams make_mlp(int input_width, std::span<const int> hidden_widths,
                   int output_width, RngStream& stream) {
  if (input_width < 1 || output_width < 1) {
    throw ConfigError("network widths must be >= 1");
  }
  MlpParams params;
  int in = input_width;
  RngStream init = stream.child("mlp-init");
  auto add_layer = [&](int out, Activation act) {
    MlpLayer layer;
    layer.weight = Matrix(out, in);
    const double scale = std::sqrt(2.0 / in);
    for (double& w : layer.weight.data()) w = scale * init.normal();
    // Small random bias keeps pre-activations off the exact ReLU kink, which
    // would otherwise make subgradients ambiguous for finite-difference
    // verification (dead rows land at exactly zero with zero bias).
    layer.bias.resize(static_cast<size_t>(out));
    for (double& b : layer.bias) b = 0.01 * init.normal();
    layer.activation = act;
    params.layers.push_back(std::move(layer));
    in = out;
  };
  for (int h : hidden_widths) {
    if (h < 1) throw ConfigError("hidden width must be >= 1");
    add_layer(h, Activation::kRelu);
  }
  add_layer(output_width, Activation::kIdentity);
  params.validate();
  return params;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads grads;
  grads.layers.reserve(params.layers.size());
  for (const MlpLayer& l : params.layers) {
    MlpLayer g;
    g.weight = Matrix(l.weight.rows(), l.weight.cols());
    g.bias.assign(l.bias.size(), 0.0);
    grads.layers.push_back(std::move(g));
  }
  return grads;
}

void MlpGrads::accumulate(const MlpGrads& other) {
  if (layers.size() != other.layers.size()) {
    throw ShapeError("gradient accumulate: layer count mismatch");
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    add_inplace(layers[i].weight, other.layers[i].weight);
    for (size_t j = 0; j < layers[i].bias.size(); ++j) {
      layers[i].bias[j] += other.layers[i].bias[j];
    }
  }
}

void MlpGrads::scale(double factor) {
  for (MlpLayer& l : layers) {
    for (double& v : l.weight.data()) v *= factor;
    for (double& v : l.bias) v *= factor;
  }
}

double MlpGrads::squared_norm() const {
  double acc = 0.0;
  for (const MlpLayer& l : layers) {
    for (double v : l.weight.data()) acc += v * v;
    for (double v : l.bias) acc += v * v;
  }
  return acc;
}

Matrix mlp_forward(const MlpParams& params, const Matrix& input,
                   MlpTrace* trace) {
  params.validate();
  if (input.cols() != params.input_width()) {
    throw ShapeError("mlp_forward: input width " +
                     std::to_string(input.cols()) + " does not match layer-0 width " +
                     std::to_string(params.input_width()));
  }
  if (trace != nullptr) {
    trace->activations.clear();
    trace->activations.push_back(input);
  }
  Matrix current = input;
  for (const MlpLayer& layer : params.layers) {
    Matrix next = matmul_abt(current, layer.weight);
    for (int i = 0; i < next.rows(); ++i) {
      double* row = next.row(i).data();
      for (int j = 0; j < next.cols(); ++j) {
        row[j] += layer.bias[static_cast<size_t>(j)];
        if (layer.activation == Activation::kRelu && row[j] < 0.0) row[j] = 0.0;
      }
    }
    current = std::move(next);
    if (trace != nullptr) trace->activations.push_back(current);
  }
  ensure_finite(current, "mlp_forward output");
  return current;
}

MlpBackwardResult mlp_backward(const MlpParams& params, const MlpTrace& trace,
                               const Matrix& output_grad) {
  if (trace.activations.size() != params.layers.size() + 1) {
    throw ShapeError("mlp_backward: trace does not match network depth");
  }
  if (!output_grad.same_shape(trace.activations.back())) {
    throw ShapeError("mlp_backward: output_grad shape " +
                     shape_string(output_grad) + " does not match output " +
                     shape_string(trace.activations.back()));
  }
  MlpBackwardResult result;
  result.param_grads = MlpGrads::zeros_like(params);
  Matrix upstream = output_grad;
  for (int li = static_cast<int>(params.layers.size()) - 1; li >= 0; --li) {
    const MlpLayer& layer = params.layers[static_cast<size_t>(li)];
    const Matrix& layer_out = trace.activations[static_cast<size_t>(li) + 1];
    const Matrix& layer_in = trace.activations[static_cast<size_t>(li)];
    // ReLU: activation is zero exactly where the pre-activation was clipped.
    if (layer.activation == Activation::kRelu) {
      for (int i = 0; i < upstream.rows(); ++i) {
        double* urow = upstream.row(i).data();
        const double* orow = layer_out.row(i).data();
        for (int j = 0; j < upstream.cols(); ++j) {
          if (orow[j] <= 0.0) urow[j] = 0.0;
        }
      }
    }
    MlpLayer& g = result.param_grads.layers[static_cast<size_t>(li)];
    g.weight = matmul_atb(upstream, layer_in);
    g.bias = column_sums(upstream);
    if (li > 0) {
      upstream = matmul_ab(upstream, layer.weight);
    } else {
      result.input_grad = matmul_ab(upstream, layer.weight);
    }
  }
  ensure_finite(result.input_grad, "mlp_backward input gradient");
  return result;
}

MlpBackwardResult mlp_backward(const MlpParams& params, const Matrix& input,
                               const Matrix& output_grad) {
  MlpTrace trace;
  mlp_forward(params, input, &trace);
  return mlp_backward(params, trace, output_grad);
}

AdamState AdamState::init(const MlpParams& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  state.first_moment = MlpGrads::zeros_like(params);
  state.second_moment = MlpGrads::zeros_like(params);
  return state;
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state) {
  if (grads.layers.size() != params.layers.size()) {
    throw ShapeError("adam_step: gradient layer count mismatch");
  }
  for (size_t li = 0; li < params.layers.size(); ++li) {
    for (double v : grads.layers[li].weight.data()) {
      if (!std::isfinite(v)) {
        throw NumericError("adam_step: non-finite gradient in layer " +
                           std::to_string(li) + " weight");
      }
    }
    for (double v : grads.layers[li].bias) {
      if (!std::isfinite(v)) {
        throw NumericError("adam_step: non-finite gradient in layer " +
                           std::to_string(li) + " bias");
      }
    }
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](double& p, double g, double& m, double& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    p -= c.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
  };
  for (size_t li = 0; li < params.layers.size(); ++li) {
    MlpLayer& p = params.layers[li];
    const MlpLayer& g = grads.layers[li];
    MlpLayer& m = state.first_moment.layers[li];
    MlpLayer& v = state.second_moment.layers[li];
    if (!p.weight.same_shape(g.weight) ||
        p.bias.size() != g.bias.size()) {
      throw ShapeError("adam_step: layer " + std::to_string(li) +
                       " gradient shape mismatch");
    }
    double* pw = p.weight.data().data();
    const double* gw = g.weight.data().data();
    double* mw = m.weight.data().data();
    double* vw = v.weight.data().data();
    const long wn = p.weight.size();
    for (long i = 0; i < wn; ++i) update(pw[i], gw[i], mw[i], vw[i]);
    for (size_t i = 0; i < p.bias.size(); ++i) {
      update(p.bias[i], g.bias[i], m.bias[i], v.bias[i]);
    }
  }
}

std::vector<double> gaussian_reparameterize(std::span<const double> mean,
                                            std::span<const double> logvar,
                                            std::span<const double> noise) {
  if (mean.size() != logvar.size() || mean.size() != noise.size()) {
    throw ShapeError("gaussian_reparameterize: length mismatch (" +
                     std::to_string(mean.size()) + ", " +
                     std::to_string(logvar.size()) + ", " +
                     std::to_string(noise.size()) + ")");
  }
  std::vector<double> out(mean.size());
  for (size_t i = 0; i < mean.size(); ++i) {
    out[i] = mean[i] + std::exp(0.5 * logvar[i]) * noise[i];
  }
  ensure_finite(out, "gaussian_reparameterize");
  return out;
}

Matrix gaussian_reparameterize(const Matrix& mean, const Matrix& logvar,
                               const Matrix& noise) {
  if (!mean.same_shape(logvar) || !mean.same_shape(noise)) {
    throw ShapeError("gaussian_reparameterize: shape mismatch " +
                     shape_string(mean) + ", " + shape_string(logvar) + ", " +
                     shape_string(noise));
  }
  Matrix out(mean.rows(), mean.cols());
  const double* mu = mean.data().data();
  const double* lv = logvar.data().data();
  const double* eps = noise.data().data();
  double* o = out.data().data();
  const long n = mean.size();
  for (long i = 0; i < n; ++i) o[i] = mu[i] + std::exp(0.5 * lv[i]) * eps[i];
  ensure_finite(out, "gaussian_reparameterize");
  return out;
}

double finite_diff_check(const std::function<double()>& loss,
                         std::span<double* const> values,
                         std::span<const double> analytic, double step) {
  if (values.size() != analytic.size()) {
    throw ShapeError("finite_diff_check: value/gradient count mismatch");
  }
  if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be > 0");
  double max_rel = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    double* p = values[i];
    const double saved = *p;
    *p = saved + step;
    const double up = loss();
    *p = saved - step;
    const double down = loss();
    *p = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite loss during probe");
    }
    const double numeric = (up - down) / (2.0 * step);
    const double rel =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

double finite_diff_check(const std::function<double()>& loss, MlpParams& params,
                         const MlpGrads& analytic, double step) {
  std::vector<double*> values = parameter_pointers(params);
  std::vector<double> grads = flatten_grads(analytic);
  return finite_diff_check(loss, values, grads, step);
}

std::vector<double*> parameter_pointers(MlpParams& params) {
  std::vector<double*> out;
  out.reserve(static_cast<size_t>(params.parameter_count()));
  for (MlpLayer& l : params.layers) {
    for (double& v : l.weight.data()) out.push_back(&v);
    for (double& v : l.bias) out.push_back(&v);
  }
  return out;
}

std::vector<const double*> parameter_pointers(const MlpParams& params) {
  std::vector<const double*> out;
  out.reserve(static_cast<size_t>(params.parameter_count()));
  for (const MlpLayer& l : params.layers) {
    for (const double& v : l.weight.data()) out.push_back(&v);
    for (const double& v : l.bias) out.push_back(&v);
  }
  return out;
}

std::vector<double> flatten_grads(const MlpGrads& grads) {
  std::vector<double> out;
  for (const MlpLayer& l : grads.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

}  // namespace vci
