// Command-line entry point wiring simulation, splitting, training,
// prediction, estimation and evaluation into reproducible runs.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vci/dataio.hpp"
#include "vci/error.hpp"
#include "vci/estimators.hpp"
#include "vci/evalharness.hpp"
#include "vci/sim.hpp"
#include "vci/splits.hpp"
#include "vci/trainer.hpp"
#include "vci/version.hpp"

namespace {

using namespace vci;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Every run writes `<out>.manifest` with the fully resolved configuration;
// a run is reproducible from its manifest alone. No wall-clock content.
class Manifest {
 public:
  explicit Manifest(std::string subcommand) : subcommand_(std::move(subcommand)) {
    entries_.emplace_back("subcommand", subcommand_);
    entries_.emplace_back("tool_version", kToolVersion);
  }
  template <typename T>
  void flag(const std::string& name, const T& value) {
    if constexpr (std::is_same_v<T, std::string>) {
      entries_.emplace_back("flag." + name, value);
    } else if constexpr (std::is_same_v<T, double>) {
      entries_.emplace_back("flag." + name, format_double(value));
    } else {
      entries_.emplace_back("flag." + name, std::to_string(value));
    }
  }
  void flag_list(const std::string& name, const std::vector<int>& values) {
    std::string joined;
    for (size_t i = 0; i < values.size(); ++i) {
      if (i > 0) joined += ",";
      joined += std::to_string(values[i]);
    }
    entries_.emplace_back("flag." + name, joined);
  }
  void output(const std::string& role, const std::string& path) {
    entries_.emplace_back("output." + role, path);
  }
  void write(const std::string& anchor_path) const {
    const std::string path = anchor_path + ".manifest";
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const auto& [key, value] : entries_) {
      out << key << " = " << value << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
  }

 private:
  std::string subcommand_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct SimulateArgs {
  std::string out;
  uint64_t seed = 0;
  int units = 1000;
  int genes = 32;
  int latent_dim = 8;
  int treatments = 4;
  std::vector<int> covariates{3};
  double confounding = 1.0;
  double noise_y = 0.3;
  double noise_z = 0.5;
  std::string link = "tanh";
  uint64_t mixing_seed = 7;
};

void run_simulate(const SimulateArgs& args) {
  SimConfig cfg;
  cfg.units = args.units;
  cfg.genes = args.genes;
  cfg.latent_dim = args.latent_dim;
  cfg.treatment_levels = args.treatments;
  cfg.covariate_levels = args.covariates;
  cfg.confounding = args.confounding;
  cfg.noise_y = args.noise_y;
  cfg.noise_z = args.noise_z;
  cfg.mixing_seed = args.mixing_seed;
  if (args.link == "tanh") {
    cfg.link = SimConfig::OutcomeLink::kTanh;
  } else if (args.link == "linear") {
    cfg.link = SimConfig::OutcomeLink::kLinear;
  } else {
    throw ConfigError("--link must be tanh or linear");
  }
  cfg.validate();

  SimDataset sim = simulate(cfg, args.seed);
  save_dataset(sim.data, args.out);
  save_truth_files(sim, args.out);

  Manifest manifest("simulate");
  manifest.flag("out", args.out);
  manifest.flag("seed", args.seed);
  manifest.flag("units", args.units);
  manifest.flag("genes", args.genes);
  manifest.flag("latent-dim", args.latent_dim);
  manifest.flag("treatments", args.treatments);
  manifest.flag_list("covariates", args.covariates);
  manifest.flag("confounding", args.confounding);
  manifest.flag("noise-y", args.noise_y);
  manifest.flag("noise-z", args.noise_z);
  manifest.flag("link", args.link);
  manifest.flag("mixing-seed", args.mixing_seed);
  manifest.output("dataset", args.out);
  for (int a = 0; a < args.treatments; ++a) {
    manifest.output("truth" + std::to_string(a),
                    with_suffix(args.out, "truth" + std::to_string(a)));
  }
  manifest.write(args.out);
}

struct SplitArgs {
  std::string data;
  std::string out;
  int ood_perturbations = 0;
  std::string ratio = "4:1";
  uint64_t seed = 0;
};

void run_split(const SplitArgs& args) {
  const size_t colon = args.ratio.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("--ratio must look like 4:1");
  }
  const long train_part = parse_long(args.ratio.substr(0, colon));
  const long test_part = parse_long(args.ratio.substr(colon + 1));
  if (train_part < 1 || test_part < 1) {
    throw ConfigError("--ratio parts must be positive");
  }
  const double test_fraction =
      static_cast<double>(test_part) / static_cast<double>(train_part + test_part);

  Dataset dataset = load_dataset(args.data);
  RngStream stream = RngStream::from_seed(args.seed).child("split");
  SplitAssignment splits =
      select_ood(dataset, args.ood_perturbations, stream, test_fraction);
  splits.seed = args.seed;
  save_splits(splits, args.out);

  Manifest manifest("split");
  manifest.flag("data", args.data);
  manifest.flag("out", args.out);
  manifest.flag("ood-perturbations", args.ood_perturbations);
  manifest.flag("ratio", args.ratio);
  manifest.flag("seed", args.seed);
  manifest.output("splits", args.out);
  manifest.write(args.out);
}

struct TrainArgs {
  std::string data;
  std::string splits;
  std::string out;
  std::string objective = "vci";
  std::string detach = "none";
  double omega1 = 1.0;
  double omega2 = 0.1;
  double omega = 1.0;
  int latent_dim = 32;
  std::vector<int> hidden{128, 128};
  int epochs = 200;
  double lr = 1e-3;
  int batch = 128;
  uint64_t seed = 0;
  int checkpoint_every = 0;
  int cf_samples = 1;
};

void run_train(const TrainArgs& args) {
  Dataset dataset = load_dataset(args.data);
  SplitAssignment splits = load_splits(args.splits, dataset);

  TrainConfig cfg;
  cfg.epochs = args.epochs;
  cfg.batch_size = args.batch;
  cfg.learning_rate = args.lr;
  cfg.latent_dim = args.latent_dim;
  cfg.hidden_widths = args.hidden;
  cfg.seed = args.seed;
  cfg.checkpoint_interval = args.checkpoint_every;
  cfg.objective.omega1 = args.omega1;
  cfg.objective.omega2 = args.omega2;
  cfg.objective.omega_sae = args.omega;
  cfg.objective.cf_sample_count = args.cf_samples;
  if (args.objective == "vci") {
    cfg.objective.objective_kind = ObjectiveKind::kVci;
  } else if (args.objective == "sae") {
    cfg.objective.objective_kind = ObjectiveKind::kSae;
  } else {
    throw ConfigError("--objective must be vci or sae");
  }
  if (args.detach == "none") {
    cfg.objective.detach_mode = DetachMode::kNone;
  } else if (args.detach == "encoder") {
    cfg.objective.detach_mode = DetachMode::kEncoder;
  } else if (args.detach == "both") {
    cfg.objective.detach_mode = DetachMode::kBoth;
  } else {
    throw ConfigError("--detach must be none, encoder or both");
  }
  cfg.validate();

  CheckpointHook hook;
  if (args.checkpoint_every > 0) {
    hook = [&](const TrainedBundle& bundle) {
      save_checkpoint(bundle, with_suffix(args.out, "epoch" +
                                                        std::to_string(bundle.epoch)));
    };
  }
  TrainResult result = train(dataset, splits, cfg, hook, &std::cerr);
  save_checkpoint(result.bundle, args.out);
  save_trainlog(result.log, args.out + ".trainlog");

  Manifest manifest("train");
  manifest.flag("data", args.data);
  manifest.flag("splits", args.splits);
  manifest.flag("out", args.out);
  manifest.flag("objective", args.objective);
  manifest.flag("detach", args.detach);
  manifest.flag("omega1", args.omega1);
  manifest.flag("omega2", args.omega2);
  manifest.flag("omega", args.omega);
  manifest.flag("latent-dim", args.latent_dim);
  manifest.flag_list("hidden", args.hidden);
  manifest.flag("epochs", args.epochs);
  manifest.flag("lr", args.lr);
  manifest.flag("batch", args.batch);
  manifest.flag("seed", args.seed);
  manifest.flag("checkpoint-every", args.checkpoint_every);
  manifest.flag("cf-samples", args.cf_samples);
  manifest.output("checkpoint", args.out);
  manifest.output("trainlog", args.out + ".trainlog");
  manifest.write(args.out);
}

struct PredictArgs {
  std::string model;
  std::string data;
  int treatment = 0;
  int samples = 1;
  uint64_t seed = 0;
  std::string out;
};

void run_predict(const PredictArgs& args) {
  TrainedBundle bundle = load_checkpoint(args.model);
  Dataset dataset = load_dataset(args.data);
  if (args.treatment < 0 || args.treatment >= bundle.model.dims.treatment_levels) {
    throw ConfigError("--treatment " + std::to_string(args.treatment) +
                      " outside the model's levels [0, " +
                      std::to_string(bundle.model.dims.treatment_levels) + ")");
  }
  Batch batch = gather(dataset, dataset.all_rows());
  RngStream stream = RngStream::from_seed(args.seed).child("predict");
  Matrix predictions = predict_counterfactual(bundle.model, batch,
                                              args.treatment, args.samples,
                                              stream);
  std::ofstream out(args.out);
  if (!out) throw IoError("cannot open " + args.out + " for writing");
  out << "unit_index";
  for (int g = 0; g < predictions.cols(); ++g) out << ",g:" << g;
  out << "\n";
  for (int u = 0; u < predictions.rows(); ++u) {
    out << u;
    for (int g = 0; g < predictions.cols(); ++g) {
      out << "," << format_double(predictions(u, g));
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for " + args.out);

  Manifest manifest("predict");
  manifest.flag("model", args.model);
  manifest.flag("data", args.data);
  manifest.flag("treatment", args.treatment);
  manifest.flag("samples", args.samples);
  manifest.flag("seed", args.seed);
  manifest.flag("out", args.out);
  manifest.output("predictions", args.out);
  manifest.write(args.out);
}

struct EstimateArgs {
  std::string model;
  std::string data;
  int treatment = 0;
  std::string method = "robust";
  std::vector<int> covariate;  // empty = marginal over everyone
  int samples = 1;
  uint64_t seed = 0;
  std::string out;
};

void run_estimate(const EstimateArgs& args) {
  TrainedBundle bundle = load_checkpoint(args.model);
  Dataset dataset = load_dataset(args.data);
  if (args.treatment < 0 || args.treatment >= bundle.model.dims.treatment_levels) {
    throw ConfigError("--treatment outside the model's levels");
  }
  if (args.method != "mean" && args.method != "robust") {
    throw ConfigError("--method must be mean or robust");
  }
  ModelAdjustment adjustment(bundle.model);
  RngStream stream = RngStream::from_seed(args.seed).child("estimate");
  std::vector<int> rows = dataset.all_rows();

  MarginalEstimate estimate;
  if (args.method == "mean") {
    std::vector<int> subset;
    if (!args.covariate.empty()) {
      for (int u : rows) {
        std::span<const int> cov = dataset.covariate_row(u);
        if (std::equal(cov.begin(), cov.end(), args.covariate.begin(),
                       args.covariate.end())) {
          subset.push_back(u);
        }
      }
      if (subset.empty()) throw DomainError("no units with the given covariate");
      rows = subset;
    }
    Matrix predictions = adjustment.expected_outcome(dataset, rows,
                                                     args.treatment,
                                                     args.samples, stream);
    estimate = mean_marginal(predictions);
    estimate.treatment = args.treatment;
    if (!args.covariate.empty()) estimate.covariate_filter = args.covariate;
  } else if (args.covariate.empty()) {
    estimate = robust_marginal(dataset, rows, adjustment, bundle.propensity,
                               args.treatment, args.samples, stream);
  } else {
    estimate = covariate_marginal(dataset, rows, adjustment, bundle.propensity,
                                  args.covariate, args.treatment, args.samples,
                                  stream);
  }
  estimate.samples = args.samples;
  estimate.seed = args.seed;
  save_marginal_estimate(estimate, args.out);

  Manifest manifest("estimate");
  manifest.flag("model", args.model);
  manifest.flag("data", args.data);
  manifest.flag("treatment", args.treatment);
  manifest.flag("method", args.method);
  if (!args.covariate.empty()) manifest.flag_list("covariate", args.covariate);
  manifest.flag("samples", args.samples);
  manifest.flag("seed", args.seed);
  manifest.flag("out", args.out);
  manifest.output("estimate", args.out);
  manifest.output("metadata", args.out + ".meta");
  manifest.write(args.out);
}

struct EvaluateArgs {
  std::string model;
  std::string data;
  std::string splits;
  std::string out;
  int de_genes = 50;
  int control = 0;
  int samples = 1;
  uint64_t seed = 0;
  bool compare_estimators_flag = false;
  std::vector<int> checkpoints;
  int estimator_rows = 0;
};

void run_evaluate(const EvaluateArgs& args) {
  TrainedBundle bundle = load_checkpoint(args.model);
  Dataset dataset = load_dataset(args.data);
  SplitAssignment splits = load_splits(args.splits, dataset);

  EvalOptions options;
  options.n_de = args.de_genes;
  options.control_level = args.control;
  options.samples = args.samples;

  ModelAdjustment predictor(bundle.model);
  RngStream stream = RngStream::from_seed(args.seed).child("evaluate");
  EvalReport report = evaluate_ood(predictor, dataset, splits, options, stream);

  // config echo
  report.config.emplace_back("seed", std::to_string(args.seed));
  report.config.emplace_back("model_seed", std::to_string(bundle.seed));
  report.config.emplace_back("model_epoch", std::to_string(bundle.epoch));
  report.config.emplace_back("genes", std::to_string(bundle.model.dims.genes));
  report.config.emplace_back("latent_dim",
                             std::to_string(bundle.model.dims.latent_dim));
  report.config.emplace_back(
      "treatment_levels", std::to_string(bundle.model.dims.treatment_levels));

  if (args.compare_estimators_flag) {
    if (args.checkpoints.empty()) {
      throw ConfigError("--compare-estimators needs --checkpoints e1,e2,...");
    }
    std::vector<TrainedBundle> bundles;
    bundles.reserve(args.checkpoints.size());
    for (int epoch : args.checkpoints) {
      const std::string path =
          with_suffix(args.model, "epoch" + std::to_string(epoch));
      bundles.push_back(load_checkpoint(path));
    }
    std::vector<const TrainedBundle*> pointers;
    for (const auto& b : bundles) pointers.push_back(&b);
    ComparisonOptions copts;
    copts.n_de = args.de_genes;
    copts.control_level = args.control;
    copts.samples = args.samples;
    copts.max_rows = args.estimator_rows;
    RngStream cstream = RngStream::from_seed(args.seed).child("compare");
    report.estimators =
        compare_estimators(pointers, dataset, splits, copts, cstream);
  }
  run_report(report, args.out);

  Manifest manifest("evaluate");
  manifest.flag("model", args.model);
  manifest.flag("data", args.data);
  manifest.flag("splits", args.splits);
  manifest.flag("out", args.out);
  manifest.flag("de-genes", args.de_genes);
  manifest.flag("control", args.control);
  manifest.flag("samples", args.samples);
  manifest.flag("seed", args.seed);
  manifest.flag("compare-estimators", args.compare_estimators_flag ? 1 : 0);
  if (!args.checkpoints.empty()) manifest.flag_list("checkpoints", args.checkpoints);
  manifest.flag("estimator-rows", args.estimator_rows);
  manifest.output("report", args.out);
  manifest.write(args.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational counterfactual outcome toolkit"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic dataset with counterfactual truth");
  sim->add_option("--out", sim_args.out)->required();
  sim->add_option("--seed", sim_args.seed)->required();
  sim->add_option("--units", sim_args.units);
  sim->add_option("--genes", sim_args.genes);
  sim->add_option("--latent-dim", sim_args.latent_dim);
  sim->add_option("--treatments", sim_args.treatments);
  sim->add_option("--covariates", sim_args.covariates)->delimiter(',');
  sim->add_option("--confounding", sim_args.confounding);
  sim->add_option("--noise-y", sim_args.noise_y);
  sim->add_option("--noise-z", sim_args.noise_z);
  sim->add_option("--link", sim_args.link);
  sim->add_option("--mixing-seed", sim_args.mixing_seed);

  SplitArgs split_args;
  CLI::App* split = app.add_subcommand("split", "select the OOD holdout and the train/test partition");
  split->add_option("--data", split_args.data)->required();
  split->add_option("--out", split_args.out)->required();
  split->add_option("--ood-perturbations", split_args.ood_perturbations)->required();
  split->add_option("--ratio", split_args.ratio);
  split->add_option("--seed", split_args.seed)->required();

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "train a counterfactual model");
  tr->add_option("--data", train_args.data)->required();
  tr->add_option("--splits", train_args.splits)->required();
  tr->add_option("--out", train_args.out)->required();
  tr->add_option("--objective", train_args.objective);
  tr->add_option("--detach", train_args.detach);
  tr->add_option("--omega1", train_args.omega1);
  tr->add_option("--omega2", train_args.omega2);
  tr->add_option("--omega", train_args.omega);
  tr->add_option("--latent-dim", train_args.latent_dim);
  tr->add_option("--hidden", train_args.hidden)->delimiter(',');
  tr->add_option("--epochs", train_args.epochs);
  tr->add_option("--lr", train_args.lr);
  tr->add_option("--batch", train_args.batch);
  tr->add_option("--seed", train_args.seed);
  tr->add_option("--checkpoint-every", train_args.checkpoint_every);
  tr->add_option("--cf-samples", train_args.cf_samples);

  PredictArgs predict_args;
  CLI::App* pr = app.add_subcommand("predict", "predict counterfactual outcomes for every unit");
  pr->add_option("--model", predict_args.model)->required();
  pr->add_option("--data", predict_args.data)->required();
  pr->add_option("--treatment", predict_args.treatment)->required();
  pr->add_option("--samples", predict_args.samples);
  pr->add_option("--seed", predict_args.seed);
  pr->add_option("--out", predict_args.out)->required();

  EstimateArgs estimate_args;
  CLI::App* es = app.add_subcommand("estimate", "marginal treatment-effect estimation");
  es->add_option("--model", estimate_args.model)->required();
  es->add_option("--data", estimate_args.data)->required();
  es->add_option("--treatment", estimate_args.treatment)->required();
  es->add_option("--method", estimate_args.method);
  es->add_option("--covariate", estimate_args.covariate)->delimiter(',');
  es->add_option("--samples", estimate_args.samples);
  es->add_option("--seed", estimate_args.seed);
  es->add_option("--out", estimate_args.out)->required();

  EvaluateArgs evaluate_args;
  CLI::App* ev = app.add_subcommand("evaluate", "OOD evaluation report, optionally with estimator comparison");
  ev->add_option("--model", evaluate_args.model)->required();
  ev->add_option("--data", evaluate_args.data)->required();
  ev->add_option("--splits", evaluate_args.splits)->required();
  ev->add_option("--out", evaluate_args.out)->required();
  ev->add_option("--de-genes", evaluate_args.de_genes);
  ev->add_option("--control", evaluate_args.control);
  ev->add_option("--samples", evaluate_args.samples);
  ev->add_option("--seed", evaluate_args.seed);
  ev->add_flag("--compare-estimators", evaluate_args.compare_estimators_flag);
  ev->add_option("--checkpoints", evaluate_args.checkpoints)->delimiter(',');
  ev->add_option("--estimator-rows", evaluate_args.estimator_rows);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (sim->parsed()) run_simulate(sim_args);
    if (split->parsed()) run_split(split_args);
    if (tr->parsed()) run_train(train_args);
    if (pr->parsed()) run_predict(predict_args);
    if (es->parsed()) run_estimate(estimate_args);
    if (ev->parsed()) run_evaluate(evaluate_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {  // Domain/Parse/Format/Io
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
