#include "vci/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "vci/dataio.hpp"
#include "vci/error.hpp"

namespace vci {
namespace {

std::string join_tuple(std::span<const int> tuple) {
  std::string out;
  for (size_t i = 0; i < tuple.size(); ++i) {
    if (i > 0) out += "|";
    out += std::to_string(tuple[i]);
  }
  return out;
}

std::vector<int> parse_tuple(std::string_view text, long line) {
  std::vector<int> out;
  size_t start = 0;
  while (true) {
    const size_t bar = text.find('|', start);
    const std::string_view field = bar == std::string_view::npos
                                       ? text.substr(start)
                                       : text.substr(start, bar - start);
    out.push_back(static_cast<int>(parse_long(field, line)));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return out;
}

std::vector<double> subset(std::span<const double> values,
                           std::span<const int> indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(values[static_cast<size_t>(i)]);
  return out;
}

std::vector<double> mean_of_rows(const Dataset& dataset,
                                 std::span<const int> rows) {
  std::vector<double> sum(static_cast<size_t>(dataset.genes()), 0.0);
  for (int u : rows) {
    std::span<const double> y = dataset.outcomes.row(u);
    for (int g = 0; g < dataset.genes(); ++g) sum[static_cast<size_t>(g)] += y[static_cast<size_t>(g)];
  }
  for (double& v : sum) v /= static_cast<double>(rows.size());
  return sum;
}

// Adjustment view over precomputed predictions for a fixed row set.
class PrecomputedAdjustment final : public OutcomeAdjustment {
 public:
  PrecomputedAdjustment(const Matrix& predictions, std::span<const int> rows)
      : predictions_(&predictions), rows_(rows.begin(), rows.end()) {}

  Matrix expected_outcome(const Dataset&, std::span<const int> rows, int,
                          int, RngStream&) const override {
    if (!std::equal(rows.begin(), rows.end(), rows_.begin(), rows_.end())) {
      throw DomainError("precomputed adjustment queried with different rows");
    }
    return *predictions_;
  }

 private:
  const Matrix* predictions_;
  std::vector<int> rows_;
};

}  // namespace

std::vector<int> select_de_genes(const Dataset& dataset, int level, int control,
                                 int n_de) {
  if (n_de < 1 || n_de > dataset.genes()) {
    throw ConfigError("select_de_genes: n_de must be in [1, genes]");
  }
  auto level_mean = [&](int t) {
    std::vector<int> rows;
    for (int u = 0; u < dataset.units(); ++u) {
      if (dataset.treatments[static_cast<size_t>(u)] == t) rows.push_back(u);
    }
    if (rows.empty()) {
      throw DomainError("select_de_genes: no units with treatment " +
                        std::to_string(t));
    }
    return mean_of_rows(dataset, rows);
  };
  const std::vector<double> target = level_mean(level);
  const std::vector<double> reference = level_mean(control);
  std::vector<std::pair<double, int>> scored;
  for (int g = 0; g < dataset.genes(); ++g) {
    scored.emplace_back(
        std::abs(target[static_cast<size_t>(g)] - reference[static_cast<size_t>(g)]), g);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n_de));
  for (int i = 0; i < n_de; ++i) out.push_back(scored[static_cast<size_t>(i)].second);
  return out;
}

double r2_average(std::span<const double> pred_mean,
                  std::span<const double> true_mean) {
  if (pred_mean.size() != true_mean.size()) {
    throw ShapeError("r2_average: length mismatch");
  }
  if (pred_mean.size() < 2) {
    throw DomainError("r2_average: needs at least 2 entries");
  }
  double mean = 0.0;
  for (double v : true_mean) mean += v;
  mean /= static_cast<double>(true_mean.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < true_mean.size(); ++i) {
    const double r = true_mean[i] - pred_mean[i];
    const double d = true_mean[i] - mean;
    ss_res += r * r;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) {
    throw DomainError("r2_average: target has zero variance");
  }
  return 1.0 - ss_res / ss_tot;
}

EvalReport evaluate_ood(const OutcomeAdjustment& predictor,
                        const Dataset& dataset, const SplitAssignment& splits,
                        const EvalOptions& options, RngStream& stream) {
  if (splits.held_out.empty()) {
    throw ConfigError("evaluate_ood: splits carry no held-out pairs");
  }
  EvalReport report;
  report.config.emplace_back("de_genes", std::to_string(options.n_de));
  report.config.emplace_back("control_level",
                             std::to_string(options.control_level));
  report.config.emplace_back("samples", std::to_string(options.samples));

  double sum_all = 0.0, sum_de = 0.0;
  uint64_t cell_index = 0;
  for (const auto& [cov, level] : splits.held_out) {
    RngStream cell_stream = stream.child(cell_index++);
    std::vector<int> test_rows;
    std::vector<int> ood_rows;
    for (int u = 0; u < dataset.units(); ++u) {
      std::span<const int> row_cov = dataset.covariate_row(u);
      if (!std::equal(row_cov.begin(), row_cov.end(), cov.begin(), cov.end())) {
        continue;
      }
      if (splits.labels[static_cast<size_t>(u)] == SplitLabel::kTest) {
        test_rows.push_back(u);
      } else if (splits.labels[static_cast<size_t>(u)] == SplitLabel::kOod &&
                 dataset.treatments[static_cast<size_t>(u)] == level) {
        ood_rows.push_back(u);
      }
    }
    if (test_rows.empty() || ood_rows.empty()) {
      report.cells_skipped += 1;
      continue;
    }
    try {
      Matrix predictions = predictor.expected_outcome(
          dataset, test_rows, level, options.samples, cell_stream);
      std::vector<double> pred_mean = column_means(predictions);
      std::vector<double> true_mean = mean_of_rows(dataset, ood_rows);
      std::vector<int> de =
          select_de_genes(dataset, level, options.control_level, options.n_de);
      EvalCell cell;
      cell.covariate = cov;
      cell.treatment = level;
      cell.n_test = static_cast<long>(test_rows.size());
      cell.n_ood = static_cast<long>(ood_rows.size());
      cell.r2_all = r2_average(pred_mean, true_mean);
      cell.r2_de = r2_average(subset(pred_mean, de), subset(true_mean, de));
      report.cells.push_back(cell);
      sum_all += cell.r2_all;
      sum_de += cell.r2_de;
      report.cells_evaluated += 1;
    } catch (const DomainError&) {
      report.cells_skipped += 1;
    }
  }
  if (report.cells_evaluated > 0) {
    report.avg_r2_all = sum_all / static_cast<double>(report.cells_evaluated);
    report.avg_r2_de = sum_de / static_cast<double>(report.cells_evaluated);
  }
  return report;
}

std::vector<EstimatorRow> compare_estimators(
    std::span<const TrainedBundle* const> checkpoints, const Dataset& dataset,
    const SplitAssignment& splits, const ComparisonOptions& options,
    RngStream& stream) {
  if (checkpoints.empty()) {
    throw ConfigError("compare_estimators: no checkpoints supplied");
  }
  std::vector<int> train_rows = splits.rows_with(SplitLabel::kTrain);
  std::vector<int> test_rows = splits.rows_with(SplitLabel::kTest);
  if (train_rows.empty() || test_rows.empty()) {
    throw ConfigError("compare_estimators: empty train or test split");
  }
  std::vector<int> est_rows = train_rows;
  if (options.max_rows > 0 &&
      static_cast<int>(est_rows.size()) > options.max_rows) {
    RngStream sub = stream.child("row-subsample");
    for (size_t i = est_rows.size(); i > 1; --i) {
      const size_t j = sub.uniform_int(i);
      std::swap(est_rows[i - 1], est_rows[j]);
    }
    est_rows.resize(static_cast<size_t>(options.max_rows));
    std::sort(est_rows.begin(), est_rows.end());
  }

  std::vector<int> levels;
  if (options.treatment.has_value()) {
    levels.push_back(*options.treatment);
  } else {
    for (int a = 0; a < dataset.treatment_levels; ++a) levels.push_back(a);
  }

  std::vector<EstimatorRow> rows;
  uint64_t predict_id = 0;
  for (const TrainedBundle* bundle : checkpoints) {
    ModelAdjustment adjustment(bundle->model);
    double mean_all_sum = 0.0, mean_de_sum = 0.0;
    double robust_all_sum = 0.0, robust_de_sum = 0.0;
    int levels_used = 0;
    for (int a : levels) {
      std::vector<int> target_rows;
      for (int u : test_rows) {
        if (dataset.treatments[static_cast<size_t>(u)] == a) target_rows.push_back(u);
      }
      if (target_rows.empty()) continue;
      std::vector<double> target = mean_of_rows(dataset, target_rows);
      std::vector<int> de =
          select_de_genes(dataset, a, options.control_level, options.n_de);

      RngStream level_stream = stream.child(predict_id++);
      Matrix predictions = adjustment.expected_outcome(
          dataset, est_rows, a, options.samples, level_stream);
      PrecomputedAdjustment precomputed(predictions, est_rows);
      RngStream unused = level_stream.child("precomputed");
      MarginalEstimate robust =
          robust_marginal(dataset, est_rows, precomputed, bundle->propensity, a,
                          options.samples, unused);
      MarginalEstimate mean = mean_marginal(predictions);

      EstimatorRow mean_row{bundle->epoch, "mean", a, 0.0, 0.0};
      EstimatorRow robust_row{bundle->epoch, "robust", a, 0.0, 0.0};
      try {
        mean_row.r2_all = r2_average(mean.psi_hat, target);
        robust_row.r2_all = r2_average(robust.psi_hat, target);
        mean_row.r2_de =
            r2_average(subset(mean.psi_hat, de), subset(target, de));
        robust_row.r2_de =
            r2_average(subset(robust.psi_hat, de), subset(target, de));
      } catch (const DomainError&) {
        continue;  // degenerate target; skip the level
      }
      rows.push_back(mean_row);
      rows.push_back(robust_row);
      mean_all_sum += mean_row.r2_all;
      mean_de_sum += mean_row.r2_de;
      robust_all_sum += robust_row.r2_all;
      robust_de_sum += robust_row.r2_de;
      ++levels_used;
    }
    if (levels_used > 0) {
      rows.push_back({bundle->epoch, "mean", -1, mean_all_sum / levels_used,
                      mean_de_sum / levels_used});
      rows.push_back({bundle->epoch, "robust", -1, robust_all_sum / levels_used,
                      robust_de_sum / levels_used});
    }
  }
  return rows;
}

std::vector<ComparisonSummary> summarize_comparisons(
    const std::vector<std::vector<EstimatorRow>>& runs) {
  std::map<std::tuple<int, std::string, int>, std::vector<std::pair<double, double>>>
      grouped;
  for (const auto& run : runs) {
    for (const EstimatorRow& row : run) {
      grouped[{row.epoch, row.method, row.treatment}].emplace_back(row.r2_all,
                                                                   row.r2_de);
    }
  }
  std::vector<ComparisonSummary> out;
  for (const auto& [key, values] : grouped) {
    ComparisonSummary s;
    s.epoch = std::get<0>(key);
    s.method = std::get<1>(key);
    s.treatment = std::get<2>(key);
    const double n = static_cast<double>(values.size());
    for (const auto& [all, de] : values) {
      s.mean_r2_all += all;
      s.mean_r2_de += de;
    }
    s.mean_r2_all /= n;
    s.mean_r2_de /= n;
    if (values.size() > 1) {
      double va = 0.0, vd = 0.0;
      for (const auto& [all, de] : values) {
        va += (all - s.mean_r2_all) * (all - s.mean_r2_all);
        vd += (de - s.mean_r2_de) * (de - s.mean_r2_de);
      }
      s.sd_r2_all = std::sqrt(va / (n - 1.0));
      s.sd_r2_de = std::sqrt(vd / (n - 1.0));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void run_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# vci evaluation report\n";
  for (const auto& [key, value] : report.config) {
    out << key << " = " << value << "\n";
  }
  out << "\n[cells]\n";
  out << "covariate,treatment,n_test,n_ood,r2_all,r2_de\n";
  for (const EvalCell& cell : report.cells) {
    out << join_tuple(cell.covariate) << "," << cell.treatment << ","
        << cell.n_test << "," << cell.n_ood << ","
        << format_double(cell.r2_all) << "," << format_double(cell.r2_de)
        << "\n";
  }
  out << "\n[summary]\n";
  out << "metric,value\n";
  out << "avg_r2_all," << format_double(report.avg_r2_all) << "\n";
  out << "avg_r2_de," << format_double(report.avg_r2_de) << "\n";
  out << "cells_evaluated," << report.cells_evaluated << "\n";
  out << "cells_skipped," << report.cells_skipped << "\n";
  if (!report.estimators.empty()) {
    out << "\n[estimators]\n";
    out << "checkpoint_epoch,method,treatment,r2_all,r2_de\n";
    for (const EstimatorRow& row : report.estimators) {
      out << row.epoch << "," << row.method << ",";
      if (row.treatment < 0) {
        out << "all";
      } else {
        out << row.treatment;
      }
      out << "," << format_double(row.r2_all) << ","
          << format_double(row.r2_de) << "\n";
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  EvalReport report;
  std::string line;
  std::string section;
  bool saw_section_header = false;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      saw_section_header = false;
      continue;
    }
    if (section.empty()) {
      const size_t eq = line.find(" = ");
      if (eq == std::string::npos) {
        throw ParseError("expected 'key = value' in report header", line_no);
      }
      report.config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
      continue;
    }
    if (!saw_section_header) {
      saw_section_header = true;  // column header line
      continue;
    }
    std::vector<std::string> fields = split_csv_line(line);
    if (section == "cells") {
      if (fields.size() != 6) throw ParseError("bad [cells] row", line_no);
      EvalCell cell;
      cell.covariate = parse_tuple(fields[0], line_no);
      cell.treatment = static_cast<int>(parse_long(fields[1], line_no));
      cell.n_test = parse_long(fields[2], line_no);
      cell.n_ood = parse_long(fields[3], line_no);
      cell.r2_all = parse_double(fields[4], line_no);
      cell.r2_de = parse_double(fields[5], line_no);
      report.cells.push_back(std::move(cell));
    } else if (section == "summary") {
      if (fields.size() != 2) throw ParseError("bad [summary] row", line_no);
      if (fields[0] == "avg_r2_all") {
        report.avg_r2_all = parse_double(fields[1], line_no);
      } else if (fields[0] == "avg_r2_de") {
        report.avg_r2_de = parse_double(fields[1], line_no);
      } else if (fields[0] == "cells_evaluated") {
        report.cells_evaluated = parse_long(fields[1], line_no);
      } else if (fields[0] == "cells_skipped") {
        report.cells_skipped = parse_long(fields[1], line_no);
      } else {
        throw ParseError("unknown summary metric '" + fields[0] + "'", line_no);
      }
    } else if (section == "estimators") {
      if (fields.size() != 5) throw ParseError("bad [estimators] row", line_no);
      EstimatorRow row;
      row.epoch = static_cast<int>(parse_long(fields[0], line_no));
      row.method = fields[1];
      row.treatment =
          fields[2] == "all" ? -1 : static_cast<int>(parse_long(fields[2], line_no));
      row.r2_all = parse_double(fields[3], line_no);
      row.r2_de = parse_double(fields[4], line_no);
      report.estimators.push_back(std::move(row));
    } else {
      throw ParseError("unknown section [" + section + "]", line_no);
    }
  }
  return report;
}

}  // namespace vci
