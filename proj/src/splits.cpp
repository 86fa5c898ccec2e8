#include "vci/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "vci/error.hpp"

namespace vci {

std::vector<int> SplitAssignment::rows_with(SplitLabel label) const {
  std::vector<int> rows;
  for (size_t u = 0; u < labels.size(); ++u) {
    if (labels[u] == label) rows.push_back(static_cast<int>(u));
  }
  return rows;
}

void SplitAssignment::validate(const Dataset& dataset) const {
  if (labels.size() != static_cast<size_t>(dataset.units())) {
    throw ShapeError("split: label count " + std::to_string(labels.size()) +
                     " does not match units " + std::to_string(dataset.units()));
  }
  // every unit matching a held-out pair must be labeled ood, and vice versa
  std::set<std::pair<std::vector<int>, int>> held(held_out.begin(),
                                                  held_out.end());
  for (int u = 0; u < dataset.units(); ++u) {
    std::span<const int> cov = dataset.covariate_row(u);
    std::pair<std::vector<int>, int> key{{cov.begin(), cov.end()},
                                         dataset.treatments[static_cast<size_t>(u)]};
    const bool matches = held.count(key) > 0;
    const bool is_ood = labels[static_cast<size_t>(u)] == SplitLabel::kOod;
    if (matches != is_ood) {
      throw DomainError("split: unit " + std::to_string(u) +
                        " label inconsistent with held-out pairs");
    }
  }
}

double pseudobulk_distance(const Dataset& dataset, int level) {
  if (level < 0 || level >= dataset.treatment_levels) {
    throw DomainError("pseudobulk_distance: treatment level " +
                      std::to_string(level) + " out of range");
  }
  const int genes = dataset.genes();
  std::vector<double> in_sum(static_cast<size_t>(genes), 0.0);
  std::vector<double> out_sum(static_cast<size_t>(genes), 0.0);
  long in_count = 0, out_count = 0;
  for (int u = 0; u < dataset.units(); ++u) {
    std::span<const double> y = dataset.outcomes.row(u);
    if (dataset.treatments[static_cast<size_t>(u)] == level) {
      for (int g = 0; g < genes; ++g) in_sum[static_cast<size_t>(g)] += y[static_cast<size_t>(g)];
      ++in_count;
    } else {
      for (int g = 0; g < genes; ++g) out_sum[static_cast<size_t>(g)] += y[static_cast<size_t>(g)];
      ++out_count;
    }
  }
  if (in_count == 0) {
    throw DomainError("pseudobulk_distance: no units with treatment " +
                      std::to_string(level));
  }
  if (out_count == 0) {
    throw DomainError("pseudobulk_distance: no units outside treatment " +
                      std::to_string(level));
  }
  double acc = 0.0;
  for (int g = 0; g < genes; ++g) {
    const double diff = in_sum[static_cast<size_t>(g)] / in_count -
                        out_sum[static_cast<size_t>(g)] / out_count;
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

SplitAssignment select_ood(const Dataset& dataset, int k, RngStream& stream,
                           double test_fraction) {
  if (k < 1 || k >= dataset.treatment_levels) {
    throw ConfigError("select_ood: k must be in [1, treatment levels)");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("select_ood: test fraction must be in (0, 1)");
  }
  // rank levels by distance, descending; ties broken by level index
  std::vector<std::pair<double, int>> ranked;
  for (int a = 0; a < dataset.treatment_levels; ++a) {
    ranked.emplace_back(pseudobulk_distance(dataset, a), a);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  std::set<int> held_levels;
  for (int i = 0; i < k; ++i) held_levels.insert(ranked[static_cast<size_t>(i)].second);

  // observed covariate tuples, in deterministic (sorted) order
  std::set<std::vector<int>> tuples;
  for (int u = 0; u < dataset.units(); ++u) {
    std::span<const int> cov = dataset.covariate_row(u);
    tuples.insert(std::vector<int>(cov.begin(), cov.end()));
  }
  std::vector<std::vector<int>> tuple_list(tuples.begin(), tuples.end());
  RngStream pick_stream = stream.child("ood-covariate");
  const std::vector<int> chosen =
      tuple_list[pick_stream.uniform_int(tuple_list.size())];

  SplitAssignment split;
  split.labels.assign(static_cast<size_t>(dataset.units()), SplitLabel::kTrain);
  for (int a : held_levels) split.held_out.emplace_back(chosen, a);

  std::vector<int> remaining;
  for (int u = 0; u < dataset.units(); ++u) {
    std::span<const int> cov = dataset.covariate_row(u);
    const bool cov_match = std::equal(cov.begin(), cov.end(), chosen.begin());
    if (cov_match && held_levels.count(dataset.treatments[static_cast<size_t>(u)]) > 0) {
      split.labels[static_cast<size_t>(u)] = SplitLabel::kOod;
    } else {
      remaining.push_back(u);
    }
  }
  // 4:1 split of the remainder: shuffle, first fifth is the test set
  RngStream shuffle_stream = stream.child("train-test");
  for (size_t i = remaining.size(); i > 1; --i) {
    const size_t j = shuffle_stream.uniform_int(i);
    std::swap(remaining[i - 1], remaining[j]);
  }
  const size_t test_count =
      static_cast<size_t>(std::floor(test_fraction * static_cast<double>(remaining.size())));
  for (size_t i = 0; i < test_count; ++i) {
    split.labels[static_cast<size_t>(remaining[i])] = SplitLabel::kTest;
  }
  return split;
}

}  // namespace vci
