#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vci/dataset.hpp"
#include "vci/sim.hpp"
#include "vci/splits.hpp"
#include "vci/trainer.hpp"

namespace vci {

// Shortest decimal that round-trips the exact double.
std::string format_double(double value);
double parse_double(std::string_view text, long line = 0);
long parse_long(std::string_view text, long line = 0);
std::vector<std::string> split_csv_line(std::string_view line);

// Dataset text format: comma-separated, header row of `cov:<i>` columns,
// one `treatment` column and `g:<i>` columns, then one row per unit with
// integer codes and shortest-round-trip reals.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Split file: `unit_index,label` rows with label in {train, test, ood}.
// Loading reconstructs the held-out (covariate, perturbation) pairs from the
// dataset's OOD rows.
void save_splits(const SplitAssignment& splits, const std::string& path);
SplitAssignment load_splits(const std::string& path, const Dataset& dataset);

// Binary checkpoint: magic `VCI1`, version, dims, architecture descriptor,
// parameter blocks as little-endian doubles, stratified model, propensity
// table, seed and epoch. Loaders validate declared sizes before allocating.
void save_checkpoint(const TrainedBundle& bundle, const std::string& path);
TrainedBundle load_checkpoint(const std::string& path);

// Sibling truth files for a simulated dataset: the dataset format, one file
// per treatment level, gene columns only (plus covariate/treatment columns
// mirroring the factual file for self-description).
void save_truth_files(const SimDataset& sim, const std::string& dataset_path);

// Per-epoch loss aggregates as DSV. Wall-clock timing is deliberately not
// persisted so the artifact is reproducible byte for byte.
void save_trainlog(const TrainLog& log, const std::string& path);

// `<base>.<suffix>` inserted before the extension: with_suffix("a/b.csv",
// "truth0") == "a/b.truth0.csv".
std::string with_suffix(const std::string& path, const std::string& suffix);

}  // namespace vci
