#include "vci/dataio.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vci/error.hpp"

namespace vci {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'I', '1'};
constexpr uint32_t kCheckpointVersion = 1;
constexpr uint64_t kMaxBlockElements = 1ULL << 30;  // size-field sanity cap

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

template <typename T>
void write_le(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  if (!out) throw IoError("binary write failed");
}

template <typename T>
T read_le(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

void write_doubles(std::ostream& out, std::span<const double> values) {
  for (double v : values) write_le(out, v);
}

void read_doubles(std::istream& in, std::span<double> values) {
  for (double& v : values) v = read_le<double>(in);
}

uint64_t checked_count(uint64_t count, const char* what) {
  if (count > kMaxBlockElements) {
    throw FormatError(std::string("checkpoint declares an implausible ") +
                      what + " count: " + std::to_string(count));
  }
  return count;
}

void write_dataset_rows(std::ostream& out, const Dataset& dataset,
                        const Matrix& outcomes, const int* fixed_treatment) {
  const int m = dataset.covariate_count();
  for (int j = 0; j < m; ++j) out << (j ? "," : "") << "cov:" << j;
  out << (m ? "," : "") << "treatment";
  for (int g = 0; g < dataset.genes(); ++g) out << ",g:" << g;
  out << "\n";
  for (int u = 0; u < dataset.units(); ++u) {
    std::span<const int> cov = dataset.covariate_row(u);
    for (int j = 0; j < m; ++j) out << (j ? "," : "") << cov[static_cast<size_t>(j)];
    const int t = fixed_treatment != nullptr
                      ? *fixed_treatment
                      : dataset.treatments[static_cast<size_t>(u)];
    out << (m ? "," : "") << t;
    std::span<const double> y = outcomes.row(u);
    for (int g = 0; g < dataset.genes(); ++g) {
      out << "," << format_double(y[static_cast<size_t>(g)]);
    }
    out << "\n";
  }
}

}  // namespace

std::string format_double(double value) {
  char buffer[32];
  auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

double parse_double(std::string_view text, long line) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{} || result.ptr != end) {
    throw ParseError("invalid real value '" + std::string(text) + "'", line);
  }
  if (!std::isfinite(value)) {
    throw ParseError("non-finite value '" + std::string(text) + "'", line);
  }
  return value;
}

long parse_long(std::string_view text, long line) {
  long value = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{} || result.ptr != end) {
    throw ParseError("invalid integer value '" + std::string(text) + "'", line);
  }
  return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_dataset_rows(out, dataset, dataset.outcomes, nullptr);
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header = split_csv_line(line);
  std::vector<int> cov_columns;
  std::vector<int> gene_columns;
  int treatment_column = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    const std::string& name = header[i];
    if (name.rfind("cov:", 0) == 0) {
      cov_columns.push_back(static_cast<int>(i));
    } else if (name.rfind("g:", 0) == 0) {
      gene_columns.push_back(static_cast<int>(i));
    } else if (name == "treatment") {
      if (treatment_column >= 0) {
        throw ParseError("duplicate treatment column", 1);
      }
      treatment_column = static_cast<int>(i);
    } else {
      throw ParseError("unknown column '" + name + "'", 1);
    }
  }
  if (treatment_column < 0) {
    throw ParseError("missing required column 'treatment'", 1);
  }
  if (gene_columns.empty()) throw ParseError("no gene columns (g:*)", 1);

  std::vector<std::vector<std::string>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("row has " + std::to_string(fields.size()) +
                           " fields, header has " +
                           std::to_string(header.size()),
                       line_no);
    }
    rows.push_back(std::move(fields));
  }

  Dataset dataset;
  const int units = static_cast<int>(rows.size());
  const int m = static_cast<int>(cov_columns.size());
  const int genes = static_cast<int>(gene_columns.size());
  dataset.outcomes = Matrix(units, genes);
  dataset.treatments.resize(static_cast<size_t>(units));
  dataset.covariates.resize(static_cast<size_t>(units) * static_cast<size_t>(m));
  std::vector<int> cov_max(static_cast<size_t>(m), 0);
  int t_max = 0;
  for (int u = 0; u < units; ++u) {
    const long row_line = u + 2;
    const auto& fields = rows[static_cast<size_t>(u)];
    for (int j = 0; j < m; ++j) {
      const long code = parse_long(fields[static_cast<size_t>(cov_columns[static_cast<size_t>(j)])], row_line);
      if (code < 0) throw ParseError("negative covariate code", row_line);
      dataset.covariates[static_cast<size_t>(u) * m + static_cast<size_t>(j)] =
          static_cast<int>(code);
      cov_max[static_cast<size_t>(j)] = std::max(cov_max[static_cast<size_t>(j)], static_cast<int>(code));
    }
    const long t = parse_long(fields[static_cast<size_t>(treatment_column)], row_line);
    if (t < 0) throw ParseError("negative treatment code", row_line);
    dataset.treatments[static_cast<size_t>(u)] = static_cast<int>(t);
    t_max = std::max(t_max, static_cast<int>(t));
    for (int g = 0; g < genes; ++g) {
      dataset.outcomes(u, g) =
          parse_double(fields[static_cast<size_t>(gene_columns[static_cast<size_t>(g)])], row_line);
    }
  }
  dataset.covariate_levels.resize(static_cast<size_t>(m));
  for (int j = 0; j < m; ++j) {
    dataset.covariate_levels[static_cast<size_t>(j)] = cov_max[static_cast<size_t>(j)] + 1;
  }
  dataset.treatment_levels = t_max + 1;
  dataset.validate();
  return dataset;
}

void save_truth_files(const SimDataset& sim, const std::string& dataset_path) {
  for (size_t a = 0; a < sim.counterfactuals.size(); ++a) {
    const std::string path =
        with_suffix(dataset_path, "truth" + std::to_string(static_cast<int>(a)));
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const int level = static_cast<int>(a);
    write_dataset_rows(out, sim.data, sim.counterfactuals[a], &level);
    if (!out) throw IoError("write failed for " + path);
  }
}

void save_splits(const SplitAssignment& splits, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "unit_index,label\n";
  for (size_t u = 0; u < splits.labels.size(); ++u) {
    const char* label = splits.labels[u] == SplitLabel::kTrain  ? "train"
                        : splits.labels[u] == SplitLabel::kTest ? "test"
                                                                : "ood";
    out << u << "," << label << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

SplitAssignment load_splits(const std::string& path, const Dataset& dataset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty split file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "unit_index,label") {
    throw ParseError("split file header must be 'unit_index,label'", 1);
  }
  SplitAssignment splits;
  splits.labels.assign(static_cast<size_t>(dataset.units()), SplitLabel::kTrain);
  std::vector<bool> seen(static_cast<size_t>(dataset.units()), false);
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 2) throw ParseError("expected 'unit_index,label'", line_no);
    const long u = parse_long(fields[0], line_no);
    if (u < 0 || u >= dataset.units()) {
      throw ParseError("unit index out of range", line_no);
    }
    if (seen[static_cast<size_t>(u)]) {
      throw ParseError("duplicate unit index " + std::to_string(u), line_no);
    }
    seen[static_cast<size_t>(u)] = true;
    SplitLabel label;
    if (fields[1] == "train") {
      label = SplitLabel::kTrain;
    } else if (fields[1] == "test") {
      label = SplitLabel::kTest;
    } else if (fields[1] == "ood") {
      label = SplitLabel::kOod;
    } else {
      throw ParseError("unknown label '" + fields[1] + "'", line_no);
    }
    splits.labels[static_cast<size_t>(u)] = label;
  }
  for (size_t u = 0; u < seen.size(); ++u) {
    if (!seen[u]) {
      throw ParseError("unit " + std::to_string(u) + " missing from split file");
    }
  }
  // reconstruct held-out pairs from the labeled rows
  std::map<std::pair<std::vector<int>, int>, bool> pairs;
  for (int u = 0; u < dataset.units(); ++u) {
    if (splits.labels[static_cast<size_t>(u)] == SplitLabel::kOod) {
      std::span<const int> cov = dataset.covariate_row(u);
      pairs[{{cov.begin(), cov.end()},
             dataset.treatments[static_cast<size_t>(u)]}] = true;
    }
  }
  for (const auto& [key, unused] : pairs) splits.held_out.push_back(key);
  return splits;
}

namespace {

void write_mlp(std::ostream& out, const MlpParams& params) {
  write_le<uint32_t>(out, static_cast<uint32_t>(params.layers.size()));
  for (const MlpLayer& l : params.layers) {
    write_le<uint32_t>(out, static_cast<uint32_t>(l.weight.rows()));
    write_le<uint32_t>(out, static_cast<uint32_t>(l.weight.cols()));
    write_le<uint8_t>(out, l.activation == Activation::kRelu ? 1 : 0);
  }
  for (const MlpLayer& l : params.layers) {
    write_doubles(out, l.weight.data());
    write_doubles(out, l.bias);
  }
}

MlpParams read_mlp(std::istream& in) {
  MlpParams params;
  const uint32_t layer_count = read_le<uint32_t>(in);
  if (layer_count == 0 || layer_count > 64) {
    throw FormatError("checkpoint declares " + std::to_string(layer_count) +
                      " layers");
  }
  struct Arch {
    uint32_t rows, cols;
    uint8_t act;
  };
  std::vector<Arch> arch;
  for (uint32_t i = 0; i < layer_count; ++i) {
    Arch a{};
    a.rows = read_le<uint32_t>(in);
    a.cols = read_le<uint32_t>(in);
    a.act = read_le<uint8_t>(in);
    if (a.rows == 0 || a.cols == 0 ||
        static_cast<uint64_t>(a.rows) * a.cols > kMaxBlockElements) {
      throw FormatError("checkpoint declares an implausible layer shape");
    }
    if (a.act > 1) throw FormatError("unknown activation tag");
    arch.push_back(a);
  }
  for (const Arch& a : arch) {
    MlpLayer layer;
    layer.weight = Matrix(static_cast<int>(a.rows), static_cast<int>(a.cols));
    read_doubles(in, layer.weight.data());
    layer.bias.resize(a.rows);
    read_doubles(in, layer.bias);
    layer.activation = a.act == 1 ? Activation::kRelu : Activation::kIdentity;
    params.layers.push_back(std::move(layer));
  }
  params.validate();
  return params;
}

void write_stats(std::ostream& out, const StratifiedOutcomeModel::Stats& stats) {
  write_le<uint64_t>(out, static_cast<uint64_t>(stats.count));
  write_doubles(out, stats.mean);
  write_doubles(out, stats.var);
}

StratifiedOutcomeModel::Stats read_stats(std::istream& in, int genes) {
  StratifiedOutcomeModel::Stats stats;
  stats.count = static_cast<long>(read_le<uint64_t>(in));
  stats.mean.resize(static_cast<size_t>(genes));
  stats.var.resize(static_cast<size_t>(genes));
  read_doubles(in, stats.mean);
  read_doubles(in, stats.var);
  return stats;
}

}  // namespace

void save_checkpoint(const TrainedBundle& bundle, const std::string& path) {
  bundle.model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_le<uint32_t>(out, kCheckpointVersion);
  const ModelDims& dims = bundle.model.dims;
  write_le<uint32_t>(out, static_cast<uint32_t>(dims.genes));
  write_le<uint32_t>(out, static_cast<uint32_t>(dims.covariate_levels.size()));
  write_le<uint32_t>(out, static_cast<uint32_t>(dims.treatment_levels));
  write_le<uint32_t>(out, static_cast<uint32_t>(dims.latent_dim));
  for (int l : dims.covariate_levels) write_le<uint32_t>(out, static_cast<uint32_t>(l));
  write_le<uint64_t>(out, bundle.seed);
  write_le<uint32_t>(out, static_cast<uint32_t>(bundle.epoch));

  write_mlp(out, bundle.model.encoder);
  write_mlp(out, bundle.model.decoder);

  const auto& strat = bundle.stratified;
  write_le<double>(out, strat.variance_floor());
  write_le<uint32_t>(out, static_cast<uint32_t>(strat.genes()));
  write_le<uint64_t>(out, strat.strata().size());
  for (const auto& [key, stats] : strat.strata()) {
    for (int code : key) write_le<int32_t>(out, code);
    write_stats(out, stats);
  }
  write_le<uint64_t>(out, strat.fallback().size());
  for (const auto& [t, stats] : strat.fallback()) {
    write_le<int32_t>(out, t);
    write_stats(out, stats);
  }

  const auto& prop = bundle.propensity;
  write_le<double>(out, prop.clip_floor());
  write_le<uint32_t>(out, static_cast<uint32_t>(prop.treatment_levels()));
  write_le<uint64_t>(out, prop.table().size());
  for (const auto& [key, probs] : prop.table()) {
    for (int code : key) write_le<int32_t>(out, code);
    write_doubles(out, probs);
  }
  if (!out) throw IoError("write failed for " + path);
}

TrainedBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a VCI checkpoint (bad magic bytes)");
  }
  const uint32_t version = read_le<uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + "; this build reads version " +
                      std::to_string(kCheckpointVersion));
  }
  TrainedBundle bundle;
  ModelDims dims;
  dims.genes = static_cast<int>(read_le<uint32_t>(in));
  const uint32_t m = read_le<uint32_t>(in);
  if (m > 1024) throw FormatError("checkpoint declares too many covariates");
  dims.treatment_levels = static_cast<int>(read_le<uint32_t>(in));
  dims.latent_dim = static_cast<int>(read_le<uint32_t>(in));
  for (uint32_t j = 0; j < m; ++j) {
    dims.covariate_levels.push_back(static_cast<int>(read_le<uint32_t>(in)));
  }
  bundle.seed = read_le<uint64_t>(in);
  bundle.epoch = static_cast<int>(read_le<uint32_t>(in));

  bundle.model.dims = dims;
  bundle.model.encoder = read_mlp(in);
  bundle.model.decoder = read_mlp(in);
  bundle.model.validate();

  const double floor = read_le<double>(in);
  const uint32_t strat_genes = read_le<uint32_t>(in);
  if (static_cast<int>(strat_genes) != dims.genes) {
    throw FormatError("stratified model gene count disagrees with dims");
  }
  std::map<std::vector<int>, StratifiedOutcomeModel::Stats> strata;
  const uint64_t strata_count = checked_count(read_le<uint64_t>(in), "strata");
  for (uint64_t i = 0; i < strata_count; ++i) {
    std::vector<int> key(m + 1);
    for (auto& code : key) code = read_le<int32_t>(in);
    strata[key] = read_stats(in, dims.genes);
  }
  std::map<int, StratifiedOutcomeModel::Stats> fallback;
  const uint64_t fallback_count =
      checked_count(read_le<uint64_t>(in), "fallback");
  for (uint64_t i = 0; i < fallback_count; ++i) {
    const int t = read_le<int32_t>(in);
    fallback[t] = read_stats(in, dims.genes);
  }
  bundle.stratified = StratifiedOutcomeModel::from_parts(
      std::move(strata), std::move(fallback), floor, dims.genes);

  const double clip = read_le<double>(in);
  const uint32_t levels = read_le<uint32_t>(in);
  if (static_cast<int>(levels) != dims.treatment_levels) {
    throw FormatError("propensity level count disagrees with dims");
  }
  std::map<std::vector<int>, std::vector<double>> table;
  const uint64_t row_count = checked_count(read_le<uint64_t>(in), "propensity row");
  for (uint64_t i = 0; i < row_count; ++i) {
    std::vector<int> key(m);
    for (auto& code : key) code = read_le<int32_t>(in);
    std::vector<double> probs(levels);
    read_doubles(in, probs);
    table[key] = std::move(probs);
  }
  bundle.propensity = PropensityTable::from_parts(std::move(table), clip);

  // trailing garbage means the file is not what it claims to be
  char extra;
  if (in.read(&extra, 1)) {
    throw FormatError("checkpoint has trailing bytes");
  }
  return bundle;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const size_t dot = path.find_last_of('.');
  const size_t slash = path.find_last_of('/');
  const bool has_ext =
      dot != std::string::npos && (slash == std::string::npos || dot > slash);
  const std::string base = has_ext ? path.substr(0, dot) : path;
  const std::string ext = has_ext ? path.substr(dot) : std::string{};
  return base + "." + suffix + ext;
}

void save_trainlog(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "epoch,total,recon,cov,kl\n";
  for (size_t i = 0; i < log.epochs.size(); ++i) {
    const LossReport& loss = log.epochs[i].mean_loss;
    out << (i + 1) << "," << format_double(loss.total) << ","
        << format_double(loss.recon_term) << ","
        << format_double(loss.covariate_term) << ","
        << format_double(loss.kl_term) << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace vci
