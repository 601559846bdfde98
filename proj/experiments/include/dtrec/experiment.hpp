#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtrec/data.hpp"
#include "dtrec/metrics.hpp"
#include "dtrec/simulator.hpp"
#include "dtrec/trainer.hpp"

namespace dtrec {

// Flat "section.key" -> value view of a TOML-style config file.
using ConfigValues = std::map<std::string, std::string>;

// Sections in [brackets], "key = value" lines, '#' comments, optional
// double quotes around values. Unknown keys are rejected by
// experiment_from_values, not here.
ConfigValues parse_config(std::istream& in, const std::string& source = "<config>");
ConfigValues load_config(const std::filesystem::path& path);

// Every known key with its default value.
ConfigValues default_config();

// Defaults, then `file`, then `overrides`; unknown keys are an error.
ConfigValues resolve_config(const ConfigValues& file, const ConfigValues& overrides = {});

// Canonical text (sorted sections and keys) and its 64-bit FNV-1a hash.
std::string dump_config(const ConfigValues& values);
std::string config_hash(const ConfigValues& values);

// "section.key=value" -> one override entry.
std::pair<std::string, std::string> parse_assignment(const std::string& text);

enum class Method { pop, mcf, ncf, ipw_mf, dt };

std::string to_string(Method method);
Method parse_method(const std::string& name);

struct PropensityConfig {
  double exponent = 0.5;
  double clip = 0.1;

  void validate() const;
};

struct DatasetSpec {
  // "file": interactions (and optional ground truth) from disk;
  // "simulate": semi-synthetic clicks from a rating matrix, generated
  // in memory. The rating matrix is `path`, or the seeded toy matrix when
  // `path` is empty.
  std::string source = "simulate";
  std::string path;
  std::string schema = "automatic";
  std::string truth;  // ground-truth TSV for "file" sources
  int min_count = 1;
  bool drop_short_users = true;
  std::int32_t toy_users = 200;
  std::int32_t toy_items = 300;
  std::uint64_t toy_seed = 7;
  SimulationConfig sim;
};

struct ExperimentConfig {
  DatasetSpec data;
  Method method = Method::dt;
  ModelKinds kinds;
  GdaConfig gda;
  ErmConfig erm;
  PropensityConfig propensity;
  EvalConfig eval;
  int n_runs = 1;
  std::filesystem::path outdir = "runs";
  std::uint64_t seed_base = 0;
  bool write_weights = true;
  ConfigValues values;  // fully resolved
  std::string hash;
};

ExperimentConfig experiment_from_values(const ConfigValues& resolved);

struct LoadedData {
  SplitDataset split;
  std::optional<RelevanceTable> truth;
  std::optional<RelevanceTable> exposure;
  std::string description;
};

LoadedData load_dataset(const DatasetSpec& spec);

// Scores every item by its train positive count.
Eigen::VectorXd popularity_scores(const SplitDataset& split);
MetricsReport run_pop_baseline(const SplitDataset& split, const RelevanceTable* truth,
                               const EvalConfig& cfg);

// Per-item loss weights 1 / max(clip, (count / max_count)^exponent).
std::vector<double> ipw_item_weights(const SplitDataset& split, const PropensityConfig& cfg);
TrainedModel train_ipw_mf(const SplitDataset& split, const ErmConfig& erm,
                          const PropensityConfig& cfg);

struct RunRecord {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  bool ok = false;
  std::string error;
  MetricsReport report;
  MetricsReport validation;
  int best_epoch = 0;
  bool diverged = false;
};

struct ExperimentSummary {
  std::string method;
  std::string label;  // e.g. "DT-M/M/M" or "ablation: no transport"
  std::vector<RunRecord> runs;
  MetricsReport mean;
  MetricsReport stddev;
  MetricsReport validation_mean;
  int n_ok = 0;
};

nlohmann::json to_json(const ExperimentSummary& summary);

// One full pipeline per seed seed_base .. seed_base + n_runs - 1. Every run
// writes <outdir>/<method>/<seed>/{report.json, train.log.jsonl,
// checkpoint.bin, weights.tsv}; failed runs keep what they produced and
// are recorded, not thrown.
ExperimentSummary run_experiment(const ExperimentConfig& cfg);
ExperimentSummary run_experiment(const ExperimentConfig& cfg, const LoadedData& data);

struct SweepAxis {
  std::string key;  // "gda.lambda", "gda.step_ratio", "ipw.clip", ...
  std::vector<std::string> values;
};

// "gda.lambda=0,0.1,0.3" -> axis.
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepCell {
  std::map<std::string, std::string> setting;
  bool ok = false;
  std::string error;
  ExperimentSummary summary;
};

struct SweepTable {
  std::vector<SweepCell> cells;
};

// Cross product of the axes; a failing cell is marked and the sweep goes on.
SweepTable run_sweep(const ConfigValues& base, const std::vector<SweepAxis>& axes);
nlohmann::json to_json(const SweepTable& table);
std::string format_sweep(const SweepTable& table);

}  // namespace dtrec
