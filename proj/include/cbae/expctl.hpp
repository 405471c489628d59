#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbae/community.hpp"
#include "cbae/data.hpp"
#include "cbae/probes.hpp"

namespace cbae {

struct DatasetSpec {
  enum class Kind { kSynthetic, kIdx };
  Kind kind = Kind::kSynthetic;
  SyntheticSpec synthetic;
  // IDX source.
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t num_classes = 10;
  std::size_t downsample = 1;
  // Keep the first `limit` examples; 0 keeps all.
  std::size_t limit = 0;
  std::filesystem::path feature_norms;
  // Names for labels 0..num_classes-1; defaults to "0", "1", ...
  std::vector<std::string> concept_names;
};

Dataset load_dataset(const DatasetSpec& spec);

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  DatasetSpec dataset;
  std::vector<std::size_t> community_sizes = {1, 2, 4};
  std::vector<double> entropy_weights = {0.1};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  // entropy_weight and base_seed are set per run from the lists above.
  TrainConfig train;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> hidden = {64};
  ProbeConfig probe;
  std::filesystem::path output_dir;
  bool save_checkpoints = true;

  // Throws ConfigError; called before any compute.
  void validate() const;
  // Fully resolved config as pretty-printed JSON.
  std::string to_json() const;
  // Keys absent from the text keep their defaults; unknown keys are an
  // error. Relative paths resolve against base_dir.
  static ExperimentConfig parse(std::string_view json_text,
                                const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Output directory used when neither the config nor the CLI names one:
// $CBAE_OUTPUT_ROOT/<experiment_id>, or runs/<experiment_id>.
std::filesystem::path default_output_dir(const std::string& experiment_id);

struct RunOptions {
  std::size_t workers = 1;
  // Added to every seed in the config.
  std::uint64_t seed_offset = 0;
};

struct MetricStats {
  double mean = 0.0;
  double max = 0.0;
  // Sample standard deviation across seeds (0 for a single seed).
  double std = 0.0;
  std::size_t count = 0;
};

struct SummaryEntry {
  std::size_t community_size = 0;
  double entropy_weight = 0.0;
  std::vector<std::uint64_t> seeds;
  // Keyed by metric name; only metrics present in every final record.
  std::map<std::string, MetricStats> metrics;
};

struct FailedRun {
  std::size_t community_size = 0;
  double entropy_weight = 0.0;
  std::uint64_t seed = 0;
  std::string kind;
  std::string message;
};

struct SeedVarianceFlag {
  double entropy_weight = 0.0;
  std::string metric;
  std::size_t smallest_k = 0;
  std::size_t largest_k = 0;
  double std_smallest_k = 0.0;
  double std_largest_k = 0.0;
  // std at the largest community <= std at the smallest.
  bool larger_community_less_variable = false;
};

struct SweepSummary {
  std::vector<SummaryEntry> entries;
  std::vector<FailedRun> failures;
  std::vector<SeedVarianceFlag> seed_variance;

  const SummaryEntry* find(std::size_t k, double entropy_weight) const;
  std::string to_json() const;
};

// Metric names accepted by summaries and plot export.
const std::vector<std::string>& metric_names();
std::optional<double> metric_value(const MetricsRecord& record, std::string_view name);

// Summary over the final (highest-step) record of every run.
SweepSummary summarize(const std::vector<MetricsRecord>& records,
                       std::vector<FailedRun> failures = {});

// One JSON object per line, fixed key order, no wall-clock fields.
std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_json_line(std::string_view line);

struct MetricsLog {
  std::vector<MetricsRecord> records;
  // Set when the file ended in an incomplete line, which was skipped.
  bool truncated = false;
};
MetricsLog read_metrics_log(const std::filesystem::path& path);
// Same, over in-memory text; source names the input in error messages.
MetricsLog parse_metrics_log(std::string_view text, const std::string& source);

// Trains every (community size, entropy weight, seed) cell, probing at each
// evaluation step. Writes config.json, metrics.jsonl (cells in sweep order,
// one flushed line per record), timing.jsonl, summary.json and optional
// checkpoints under config.output_dir.
SweepSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// Seeds for an ensemble: the config's seeds, continued with max+1, max+2, ...
std::vector<std::uint64_t> ensemble_seeds(const std::vector<std::uint64_t>& seeds,
                                          std::size_t ensemble_size);

// `ensemble_size` independent single autoencoders (community size 1) with
// distinct seeds and the same step budget; the control without partner
// rotation. Same outputs as run_experiment.
SweepSummary run_ensemble_baseline(const ExperimentConfig& config, std::size_t ensemble_size,
                                   const RunOptions& options = {});

// Table of (x, y, K, seed) for records that carry both metrics, sorted by
// lambda, then K, then x. Header is exactly "<x>,<y>,K,seed".
void export_plot_data(const std::filesystem::path& log_path, const std::string& x_metric,
                      const std::string& y_metric, const std::filesystem::path& out_path);
std::string plot_table(const std::vector<MetricsRecord>& records, const std::string& x_metric,
                       const std::string& y_metric);

}  // namespace cbae
