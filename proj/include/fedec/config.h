#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedec/data.h"
#include "fedec/nn.h"
#include "fedec/orchestrator.h"

namespace fedec {

/// Configuration problem tied to one key (`section.name`).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message),
        key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class DataSourceKind { kSynthetic, kCsv };

struct DataSource {
  DataSourceKind kind = DataSourceKind::kSynthetic;
  std::size_t classes = 5;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  double separation = 3.0;
  std::filesystem::path csv_path;
  std::optional<double> csv_max_value;
  bool operator==(const DataSource&) const = default;
};

struct OutputOptions {
  std::filesystem::path dir;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  bool dump_embeddings = false;
  std::size_t embedding_layer = 0;
  bool wall_clock = false;
  bool operator==(const OutputOptions&) const = default;
};

struct ExperimentConfig {
  DataSource data;
  std::size_t classes_per_client = 2;
  double train_fraction = 0.8;
  RoundConfig round;
  std::vector<std::size_t> hidden{32};
  OutputOptions output;

  /// dim, hidden..., classes. For CSV sources `input_dim` comes from the file.
  NetworkSpec network(std::size_t input_dim) const;
  PartitionSpec partition() const;
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Sectioned `key = value` text. Overrides use `section.key` names and win
/// over the file. Unknown keys, malformed values and missing required keys
/// throw ConfigError naming the key.
ExperimentConfig parse_config_text(const std::string& text, const Overrides& overrides = {});
ExperimentConfig parse_config(const std::optional<std::filesystem::path>& file,
                              const Overrides& overrides = {});

/// Fully resolved config in the same text format; re-parses to an equal config.
std::string to_config_text(const ExperimentConfig& config);

struct RunArtifacts {
  ExperimentResult result;
  PartitionSummary partition;
  NetworkSpec network;
};

/// Builds the dataset and partition and runs the experiment without writing
/// anything.
RunArtifacts execute(const ExperimentConfig& config);

/// Full run with persisted artifacts under config.output.dir. Returns the
/// process exit status (0 ok, 1 config error, 2 runtime error) and reports
/// failures to stderr as a JSON object.
int run(const ExperimentConfig& config);

struct ComparisonRow {
  std::string strategy;
  double alpha = 0.0;
  double mean_final10_acc = 0.0;
  double std_final10_acc = 0.0;
  double final_personalized_acc = 0.0;
  double std_personalized_acc = 0.0;
  std::vector<double> final10_per_seed;
  std::vector<double> personalized_per_seed;
  std::vector<std::uint64_t> partition_hash_per_seed;
};

/// Strategy x seed cross product. alpha is applied to constrained strategies
/// and zeroed for the others. Writes comparison.csv and summary.json when
/// `write_outputs` is set.
std::vector<ComparisonRow> compare(const ExperimentConfig& config,
                                   const std::vector<Strategy>& strategies,
                                   const std::vector<std::uint64_t>& seeds,
                                   bool write_outputs = true);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace fedec
