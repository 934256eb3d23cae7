#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedec/nn.h"

namespace fedec {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pooled labeled examples. Features are stored row-major, one row per example.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  void validate() const;

  /// Rows picked by index, in the given order.
  LabeledDataset subset(const std::vector<std::size_t>& rows) const;
  Batch as_batch() const { return Batch{features, labels}; }
  bool operator==(const LabeledDataset&) const = default;
};

struct PartitionSpec {
  std::size_t clients = 0;
  std::size_t classes_per_client = 0;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  /// Shards each class is cut into.
  std::size_t shards_per_class(std::size_t classes) const;
  void validate(std::size_t classes) const;
};

struct ClientShard {
  std::size_t client_id = 0;
  LabeledDataset train;
  LabeledDataset test;
  // Row indices into the pooled dataset.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  // Class of each shard assigned to this client, in allocation order.
  std::vector<int> shard_classes;
};

struct PartitionSummary {
  std::size_t clients = 0;
  std::size_t classes_per_client = 0;
  std::size_t shards_per_class = 0;
  std::vector<std::size_t> shard_size;   // per class
  std::vector<std::size_t> dropped;      // per class
  std::size_t total_dropped = 0;
  std::vector<std::vector<int>> assignment;  // client -> shard classes
  std::uint64_t hash = 0;                    // FNV-1a over assigned row indices

  std::string to_json() const;
};

struct Partition {
  std::vector<ClientShard> shards;
  PartitionSummary summary;
};

/// Class-shard non-IID split: every class is cut into S = N*k/classes equal
/// shards and each client draws k shards (the same class may be drawn twice)
/// such that every class is handed out exactly S times.
Partition shard_partition(const LabeledDataset& dataset, const PartitionSpec& spec);

/// Isotropic unit-variance Gaussian clusters whose means are pairwise at least
/// `separation` apart.
LabeledDataset synth_mixture(std::size_t classes, std::size_t dim, std::size_t per_class,
                             double separation, std::uint64_t seed);

/// Rows are `label,f0,f1,...`. When `max_value` is set features are divided by it.
LabeledDataset load_csv(const std::filesystem::path& path, std::size_t classes,
                        std::optional<double> max_value = std::nullopt);
void write_csv(const std::filesystem::path& path, const LabeledDataset& dataset);

}  // namespace fedec
