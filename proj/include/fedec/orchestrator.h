#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fedec/data.h"
#include "fedec/nn.h"
#include "fedec/strategy.h"

namespace fedec {

struct RoundConfig {
  std::size_t clients = 0;     // N
  double sample_rate = 0.1;    // r
  std::size_t rounds = 1;      // T
  std::size_t inner_epochs = 1;  // tau
  double inner_lr = 0.01;
  double outer_lr = 1.0;
  std::size_t batch_size = 32;
  StrategyKind strategy;
  std::uint64_t seed = 0;
  double support_fraction = 0.5;
  std::size_t workers = 1;     // threads for per-client inner updates
  bool evaluate_all = false;   // evaluate every client each round, not only the sampled ones

  void validate() const;
  std::size_t clients_per_round() const;
  InnerOptions inner_options(std::uint64_t seed) const;
  bool operator==(const RoundConfig&) const = default;
};

struct ExperimentState {
  ParamVector phi;
  HistoryStore history;
  std::size_t round = 0;  // rounds completed
};

struct ClientMetric {
  std::size_t client = 0;
  double accuracy = 0.0;
  double train_loss = 0.0;
};

struct MetricsRecord {
  std::size_t round = 0;  // 1-based; rounds + 1 for the final personalized record
  bool final = false;
  double mean_accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<ClientMetric> clients;
  double seconds = 0.0;
};

struct RoundResult {
  ExperimentState state;
  MetricsRecord metrics;
  std::vector<std::size_t> sampled;   // ascending
  std::vector<InnerResult> results;   // parallel to `sampled`
};

struct ExperimentResult {
  std::vector<MetricsRecord> rounds;
  MetricsRecord final;
  ParamVector phi;
  HistoryStore history;
};

/// ceil(r * N) distinct ids drawn uniformly without replacement, ascending.
std::vector<std::size_t> sample_clients(std::size_t clients, double rate,
                                        std::uint64_t round_seed);

std::uint64_t round_seed(std::uint64_t master, std::size_t round);
std::uint64_t client_seed(std::uint64_t master, std::size_t round, std::size_t client);

ExperimentState initial_state(const RoundConfig& config, const NetworkSpec& spec);

/// One communication round: sample, adapt in parallel from the current
/// meta-initialization, aggregate at the barrier, then store each sampled
/// client's adapted model as its history. `workers` overrides config.workers
/// when given.
RoundResult run_round(const ExperimentState& state, const RoundConfig& config,
                      const NetworkSpec& spec, const std::vector<ClientShard>& shards,
                      std::optional<std::size_t> workers = std::nullopt);

using RoundObserver = std::function<void(const RoundResult&)>;

/// All T rounds, then a personalized evaluation of every client starting from
/// the final meta-initialization.
ExperimentResult run_experiment(const RoundConfig& config, const NetworkSpec& spec,
                                const std::vector<ClientShard>& shards,
                                const RoundObserver& observer = {});

/// Appends `round,client,v0,...` with the mean hidden activation over the
/// client's train split.
void dump_embeddings(const NetworkSpec& spec, const ParamVector& params,
                     const ClientShard& shard, std::size_t layer,
                     const std::filesystem::path& path, std::size_t round);

/// Header plus one row per round and a trailing `final` row. When
/// `wall_clock` is false the seconds column is written as NA so the file is a
/// pure function of the inputs.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& rounds,
                       const MetricsRecord& final, bool wall_clock);

/// Mean of per-round accuracy over the last `window` rounds.
double tail_mean_accuracy(const std::vector<MetricsRecord>& rounds, std::size_t window);

}  // namespace fedec
