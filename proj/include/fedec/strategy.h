#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedec/data.h"
#include "fedec/nn.h"
#include "fedec/param_vector.h"

namespace fedec {

enum class Strategy {
  kFedEC,        // CE + alpha * KL(history || current) once a history exists
  kFedECL2,      // CE + alpha * ||theta - history||^2 once a history exists
  kFedECWo,      // plain CE, Reptile outer update
  kFedAvg,       // plain CE, weighted parameter averaging
  kPerFedAvgFO,  // first-order Per-FedAvg: support step, query gradient
};

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);
bool uses_constraint(Strategy s);
bool uses_reptile_outer(Strategy s);

struct StrategyKind {
  Strategy type = Strategy::kFedEC;
  double alpha = 0.0;

  /// Throws when alpha is negative, or non-zero for a strategy without a
  /// constraint term.
  void validate() const;
  bool operator==(const StrategyKind&) const = default;
};

struct InnerOptions {
  std::size_t epochs = 1;  // tau, full passes over the client's train split
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double support_fraction = 0.5;  // Per-FedAvg support share of each batch
};

struct InnerResult {
  ParamVector adapted;
  std::vector<double> loss_trace;        // total per-batch loss
  std::vector<double> constraint_trace;  // alpha * constraint per batch, 0 when inactive
  bool used_constraint = false;          // the history branch was taken
  double test_accuracy = 0.0;
  double test_loss = 0.0;
};

/// Client id -> the adapted model from that client's latest participation.
class HistoryStore {
 public:
  const ParamVector* find(std::size_t client) const;
  bool contains(std::size_t client) const { return entries_.count(client) != 0; }
  std::size_t size() const { return entries_.size(); }
  void put(std::size_t client, ParamVector params);
  const std::map<std::size_t, ParamVector>& entries() const { return entries_; }
  bool operator==(const HistoryStore&) const = default;

 private:
  std::map<std::size_t, ParamVector> entries_;
};

std::size_t batches_per_epoch(std::size_t examples, std::size_t batch_size);

/// Local adaptation starting from `phi`; `history` may be null (first
/// participation). Never touches any HistoryStore.
InnerResult inner_update(const StrategyKind& kind, const NetworkSpec& spec,
                         const ParamVector& phi, const ClientShard& shard,
                         const ParamVector* history, const InnerOptions& options);

/// Evaluate `params` on the shard's test split; returns {accuracy, loss}.
std::pair<double, double> evaluate(const NetworkSpec& spec, const ParamVector& params,
                                   const LabeledDataset& test);

/// phi + lr_out * mean(theta_i - phi), evaluated as (1 - lr_out) * phi +
/// lr_out * mean(theta_i) so that lr_out in {0, 1} is exact.
ParamVector outer_update_reptile(const ParamVector& phi, std::span<const ParamVector> adapted,
                                 double lr_out);

/// Weight-normalized average. Uniform weights reduce to the plain mean.
ParamVector outer_update_fedavg(std::span<const ParamVector> adapted,
                                std::span<const double> weights);

HistoryStore update_history(HistoryStore store, std::size_t client, const InnerResult& result);

}  // namespace fedec
