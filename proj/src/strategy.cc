#include "fedec/strategy.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fedec/rng.h"

namespace fedec {

namespace {

struct StrategyName {
  Strategy type;
  std::string_view name;
};

constexpr StrategyName kNames[] = {
    {Strategy::kFedEC, "fedec"},
    {Strategy::kFedECL2, "fedec_l2"},
    {Strategy::kFedECWo, "fedec_wo"},
    {Strategy::kFedAvg, "fedavg"},
    {Strategy::kPerFedAvgFO, "perfedavg_fo"},
};

Batch make_batch(const LabeledDataset& data, std::span<const std::size_t> rows) {
  Batch b;
  b.features = Matrix(rows.size(), data.dim());
  b.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = data.features.row(rows[i]);
    std::copy(src.begin(), src.end(), b.features.row(i).begin());
    b.labels.push_back(data.labels[rows[i]]);
  }
  return b;
}

ParamVector mean_of(std::span<const ParamVector> xs) {
  ParamVector acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc += xs[i];
  const auto n = static_cast<double>(xs.size());
  for (auto& v : acc.values()) v /= n;
  return acc;
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& n : kNames) {
    if (n.type == s) return n.name;
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& n : kNames) {
    if (n.name == name) return n.type;
  }
  throw std::invalid_argument("unknown strategy '" + std::string(name) +
                              "' (expected fedec, fedec_l2, fedec_wo, fedavg or perfedavg_fo)");
}

bool uses_constraint(Strategy s) { return s == Strategy::kFedEC || s == Strategy::kFedECL2; }

bool uses_reptile_outer(Strategy s) { return s != Strategy::kFedAvg; }

void StrategyKind::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
  if (!uses_constraint(type) && alpha != 0.0) {
    throw std::invalid_argument("alpha is set but strategy " + std::string(to_string(type)) +
                                " has no constraint term");
  }
}

const ParamVector* HistoryStore::find(std::size_t client) const {
  auto it = entries_.find(client);
  return it == entries_.end() ? nullptr : &it->second;
}

void HistoryStore::put(std::size_t client, ParamVector params) {
  entries_.insert_or_assign(client, std::move(params));
}

std::size_t batches_per_epoch(std::size_t examples, std::size_t batch_size) {
  return (examples + batch_size - 1) / batch_size;
}

std::pair<double, double> evaluate(const NetworkSpec& spec, const ParamVector& params,
                                   const LabeledDataset& test) {
  if (test.size() == 0) return {0.0, 0.0};
  const Prediction pred = forward(spec, params, test.features);
  return {accuracy(pred, test.labels), cross_entropy(pred, test.labels)};
}

InnerResult inner_update(const StrategyKind& kind, const NetworkSpec& spec,
                         const ParamVector& phi, const ClientShard& shard,
                         const ParamVector* history, const InnerOptions& options) {
  kind.validate();
  if (options.epochs == 0) throw std::invalid_argument("inner epochs must be >= 1");
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(options.lr > 0.0)) throw std::invalid_argument("inner learning rate must be > 0");
  if (shard.train.size() == 0) {
    throw std::invalid_argument("client " + std::to_string(shard.client_id) +
                                " has an empty train split");
  }
  if (phi.layout() != spec.layout()) {
    throw LayoutMismatch("meta-initialization layout does not match network spec");
  }
  if (history) phi.check_same_layout(*history);

  const bool constrained = uses_constraint(kind.type) && history != nullptr;
  const std::size_t n = shard.train.size();
  const std::size_t per_epoch = batches_per_epoch(n, options.batch_size);

  InnerResult out;
  out.used_constraint = constrained;
  out.loss_trace.reserve(options.epochs * per_epoch);
  out.constraint_trace.reserve(options.epochs * per_epoch);

  ParamVector theta = phi;
  Rng rng(options.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * options.batch_size;
      const std::size_t hi = std::min(n, lo + options.batch_size);
      const auto rows = std::span<const std::size_t>(order).subspan(lo, hi - lo);
      const Batch batch = make_batch(shard.train, rows);

      switch (kind.type) {
        case Strategy::kFedEC: {
          if (constrained && kind.alpha > 0.0) {
            // History predictions are recomputed on every batch and held constant.
            const Prediction hist = forward(spec, *history, batch);
            LossGrad lg = loss_and_grad(spec, theta, batch, hist, kind.alpha);
            out.loss_trace.push_back(lg.loss);
            out.constraint_trace.push_back(kind.alpha * lg.kl);
            theta.axpy(-options.lr, lg.grad);
          } else {
            LossGrad lg = loss_and_grad(spec, theta, batch);
            out.loss_trace.push_back(lg.loss);
            out.constraint_trace.push_back(0.0);
            theta.axpy(-options.lr, lg.grad);
          }
          break;
        }
        case Strategy::kFedECL2: {
          LossGrad lg = loss_and_grad(spec, theta, batch);
          double penalty = 0.0;
          if (constrained && kind.alpha > 0.0) {
            ParamVector diff = theta - *history;
            penalty = kind.alpha * diff.squared_norm();
            lg.grad.axpy(2.0 * kind.alpha, diff);
          }
          out.loss_trace.push_back(lg.loss + penalty);
          out.constraint_trace.push_back(penalty);
          theta.axpy(-options.lr, lg.grad);
          break;
        }
        case Strategy::kFedECWo:
        case Strategy::kFedAvg: {
          LossGrad lg = loss_and_grad(spec, theta, batch);
          out.loss_trace.push_back(lg.loss);
          out.constraint_trace.push_back(0.0);
          theta.axpy(-options.lr, lg.grad);
          break;
        }
        case Strategy::kPerFedAvgFO: {
          // Support/query halves of the batch; a single-row batch serves as both.
          std::size_t n_support = static_cast<std::size_t>(
              options.support_fraction * static_cast<double>(rows.size()));
          n_support = std::clamp<std::size_t>(n_support, 1, rows.size());
          const auto support_rows = rows.subspan(0, n_support);
          const auto query_rows = n_support < rows.size() ? rows.subspan(n_support) : rows;
          const Batch support = make_batch(shard.train, support_rows);
          const Batch query = make_batch(shard.train, query_rows);
          const ParamVector adapted =
              sgd_step(theta, grad(spec, theta, support), options.lr);
          LossGrad lg = loss_and_grad(spec, adapted, query);
          out.loss_trace.push_back(lg.loss);
          out.constraint_trace.push_back(0.0);
          theta.axpy(-options.lr, lg.grad);
          break;
        }
      }
    }
  }

  auto [acc, loss] = evaluate(spec, theta, shard.test);
  out.test_accuracy = acc;
  out.test_loss = loss;
  out.adapted = std::move(theta);
  return out;
}

ParamVector outer_update_reptile(const ParamVector& phi, std::span<const ParamVector> adapted,
                                 double lr_out) {
  if (adapted.empty()) throw std::invalid_argument("outer update needs at least one client");
  for (const auto& a : adapted) phi.check_same_layout(a);
  ParamVector mean = mean_of(adapted);
  ParamVector out = phi;
  const double keep = 1.0 - lr_out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * phi[i] + lr_out * mean[i];
  return out;
}

ParamVector outer_update_fedavg(std::span<const ParamVector> adapted,
                                std::span<const double> weights) {
  if (adapted.empty()) throw std::invalid_argument("outer update needs at least one client");
  if (weights.size() != adapted.size()) {
    throw std::invalid_argument("weight count does not match client count");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("aggregation weights must be positive");
  }
  for (const auto& a : adapted) adapted.front().check_same_layout(a);
  const bool uniform = std::all_of(weights.begin(), weights.end(),
                                   [&](double w) { return w == weights.front(); });
  if (uniform) return mean_of(adapted);

  ParamVector acc(adapted.front().layout());
  double total = 0.0;
  for (std::size_t i = 0; i < adapted.size(); ++i) {
    acc.axpy(weights[i], adapted[i]);
    total += weights[i];
  }
  for (auto& v : acc.values()) v /= total;
  return acc;
}

HistoryStore update_history(HistoryStore store, std::size_t client, const InnerResult& result) {
  store.put(client, result.adapted);
  return store;
}

}  // namespace fedec
