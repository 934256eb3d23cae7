#include "fedec/orchestrator.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "fedec/rng.h"

namespace fedec {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// handled by exactly one call; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void RoundConfig::validate() const {
  if (clients == 0) throw std::invalid_argument("clients must be >= 1");
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    throw std::invalid_argument("sample rate must lie in (0, 1]");
  }
  if (rounds == 0) throw std::invalid_argument("rounds must be >= 1");
  if (inner_epochs == 0) throw std::invalid_argument("inner epochs must be >= 1");
  if (!(inner_lr > 0.0)) throw std::invalid_argument("inner learning rate must be > 0");
  if (!(outer_lr > 0.0)) throw std::invalid_argument("outer learning rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw std::invalid_argument("support fraction must lie in (0, 1)");
  }
  if (workers == 0) throw std::invalid_argument("workers must be >= 1");
  strategy.validate();
}

std::size_t RoundConfig::clients_per_round() const {
  // The epsilon keeps e.g. 0.07 * 100 = 7.000000000000001 from rounding up to 8.
  const double raw = sample_rate * static_cast<double>(clients);
  const auto m = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(m, 1, clients);
}

InnerOptions RoundConfig::inner_options(std::uint64_t s) const {
  return InnerOptions{inner_epochs, inner_lr, batch_size, s, support_fraction};
}

std::uint64_t round_seed(std::uint64_t master, std::size_t round) {
  return mix_seed(stream_seed(master, Stream::kSampling), round);
}

std::uint64_t client_seed(std::uint64_t master, std::size_t round, std::size_t client) {
  return mix_seed(stream_seed(master, Stream::kClient), round, client);
}

std::vector<std::size_t> sample_clients(std::size_t clients, double rate,
                                        std::uint64_t seed) {
  RoundConfig cfg;
  cfg.clients = clients;
  cfg.sample_rate = rate;
  if (clients == 0) throw std::invalid_argument("clients must be >= 1");
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("sample rate must lie in (0, 1]");
  const std::size_t m = cfg.clients_per_round();

  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first m slots are a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ExperimentState initial_state(const RoundConfig& config, const NetworkSpec& spec) {
  ExperimentState s;
  s.phi = init_params(spec, stream_seed(config.seed, Stream::kInit));
  return s;
}

RoundResult run_round(const ExperimentState& state, const RoundConfig& config,
                      const NetworkSpec& spec, const std::vector<ClientShard>& shards,
                      std::optional<std::size_t> workers) {
  config.validate();
  if (shards.size() != config.clients) {
    throw std::invalid_argument("got " + std::to_string(shards.size()) + " shards for " +
                                std::to_string(config.clients) + " clients");
  }
  if (state.round >= config.rounds) {
    throw std::logic_error("all " + std::to_string(config.rounds) + " rounds already ran");
  }
  const auto start = Clock::now();
  const std::size_t t = state.round + 1;

  RoundResult out;
  out.sampled = sample_clients(config.clients, config.sample_rate,
                               round_seed(config.seed, t));

  // Clients evaluated this round: the sampled set, or everyone when requested.
  std::vector<std::size_t> evaluated = out.sampled;
  if (config.evaluate_all) {
    evaluated.resize(config.clients);
    std::iota(evaluated.begin(), evaluated.end(), 0);
  }

  // Read-only snapshot: phi^{t-1}, the history store and the shards.
  std::vector<InnerResult> results(evaluated.size());
  parallel_for(evaluated.size(), workers.value_or(config.workers), [&](std::size_t i) {
    const std::size_t id = evaluated[i];
    results[i] = inner_update(config.strategy, spec, state.phi, shards[id],
                              state.history.find(id),
                              config.inner_options(client_seed(config.seed, t, id)));
  });

  // Barrier.
  std::vector<ParamVector> adapted;
  std::vector<double> weights;
  for (std::size_t i = 0, s = 0; i < evaluated.size(); ++i) {
    if (s < out.sampled.size() && evaluated[i] == out.sampled[s]) {
      adapted.push_back(results[i].adapted);
      weights.push_back(static_cast<double>(shards[evaluated[i]].train.size()));
      out.results.push_back(results[i]);
      ++s;
    }
  }

  out.state.round = t;
  out.state.phi = uses_reptile_outer(config.strategy.type)
                      ? outer_update_reptile(state.phi, adapted, config.outer_lr)
                      : outer_update_fedavg(adapted, weights);
  out.state.history = state.history;
  for (std::size_t s = 0; s < out.sampled.size(); ++s) {
    out.state.history = update_history(std::move(out.state.history), out.sampled[s],
                                       out.results[s]);
  }

  MetricsRecord& m = out.metrics;
  m.round = t;
  std::vector<double> accs, losses;
  for (std::size_t i = 0; i < evaluated.size(); ++i) {
    const double loss = mean(results[i].loss_trace);
    m.clients.push_back({evaluated[i], results[i].test_accuracy, loss});
    accs.push_back(results[i].test_accuracy);
    losses.push_back(loss);
  }
  m.mean_accuracy = mean(accs);
  m.mean_loss = mean(losses);
  m.seconds = seconds_since(start);
  return out;
}

ExperimentResult run_experiment(const RoundConfig& config, const NetworkSpec& spec,
                                const std::vector<ClientShard>& shards,
                                const RoundObserver& observer) {
  config.validate();
  spec.validate();
  ExperimentState state = initial_state(config, spec);
  ExperimentResult out;
  for (std::size_t t = 0; t < config.rounds; ++t) {
    RoundResult r = run_round(state, config, spec, shards);
    if (observer) observer(r);
    out.rounds.push_back(r.metrics);
    state = std::move(r.state);
  }

  // Personalized models: every client adapts from phi^T. FedAvg has no
  // personalization step; its deployed model is the global one.
  const auto start = Clock::now();
  std::vector<ClientMetric> finals(shards.size());
  const bool global_only = config.strategy.type == Strategy::kFedAvg;
  parallel_for(shards.size(), config.workers, [&](std::size_t id) {
    if (global_only) {
      auto [acc, loss] = evaluate(spec, state.phi, shards[id].test);
      finals[id] = {id, acc, loss};
      return;
    }
    const InnerResult r = inner_update(
        config.strategy, spec, state.phi, shards[id], state.history.find(id),
        config.inner_options(mix_seed(stream_seed(config.seed, Stream::kFinal), id)));
    finals[id] = {id, r.test_accuracy, mean(r.loss_trace)};
  });
  out.final.round = config.rounds + 1;
  out.final.final = true;
  std::vector<double> accs, losses;
  for (const auto& c : finals) {
    accs.push_back(c.accuracy);
    losses.push_back(c.train_loss);
  }
  out.final.clients = std::move(finals);
  out.final.mean_accuracy = mean(accs);
  out.final.mean_loss = mean(losses);
  out.final.seconds = seconds_since(start);
  out.phi = std::move(state.phi);
  out.history = std::move(state.history);
  return out;
}

void dump_embeddings(const NetworkSpec& spec, const ParamVector& params,
                     const ClientShard& shard, std::size_t layer,
                     const std::filesystem::path& path, std::size_t round) {
  const Matrix act = hidden_activations(spec, params, shard.train.features, layer);
  std::vector<double> avg(act.cols, 0.0);
  for (std::size_t r = 0; r < act.rows; ++r) {
    for (std::size_t c = 0; c < act.cols; ++c) avg[c] += act(r, c);
  }
  if (act.rows > 0) {
    for (auto& v : avg) v /= static_cast<double>(act.rows);
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for appending");
  out << round << ',' << shard.client_id;
  for (double v : avg) out << ',' << format_double(v);
  out << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& rounds,
                       const MetricsRecord& final, bool wall_clock) {
  out << "round,mean_acc,mean_loss,n_evaluated,seconds\n";
  auto row = [&](const std::string& label, const MetricsRecord& m) {
    out << label << ',' << format_double(m.mean_accuracy) << ','
        << format_double(m.mean_loss) << ',' << m.clients.size() << ','
        << (wall_clock ? format_double(m.seconds) : std::string("NA")) << '\n';
  };
  for (const auto& m : rounds) row(std::to_string(m.round), m);
  row("final", final);
}

double tail_mean_accuracy(const std::vector<MetricsRecord>& rounds, std::size_t window) {
  if (rounds.empty()) return 0.0;
  const std::size_t n = std::min(window, rounds.size());
  double s = 0.0;
  for (std::size_t i = rounds.size() - n; i < rounds.size(); ++i) s += rounds[i].mean_accuracy;
  return s / static_cast<double>(n);
}

}  // namespace fedec
