#include "fedec/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedec/rng.h"

namespace fedec {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    const double d = parse_double(v);
    if (!std::isfinite(d)) throw std::invalid_argument("non-finite");
    return d;
  } catch (const std::invalid_argument&) {
    throw ConfigError(key, "expected a real number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct KeyDef {
  std::string name;
  bool required;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyDef>& key_table() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<KeyDef> table = {
      {"data.source", false,
       [](C& c, S k, S v) {
         if (v == "synthetic") c.data.kind = DataSourceKind::kSynthetic;
         else if (v == "csv") c.data.kind = DataSourceKind::kCsv;
         else throw ConfigError(k, "expected synthetic or csv, got '" + v + "'");
       },
       [](const C& c) {
         return std::string(c.data.kind == DataSourceKind::kCsv ? "csv" : "synthetic");
       }},
      {"data.classes", false, [](C& c, S k, S v) { c.data.classes = to_size(k, v); },
       [](const C& c) { return std::to_string(c.data.classes); }},
      {"data.dim", false, [](C& c, S k, S v) { c.data.dim = to_size(k, v); },
       [](const C& c) { return std::to_string(c.data.dim); }},
      {"data.per_class", false, [](C& c, S k, S v) { c.data.per_class = to_size(k, v); },
       [](const C& c) { return std::to_string(c.data.per_class); }},
      {"data.separation", false, [](C& c, S k, S v) { c.data.separation = to_real(k, v); },
       [](const C& c) { return format_double(c.data.separation); }},
      {"data.csv_path", false, [](C& c, S, S v) { c.data.csv_path = v; },
       [](const C& c) { return c.data.csv_path.string(); }},
      {"data.csv_max_value", false,
       [](C& c, S k, S v) {
         if (v.empty()) c.data.csv_max_value.reset();
         else c.data.csv_max_value = to_real(k, v);
       },
       [](const C& c) {
         return c.data.csv_max_value ? format_double(*c.data.csv_max_value) : std::string();
       }},
      {"partition.classes_per_client", false,
       [](C& c, S k, S v) { c.classes_per_client = to_size(k, v); },
       [](const C& c) { return std::to_string(c.classes_per_client); }},
      {"partition.train_fraction", false,
       [](C& c, S k, S v) { c.train_fraction = to_real(k, v); },
       [](const C& c) { return format_double(c.train_fraction); }},
      {"round.clients", true, [](C& c, S k, S v) { c.round.clients = to_size(k, v); },
       [](const C& c) { return std::to_string(c.round.clients); }},
      {"round.sample_rate", true, [](C& c, S k, S v) { c.round.sample_rate = to_real(k, v); },
       [](const C& c) { return format_double(c.round.sample_rate); }},
      {"round.rounds", true, [](C& c, S k, S v) { c.round.rounds = to_size(k, v); },
       [](const C& c) { return std::to_string(c.round.rounds); }},
      {"round.inner_epochs", true,
       [](C& c, S k, S v) { c.round.inner_epochs = to_size(k, v); },
       [](const C& c) { return std::to_string(c.round.inner_epochs); }},
      {"round.inner_lr", true, [](C& c, S k, S v) { c.round.inner_lr = to_real(k, v); },
       [](const C& c) { return format_double(c.round.inner_lr); }},
      {"round.outer_lr", true, [](C& c, S k, S v) { c.round.outer_lr = to_real(k, v); },
       [](const C& c) { return format_double(c.round.outer_lr); }},
      {"round.alpha", false, [](C& c, S k, S v) { c.round.strategy.alpha = to_real(k, v); },
       [](const C& c) { return format_double(c.round.strategy.alpha); }},
      {"round.strategy", true,
       [](C& c, S k, S v) {
         try {
           c.round.strategy.type = parse_strategy(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k, e.what());
         }
       },
       [](const C& c) { return std::string(to_string(c.round.strategy.type)); }},
      {"round.batch_size", true, [](C& c, S k, S v) { c.round.batch_size = to_size(k, v); },
       [](const C& c) { return std::to_string(c.round.batch_size); }},
      {"round.seed", true, [](C& c, S k, S v) { c.round.seed = to_u64(k, v); },
       [](const C& c) { return std::to_string(c.round.seed); }},
      {"round.support_fraction", false,
       [](C& c, S k, S v) { c.round.support_fraction = to_real(k, v); },
       [](const C& c) { return format_double(c.round.support_fraction); }},
      {"round.workers", false, [](C& c, S k, S v) { c.round.workers = to_size(k, v); },
       [](const C& c) { return std::to_string(c.round.workers); }},
      {"round.evaluate_all", false,
       [](C& c, S k, S v) { c.round.evaluate_all = to_bool(k, v); },
       [](const C& c) { return bool_text(c.round.evaluate_all); }},
      {"network.hidden", false, [](C& c, S k, S v) { c.hidden = to_size_list(k, v); },
       [](const C& c) {
         std::string out;
         for (std::size_t i = 0; i < c.hidden.size(); ++i) {
           if (i) out += ',';
           out += std::to_string(c.hidden[i]);
         }
         return out;
       }},
      {"output.dir", true, [](C& c, S, S v) { c.output.dir = v; },
       [](const C& c) { return c.output.dir.string(); }},
      {"output.checkpoint_interval", false,
       [](C& c, S k, S v) { c.output.checkpoint_interval = to_size(k, v); },
       [](const C& c) { return std::to_string(c.output.checkpoint_interval); }},
      {"output.dump_embeddings", false,
       [](C& c, S k, S v) { c.output.dump_embeddings = to_bool(k, v); },
       [](const C& c) { return bool_text(c.output.dump_embeddings); }},
      {"output.embedding_layer", false,
       [](C& c, S k, S v) { c.output.embedding_layer = to_size(k, v); },
       [](const C& c) { return std::to_string(c.output.embedding_layer); }},
      {"output.wall_clock", false,
       [](C& c, S k, S v) { c.output.wall_clock = to_bool(k, v); },
       [](const C& c) { return bool_text(c.output.wall_clock); }},
  };
  return table;
}

const KeyDef& find_key(const std::string& key) {
  for (const auto& k : key_table()) {
    if (k.name == key) return k;
  }
  throw ConfigError(key, "unknown key");
}

std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#' || t.front() == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError("", "line " + std::to_string(lineno) + ": malformed section header");
      }
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string name = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (section.empty()) {
      throw ConfigError(name, "line " + std::to_string(lineno) + ": key outside any section");
    }
    out.emplace_back(section + "." + name, value);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

LabeledDataset build_dataset(const ExperimentConfig& config) {
  if (config.data.kind == DataSourceKind::kCsv) {
    return load_csv(config.data.csv_path, config.data.classes, config.data.csv_max_value);
  }
  return synth_mixture(config.data.classes, config.data.dim, config.data.per_class,
                       config.data.separation, stream_seed(config.round.seed, Stream::kData));
}

double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

nlohmann::json config_json(const ExperimentConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : key_table()) j[k.name] = k.get(config);
  return j;
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

void report_error(const char* kind, const std::string& key, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  if (!key.empty()) j["key"] = key;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

}  // namespace

NetworkSpec ExperimentConfig::network(std::size_t input_dim) const {
  NetworkSpec spec;
  spec.layers.push_back(input_dim);
  spec.layers.insert(spec.layers.end(), hidden.begin(), hidden.end());
  spec.layers.push_back(data.classes);
  return spec;
}

PartitionSpec ExperimentConfig::partition() const {
  return PartitionSpec{round.clients, classes_per_client, train_fraction,
                       stream_seed(round.seed, Stream::kPartition)};
}

void ExperimentConfig::validate() const {
  if (data.classes < 2) throw ConfigError("data.classes", "need at least 2 classes");
  if (data.kind == DataSourceKind::kSynthetic) {
    if (data.dim == 0) throw ConfigError("data.dim", "must be >= 1");
    if (data.per_class == 0) throw ConfigError("data.per_class", "must be >= 1");
    if (!(data.separation > 0.0)) throw ConfigError("data.separation", "must be > 0");
  } else if (data.csv_path.empty()) {
    throw ConfigError("data.csv_path", "required when data.source = csv");
  }
  if (data.csv_max_value && !(*data.csv_max_value > 0.0)) {
    throw ConfigError("data.csv_max_value", "must be > 0");
  }
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("network.hidden", "layer widths must be positive");
  }
  if (output.dump_embeddings && output.embedding_layer >= hidden.size()) {
    throw ConfigError("output.embedding_layer",
                      "index " + std::to_string(output.embedding_layer) + " but network has " +
                          std::to_string(hidden.size()) + " hidden layers");
  }
  if (output.dir.empty()) throw ConfigError("output.dir", "required");

  const auto& r = round;
  if (r.clients == 0) throw ConfigError("round.clients", "must be >= 1");
  if (!(r.sample_rate > 0.0 && r.sample_rate <= 1.0)) {
    throw ConfigError("round.sample_rate", "must lie in (0, 1]");
  }
  if (r.rounds == 0) throw ConfigError("round.rounds", "must be >= 1");
  if (r.inner_epochs == 0) throw ConfigError("round.inner_epochs", "must be >= 1");
  if (!(r.inner_lr > 0.0)) throw ConfigError("round.inner_lr", "must be > 0");
  if (!(r.outer_lr > 0.0)) throw ConfigError("round.outer_lr", "must be > 0");
  if (r.batch_size == 0) throw ConfigError("round.batch_size", "must be >= 1");
  if (!(r.support_fraction > 0.0 && r.support_fraction < 1.0)) {
    throw ConfigError("round.support_fraction", "must lie in (0, 1)");
  }
  if (r.workers == 0) throw ConfigError("round.workers", "must be >= 1");
  if (r.strategy.alpha < 0.0) throw ConfigError("round.alpha", "must be >= 0");
  if (!uses_constraint(r.strategy.type) && r.strategy.alpha != 0.0) {
    throw ConfigError("round.alpha", "alpha = " + format_double(r.strategy.alpha) +
                                         " conflicts with strategy " +
                                         std::string(to_string(r.strategy.type)) +
                                         ", which has no constraint term");
  }

  if (classes_per_client == 0 || classes_per_client > data.classes) {
    throw ConfigError("partition.classes_per_client",
                      "must lie in [1, data.classes = " + std::to_string(data.classes) + "]");
  }
  if ((r.clients * classes_per_client) % data.classes != 0) {
    throw ConfigError("partition.classes_per_client",
                      "clients * classes_per_client = " +
                          std::to_string(r.clients * classes_per_client) +
                          " is not divisible by data.classes = " + std::to_string(data.classes));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("partition.train_fraction", "must lie in (0, 1)");
  }
}

ExperimentConfig parse_config_text(const std::string& text, const Overrides& overrides) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& [key, value] : parse_lines(text)) {
    find_key(key).set(cfg, key, value);
    seen.insert(key);
  }
  for (const auto& [key, value] : overrides) {
    find_key(key).set(cfg, key, value);
    seen.insert(key);
  }
  for (const auto& k : key_table()) {
    if (k.required && !seen.count(k.name)) throw ConfigError(k.name, "required key missing");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::optional<std::filesystem::path>& file,
                              const Overrides& overrides) {
  return parse_config_text(file ? read_file(*file) : std::string(), overrides);
}

std::string to_config_text(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : key_table()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << k.name.substr(dot + 1) << " = " << k.get(config) << '\n';
  }
  return out.str();
}

RunArtifacts execute(const ExperimentConfig& config) {
  config.validate();
  const LabeledDataset data = build_dataset(config);
  const NetworkSpec spec = config.network(data.dim());
  Partition part = shard_partition(data, config.partition());
  RunArtifacts out{run_experiment(config.round, spec, part.shards), part.summary, spec};
  return out;
}

int run(const ExperimentConfig& config) {
  try {
    config.validate();
  } catch (const ConfigError& e) {
    report_error("config", e.key(), e.what());
    return 1;
  }
  try {
    const auto& dir = config.output.dir;
    std::filesystem::create_directories(dir);
    write_text(dir / "config.ini", to_config_text(config));

    const LabeledDataset data = build_dataset(config);
    const NetworkSpec spec = config.network(data.dim());
    const Partition part = shard_partition(data, config.partition());
    write_text(dir / "partition.json", part.summary.to_json() + "\n");

    const auto emb_path = dir / "embeddings.csv";
    if (config.output.dump_embeddings) std::filesystem::remove(emb_path);
    RoundObserver observer = [&](const RoundResult& r) {
      const std::size_t t = r.state.round;
      if (config.output.checkpoint_interval > 0 && t % config.output.checkpoint_interval == 0) {
        save_checkpoint(dir / ("phi_round_" + std::to_string(t) + ".ckpt"), r.state.phi);
      }
      if (config.output.dump_embeddings) {
        for (std::size_t i = 0; i < r.sampled.size(); ++i) {
          dump_embeddings(spec, r.results[i].adapted, part.shards[r.sampled[i]],
                          config.output.embedding_layer, emb_path, t);
        }
      }
    };
    const ExperimentResult res = run_experiment(config.round, spec, part.shards, observer);

    {
      std::ofstream csv(dir / "metrics.csv");
      if (!csv) throw std::runtime_error("cannot write metrics.csv");
      write_metrics_csv(csv, res.rounds, res.final, config.output.wall_clock);
    }
    save_checkpoint(dir / "phi_final.ckpt", res.phi);

    nlohmann::json summary;
    summary["config"] = config_json(config);
    nlohmann::json entry;
    entry["alpha"] = config.round.strategy.alpha;
    entry["mean_final10_acc"] = tail_mean_accuracy(res.rounds, 10);
    entry["std"] = 0.0;
    entry["final_personalized_acc"] = res.final.mean_accuracy;
    entry["seeds"] = 1;
    summary["per_strategy"][std::string(to_string(config.round.strategy.type))] = entry;
    std::vector<double> per_client;
    for (const auto& c : res.final.clients) per_client.push_back(c.accuracy);
    summary["final_client_accuracy"] = per_client;
    summary["partition_hash"] = hex(part.summary.hash);
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return 0;
  } catch (const ConfigError& e) {
    report_error("config", e.key(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("runtime", "", e.what());
    return 2;
  }
}

std::vector<ComparisonRow> compare(const ExperimentConfig& config,
                                   const std::vector<Strategy>& strategies,
                                   const std::vector<std::uint64_t>& seeds,
                                   bool write_outputs) {
  if (strategies.empty()) throw ConfigError("strategies", "need at least one strategy");
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  std::vector<ComparisonRow> rows;
  const double alpha = config.round.strategy.alpha;
  for (Strategy s : strategies) {
    ComparisonRow row;
    row.strategy = std::string(to_string(s));
    row.alpha = uses_constraint(s) ? alpha : 0.0;
    for (std::uint64_t seed : seeds) {
      ExperimentConfig c = config;
      c.round.strategy = StrategyKind{s, row.alpha};
      c.round.seed = seed;
      const RunArtifacts art = execute(c);
      row.final10_per_seed.push_back(tail_mean_accuracy(art.result.rounds, 10));
      row.personalized_per_seed.push_back(art.result.final.mean_accuracy);
      row.partition_hash_per_seed.push_back(art.partition.hash);
      if (write_outputs) {
        const auto runs = config.output.dir / "runs";
        std::filesystem::create_directories(runs);
        std::ofstream csv(runs / (row.strategy + "_seed" + std::to_string(seed) + ".csv"));
        write_metrics_csv(csv, art.result.rounds, art.result.final, false);
      }
    }
    row.mean_final10_acc = mean_of(row.final10_per_seed);
    row.std_final10_acc = stddev(row.final10_per_seed);
    row.final_personalized_acc = mean_of(row.personalized_per_seed);
    row.std_personalized_acc = stddev(row.personalized_per_seed);
    rows.push_back(std::move(row));
  }

  if (write_outputs) {
    const auto& dir = config.output.dir;
    std::filesystem::create_directories(dir);
    write_text(dir / "comparison.csv", comparison_csv(rows));
    nlohmann::json summary;
    summary["config"] = config_json(config);
    summary["seeds"] = seeds;
    for (const auto& r : rows) {
      nlohmann::json e;
      e["alpha"] = r.alpha;
      e["mean_final10_acc"] = r.mean_final10_acc;
      e["std"] = r.std_final10_acc;
      e["final_personalized_acc"] = r.final_personalized_acc;
      e["final_personalized_std"] = r.std_personalized_acc;
      std::vector<std::string> hashes;
      for (auto h : r.partition_hash_per_seed) hashes.push_back(hex(h));
      e["partition_hash"] = hashes;
      summary["per_strategy"][r.strategy] = e;
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "strategy,alpha,mean_final10_acc,std_final10_acc,final_personalized_acc,"
         "std_personalized_acc,seeds\n";
  for (const auto& r : rows) {
    out << r.strategy << ',' << format_double(r.alpha) << ','
        << format_double(r.mean_final10_acc) << ',' << format_double(r.std_final10_acc) << ','
        << format_double(r.final_personalized_acc) << ','
        << format_double(r.std_personalized_acc) << ',' << r.final10_per_seed.size() << '\n';
  }
  return out.str();
}

}  // namespace fedec
