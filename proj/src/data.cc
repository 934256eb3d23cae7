#include "fedec/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fedec/rng.h"

namespace fedec {

void LabeledDataset::validate() const {
  if (classes == 0) throw DataError("dataset class count must be positive");
  if (features.rows != labels.size()) {
    throw DataError("dataset has " + std::to_string(features.rows) + " feature rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("example " + std::to_string(i) + " has label " +
                      std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows) const {
  LabeledDataset out;
  out.classes = classes;
  out.features = Matrix(rows.size(), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows.at(i));
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

std::size_t PartitionSpec::shards_per_class(std::size_t classes) const {
  return clients * classes_per_client / classes;
}

void PartitionSpec::validate(std::size_t classes) const {
  if (clients == 0) throw DataError("partition needs at least one client");
  if (classes_per_client == 0) throw DataError("classes per client must be positive");
  if (classes_per_client > classes) {
    throw DataError("classes per client (" + std::to_string(classes_per_client) +
                    ") exceeds class count (" + std::to_string(classes) + ")");
  }
  if ((clients * classes_per_client) % classes != 0) {
    throw DataError("clients * classes per client (" +
                    std::to_string(clients * classes_per_client) +
                    ") is not divisible by class count (" + std::to_string(classes) + ")");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("train fraction must lie in (0, 1)");
  }
}

std::string PartitionSummary::to_json() const {
  nlohmann::json j;
  j["clients"] = clients;
  j["classes_per_client"] = classes_per_client;
  j["shards_per_class"] = shards_per_class;
  j["shard_size"] = shard_size;
  j["dropped"] = dropped;
  j["total_dropped"] = total_dropped;
  j["assignment"] = assignment;
  std::ostringstream h;
  h << std::hex << hash;
  j["hash"] = h.str();
  return j.dump(2);
}

Partition shard_partition(const LabeledDataset& dataset, const PartitionSpec& spec) {
  dataset.validate();
  const std::size_t classes = dataset.classes;
  spec.validate(classes);
  const std::size_t S = spec.shards_per_class(classes);

  Rng rng(spec.seed);

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }

  Partition part;
  PartitionSummary& sum = part.summary;
  sum.clients = spec.clients;
  sum.classes_per_client = spec.classes_per_client;
  sum.shards_per_class = S;

  // shards[c][j] = rows of the j-th shard of class c.
  std::vector<std::vector<std::vector<std::size_t>>> shards(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& rows = by_class[c];
    if (rows.size() < S) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                      " examples, needs at least " + std::to_string(S));
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t shard_size = rows.size() / S;
    sum.shard_size.push_back(shard_size);
    sum.dropped.push_back(rows.size() - shard_size * S);
    sum.total_dropped += rows.size() - shard_size * S;
    for (std::size_t j = 0; j < S; ++j) {
      shards[c].emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(j * shard_size),
                             rows.begin() + static_cast<std::ptrdiff_t>((j + 1) * shard_size));
    }
  }

  // Each class appears S times in the slot list; a shuffle followed by
  // consecutive k-slot windows is a uniform matching with that budget.
  std::vector<int> slots;
  slots.reserve(spec.clients * spec.classes_per_client);
  for (std::size_t c = 0; c < classes; ++c) {
    slots.insert(slots.end(), S, static_cast<int>(c));
  }
  std::shuffle(slots.begin(), slots.end(), rng);

  std::vector<std::size_t> next_shard(classes, 0);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto fnv = [&hash](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      hash ^= (v >> (8 * b)) & 0xff;
      hash *= 0x100000001b3ULL;
    }
  };

  for (std::size_t client = 0; client < spec.clients; ++client) {
    ClientShard cs;
    cs.client_id = client;
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < spec.classes_per_client; ++k) {
      const int c = slots[client * spec.classes_per_client + k];
      cs.shard_classes.push_back(c);
      const auto& shard = shards[static_cast<std::size_t>(c)][next_shard[static_cast<std::size_t>(c)]++];
      rows.insert(rows.end(), shard.begin(), shard.end());
    }
    if (rows.size() < 2) {
      throw DataError("client " + std::to_string(client) + " would hold " +
                      std::to_string(rows.size()) +
                      " example(s); at least 2 are needed for a train/test split");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_train = static_cast<std::size_t>(
        std::floor(spec.train_fraction * static_cast<double>(rows.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
    cs.train_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    cs.test_rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    cs.train = dataset.subset(cs.train_rows);
    cs.test = dataset.subset(cs.test_rows);

    fnv(client);
    for (auto r : cs.train_rows) fnv(r);
    fnv(~0ULL);
    for (auto r : cs.test_rows) fnv(r);

    sum.assignment.push_back(cs.shard_classes);
    part.shards.push_back(std::move(cs));
  }
  sum.hash = hash;
  return part;
}

LabeledDataset synth_mixture(std::size_t classes, std::size_t dim, std::size_t per_class,
                             double separation, std::uint64_t seed) {
  if (classes < 2) throw DataError("synthetic mixture needs at least 2 classes");
  if (dim == 0) throw DataError("synthetic mixture needs dim >= 1");
  if (per_class == 0) throw DataError("synthetic mixture needs per_class >= 1");
  if (!(separation > 0.0)) throw DataError("separation must be positive");

  Rng rng(seed);
  std::vector<std::vector<double>> means;
  if (classes <= dim) {
    // Scaled distinct axes: every pair is exactly `separation` apart.
    std::vector<std::size_t> axes(dim);
    std::iota(axes.begin(), axes.end(), 0);
    std::shuffle(axes.begin(), axes.end(), rng);
    const double scale = separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> m(dim, 0.0);
      m[axes[c]] = scale;
      means.push_back(std::move(m));
    }
  } else {
    // Regular polygon in a random coordinate plane (a segment when dim == 1);
    // adjacent vertices are `separation` apart and every mean is a hull vertex.
    std::vector<std::size_t> axes(dim);
    std::iota(axes.begin(), axes.end(), 0);
    std::shuffle(axes.begin(), axes.end(), rng);
    const double pi = std::acos(-1.0);
    const double radius = separation / (2.0 * std::sin(pi / static_cast<double>(classes)));
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> m(dim, 0.0);
      if (dim == 1) {
        m[0] = separation * static_cast<double>(c);
      } else {
        const double angle = 2.0 * pi * static_cast<double>(c) / static_cast<double>(classes);
        m[axes[0]] = radius * std::cos(angle);
        m[axes[1]] = radius * std::sin(angle);
      }
      means.push_back(std::move(m));
    }
  }

  LabeledDataset ds;
  ds.classes = classes;
  ds.features = Matrix(classes * per_class, dim);
  ds.labels.reserve(classes * per_class);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      auto row = ds.features.row(ds.labels.size());
      for (std::size_t d = 0; d < dim; ++d) row[d] = means[c][d] + noise(rng);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

LabeledDataset load_csv(const std::filesystem::path& path, std::size_t classes,
                        std::optional<double> max_value) {
  if (classes == 0) throw DataError("class count must be positive");
  if (max_value && !(*max_value > 0.0)) throw DataError("max value must be positive");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() < 2) {
      throw DataError("row " + std::to_string(row) + ": expected a label and at least one feature");
    }
    if (width == 0) {
      width = fields.size() - 1;
    } else if (fields.size() - 1 != width) {
      throw DataError("row " + std::to_string(row) + ": has " +
                      std::to_string(fields.size() - 1) + " features, expected " +
                      std::to_string(width));
    }
    int label = 0;
    auto lf = fields[0];
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lec != std::errc() || lp != lf.data() + lf.size()) {
      throw DataError("row " + std::to_string(row) + ": label '" + std::string(lf) +
                      "' is not an integer");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("row " + std::to_string(row) + ": label " + std::to_string(label) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
    labels.push_back(label);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      double v = 0.0;
      try {
        v = parse_double(fields[f]);
      } catch (const std::invalid_argument&) {
        throw DataError("row " + std::to_string(row) + ", column " + std::to_string(f + 1) +
                        ": '" + std::string(fields[f]) + "' is not numeric");
      }
      values.push_back(max_value ? v / *max_value : v);
    }
  }
  if (labels.empty()) throw DataError(path.string() + ": no data rows");
  LabeledDataset ds;
  ds.classes = classes;
  ds.features = Matrix(labels.size(), width, std::move(values));
  ds.labels = std::move(labels);
  return ds;
}

void write_csv(const std::filesystem::path& path, const LabeledDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    out << dataset.labels[r];
    for (double v : dataset.features.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace fedec
