// fedec: run personalized federated learning experiments.
//
//   fedec run --config exp.ini --out results/ --strategy fedec --alpha 1
//   fedec compare --config exp.ini --out cmp/ --strategies fedec,fedec_wo --seeds 1,2,3

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedec/config.h"

namespace {

struct CommonFlags {
  std::string config_file;
  std::string out;
  std::vector<std::string> sets;
  // Flag name -> config key. Values stay as text and go through the config parser.
  std::vector<std::pair<std::string, std::string>> algo;
};

const std::vector<std::pair<std::string, std::string>> kAlgorithmFlags = {
    {"--clients", "round.clients"},       {"--sample-rate", "round.sample_rate"},
    {"--rounds", "round.rounds"},         {"--inner-epochs", "round.inner_epochs"},
    {"--inner-lr", "round.inner_lr"},     {"--outer-lr", "round.outer_lr"},
    {"--alpha", "round.alpha"},           {"--strategy", "round.strategy"},
    {"--batch-size", "round.batch_size"}, {"--seed", "round.seed"},
};

void add_common(CLI::App* cmd, CommonFlags& flags, std::vector<std::string>& values) {
  cmd->add_option("-c,--config", flags.config_file, "config file (sectioned key = value)");
  cmd->add_option("-o,--out", flags.out, "output directory (output.dir)");
  cmd->add_option("--set", flags.sets, "override any key: section.key=value");
  values.resize(kAlgorithmFlags.size());
  for (std::size_t i = 0; i < kAlgorithmFlags.size(); ++i) {
    cmd->add_option(kAlgorithmFlags[i].first, values[i], kAlgorithmFlags[i].second);
  }
}

fedec::Overrides collect(const CommonFlags& flags, const std::vector<std::string>& values,
                         CLI::App* cmd) {
  fedec::Overrides ov;
  for (const auto& s : flags.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw fedec::ConfigError(s, "--set expects section.key=value");
    ov.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (std::size_t i = 0; i < kAlgorithmFlags.size(); ++i) {
    if (cmd->count(kAlgorithmFlags[i].first) > 0) {
      ov.emplace_back(kAlgorithmFlags[i].second, values[i]);
    }
  }
  if (!flags.out.empty()) ov.emplace_back("output.dir", flags.out);
  return ov;
}

std::optional<std::filesystem::path> config_path(const CommonFlags& flags) {
  if (flags.config_file.empty()) return std::nullopt;
  return std::filesystem::path(flags.config_file);
}

template <typename T, typename Fn>
std::vector<T> split_list(const std::string& text, const char* key, Fn&& parse) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(start, comma - start);
    if (item.empty()) throw fedec::ConfigError(key, "empty list item");
    try {
      out.push_back(parse(item));
    } catch (const std::exception& e) {
      throw fedec::ConfigError(key, e.what());
    }
    start = comma + 1;
  }
  return out;
}

void report(const char* kind, const std::string& key, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  if (!key.empty()) j["key"] = key;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated learning simulator"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  std::vector<std::string> run_values;
  auto* run_cmd = app.add_subcommand("run", "run one experiment and write its artifacts");
  add_common(run_cmd, run_flags, run_values);

  CommonFlags cmp_flags;
  std::vector<std::string> cmp_values;
  std::string strategies = "fedec,fedec_wo,fedec_l2,fedavg";
  std::string seeds = "1";
  auto* cmp_cmd = app.add_subcommand("compare", "run a strategy x seed grid");
  add_common(cmp_cmd, cmp_flags, cmp_values);
  cmp_cmd->add_option("--strategies", strategies, "comma-separated strategy list");
  cmp_cmd->add_option("--seeds", seeds, "comma-separated seed list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) {
      const auto cfg =
          fedec::parse_config(config_path(run_flags), collect(run_flags, run_values, run_cmd));
      const int rc = fedec::run(cfg);
      if (rc == 0) std::cout << "wrote results to " << cfg.output.dir.string() << '\n';
      return rc;
    }

    auto ov = collect(cmp_flags, cmp_values, cmp_cmd);
    // The grid supplies strategy and seed; the base config still has to parse.
    const bool has_strategy = cmp_cmd->count("--strategy") > 0;
    const bool has_seed = cmp_cmd->count("--seed") > 0;
    const auto strats = split_list<fedec::Strategy>(
        strategies, "strategies", [](const std::string& s) { return fedec::parse_strategy(s); });
    const auto seed_list = split_list<std::uint64_t>(seeds, "seeds", [](const std::string& s) {
      std::size_t pos = 0;
      const auto v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("not an integer: " + s);
      return static_cast<std::uint64_t>(v);
    });
    if (!has_strategy) ov.insert(ov.begin(), {"round.strategy", "fedec"});
    if (!has_seed) ov.insert(ov.begin(), {"round.seed", std::to_string(seed_list.front())});
    const auto cfg = fedec::parse_config(config_path(cmp_flags), ov);
    const auto rows = fedec::compare(cfg, strats, seed_list);
    std::cout << fedec::comparison_csv(rows);
    return 0;
  } catch (const fedec::ConfigError& e) {
    report("config", e.key(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report("runtime", "", e.what());
    return 2;
  }
}
