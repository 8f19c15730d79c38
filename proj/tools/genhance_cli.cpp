// genhance: command-line driver for the oracle / curate / train / sample /
// evaluate / report pipeline. Exit codes follow genhance::ErrorCategory.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "genhance/experiment.hpp"
#include "genhance/io.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

genhance::Experiment open(const GlobalOptions& g) {
  auto config = g.config.empty() ? genhance::ExperimentConfig::from_json(nlohmann::json::object(), g.seed)
                                 : genhance::ExperimentConfig::load(g.config, g.seed);
  std::string out = g.out.empty() ? config.out : g.out;
  config.out = out;
  return genhance::Experiment(std::move(config), out, g.force);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space sequence enhancement pipeline on a synthetic Potts landscape"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "genhance 0.1.0");

  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed; re-derives every component seed");
  app.add_option("--out", g.out, "Run directory (overrides 'out' in the config)");
  app.add_flag("--force", g.force, "Replace existing artifacts that differ");

  auto* make_oracle = app.add_subcommand("make-oracle", "Write the seeded Potts oracle");
  auto* curate = app.add_subcommand("curate", "Curate the mutational dataset and split it");

  std::vector<std::string> train_methods;
  auto* train = app.add_subcommand("train", "Train one or more methods");
  train->add_option("methods", train_methods, "genhance | genhance-noCC | genhance-noSmoothCC | gendisc")
      ->required()
      ->check(CLI::IsMember(genhance::train_methods()));

  std::vector<std::string> sample_methods;
  std::optional<std::size_t> n;
  auto* sample = app.add_subcommand("sample", "Generate candidate pools");
  sample->add_option("methods", sample_methods, "genhance[-noCC|-noSmoothCC] | gendisc | mcmc-random | mcmc-infill")
      ->required()
      ->check(CLI::IsMember(genhance::sample_methods()));
  sample->add_option("-n,--count", n, "Pool size (default: sampling.n)")->check(CLI::PositiveNumber);

  std::vector<std::string> pools, rankers;
  auto* evaluate = app.add_subcommand("evaluate", "Score pools against the oracle");
  evaluate->add_option("--pool", pools, "Pool method names (default: every pool present)");
  evaluate->add_option("--ranker", rankers, "native | oracle | random | gendisc | genhance... (default: config)");

  auto* report = app.add_subcommand("report", "Summarise every evaluation report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(genhance::ErrorCategory::usage);
  }

  try {
    auto exp = open(g);
    if (*make_oracle) {
      exp.make_oracle();
      std::cout << exp.oracle_path().string() << '\n';
    } else if (*curate) {
      exp.curate();
      std::cout << exp.train_data_path().string() << '\n';
    } else if (*train) {
      for (const auto& m : train_methods) {
        std::cerr << "training " << m << '\n';
        exp.train(m);
      }
    } else if (*sample) {
      for (const auto& m : sample_methods) {
        exp.sample(m, n);
        std::cout << exp.pool_path(m).string() << '\n';
      }
    } else if (*evaluate) {
      auto reports = exp.evaluate(pools, rankers);
      std::cout << genhance::metric_table(reports);
    } else if (*report) {
      std::cout << exp.report();
    }
  } catch (const genhance::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
