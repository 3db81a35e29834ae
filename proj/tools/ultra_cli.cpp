#include "ultra/reports.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr const char* kVerifyKinds[] = {"local", "global", "lemma1", "lemma2", "identities"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical checks of weighted Carleman estimates for ultraparabolic operators"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir;
  int threads = 1;
  std::uint64_t seed_base = 0;
  bool strict = false;
  app.add_option("--config", config_path, "YAML run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Output directory (overrides output.directory)");
  app.add_option("--threads", threads, "Suite items run in parallel")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed-base", seed_base, "First test-function seed");
  app.add_flag("--strict", strict, "Count inconclusive reports as failures");

  std::vector<std::string> kinds;
  std::vector<std::pair<CLI::App*, std::vector<std::string>>> subs;
  subs.emplace_back(app.add_subcommand("run", "Run every suite item listed in the config"), std::vector<std::string>{});
  subs.emplace_back(app.add_subcommand("check-rank", "Kalman rank of the drift pair"),
                    std::vector<std::string>{"check-rank"});
  subs.emplace_back(app.add_subcommand("constants", "c2 and the U_R bounding radius"),
                    std::vector<std::string>{"constants"});
  auto* verify = app.add_subcommand("verify", "Seeded verifiers over the alpha list");
  verify->add_option("--kind", kinds, "local, global, lemma1, lemma2, identities")
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(kVerifyKinds), std::end(kVerifyKinds))));
  subs.emplace_back(verify, std::vector<std::string>{});
  subs.emplace_back(app.add_subcommand("sweep", "Alpha sweep with trend summary"), std::vector<std::string>{"sweep"});
  subs.emplace_back(app.add_subcommand("simulate-jerk", "Simulate the jerk error equation"),
                    std::vector<std::string>{"simulate-jerk"});
  subs.emplace_back(app.add_subcommand("pipeline", "Simulate, reverse and check the decay bound"),
                    std::vector<std::string>{"pipeline"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ultra::kExitConfig;
  }

  ultra::RunConfig cfg;
  try {
    cfg = ultra::load_config(config_path);
  } catch (const ultra::Error& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return ultra::kExitConfig;
  }

  for (const auto& [sub, items] : subs) {
    if (!sub->parsed()) continue;
    if (sub == verify)
      cfg.suite.items = kinds.empty() ? std::vector<std::string>{"local"} : kinds;
    else if (!items.empty())
      cfg.suite.items = items;
  }

  ultra::RunOptions opts;
  if (!out_dir.empty()) opts.out = out_dir;
  opts.threads = threads;
  if (seed_opt->count()) opts.seed_base = seed_base;
  opts.strict = strict;
  try {
    const ultra::RunResult res = ultra::run(cfg, opts);
    int pass = 0, fail = 0, other = 0;
    for (const auto& r : res.reports) {
      if (r.status == ultra::Status::Pass)
        ++pass;
      else if (r.status == ultra::Status::Fail)
        ++fail;
      else
        ++other;
      if (r.status == ultra::Status::Fail)
        for (const auto& n : r.notes) std::cerr << r.suite << "/" << r.name << ": " << n << "\n";
    }
    std::cout << res.reports.size() << " reports: " << pass << " pass, " << fail << " fail, " << other
              << " other; written to " << res.directory.string() << "\n";
    return res.exit_code;
  } catch (const ultra::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ultra::kExitConfig;
  }
}
