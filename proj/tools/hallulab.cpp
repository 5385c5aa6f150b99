// hallulab: run the lab pipeline stage by stage or as one sweep.

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hallu/runner.hpp"

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNumerical = 4;

hallu::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw hallu::ConfigError(fmt::format("cannot open config {}", path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw hallu::ConfigError(fmt::format("{}: {}", path, e.what()));
  }
  if (seed) j["seed"] = *seed;
  return hallu::RunConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-set hallucination lab"};
  std::string stage;
  std::string stage_flag;
  std::string config;
  std::string out;
  bool force = false;
  int parallel = 1;
  std::optional<std::uint64_t> seed;
  bool verbose = false;

  std::vector<std::string> choices = hallu::kStages;
  choices.push_back("sweep");
  app.add_option("command", stage, "Stage to run, or sweep")->check(CLI::IsMember(choices));
  app.add_option("--stage", stage_flag, "Stage to run (same as the positional)")->check(CLI::IsMember(choices));
  app.add_option("--config", config, "Run config JSON")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out, "Run directory")->required();
  app.add_flag("--force", force, "Reuse a run directory created with a different config");
  app.add_option("--parallel", parallel, "Worker threads per stage")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Override the config seed");
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  if (!stage.empty() && !stage_flag.empty() && stage != stage_flag) {
    fmt::print(stderr, "error: conflicting stages '{}' and '{}'\n", stage, stage_flag);
    return kExitConfig;
  }
  if (stage.empty()) stage = stage_flag;
  if (stage.empty()) {
    fmt::print(stderr, "error: a stage is required ({})\n", fmt::join(choices, ", "));
    return kExitConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    hallu::Runner runner(load_config(config, seed), out, {force, parallel});
    if (stage == "sweep") {
      for (const auto& [name, stats] : runner.sweep()) {
        spdlog::info("{}: {} run, {} up to date", name, stats.executed, stats.skipped);
      }
    } else {
      const auto stats = runner.run_stage(stage);
      spdlog::info("{}: {} run, {} up to date", stage, stats.executed, stats.skipped);
    }
  } catch (const hallu::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const hallu::DependencyError& e) {
    fmt::print(stderr, "dependency error: {}\n", e.what());
    return kExitDependency;
  } catch (const hallu::NumericalError& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitOther;
  }
  return 0;
}
