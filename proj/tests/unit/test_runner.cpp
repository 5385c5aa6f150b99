#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "hallu/runner.hpp"
#include "support.hpp"

namespace hallu {
namespace {

const std::filesystem::path kConfigs = HALLU_CONFIG_DIR;

nlohmann::json smoke() {
  std::ifstream in(kConfigs / "smoke.json");
  return nlohmann::json::parse(in);
}

std::string config_error(const nlohmann::json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfig, RejectsUnknownKeysWithTheirPath) {
  auto j = smoke();
  j["colour"] = 1;
  EXPECT_NE(config_error(j).find("colour"), std::string::npos);
  j = smoke();
  j["train"]["learning_rate"] = 0.1;
  EXPECT_NE(config_error(j).find("train.learning_rate"), std::string::npos);
  j = smoke();
  j["kg"]["synth"]["objects_per_pair"]["mode"] = "x";
  EXPECT_NE(config_error(j).find("mode"), std::string::npos);
}

TEST(RunConfig, RejectsIllTypedAndInvalidValues) {
  auto j = smoke();
  j["context_len"] = "long";
  EXPECT_NE(config_error(j).find("context_len"), std::string::npos);
  j = smoke();
  j["grid"][0]["epochs"] = {1, "two"};
  EXPECT_FALSE(config_error(j).empty());
  j = smoke();
  j["grid"][0]["models"] = {"xl"};
  EXPECT_NE(config_error(j).find("xl"), std::string::npos);
  j = smoke();
  j["models"][0]["name"] = "x_s";
  EXPECT_FALSE(config_error(j).empty());
  j = smoke();
  j["detectors"]["tasks"] = {"paragraph"};
  EXPECT_FALSE(config_error(j).empty());
  j = smoke();
  j.erase("grid");
  EXPECT_FALSE(config_error(j).empty());
}

TEST(RunConfig, RoundTripsAndHashesCanonically) {
  const auto cfg = RunConfig::from_json(smoke());
  const auto again = RunConfig::from_json(cfg.to_json());
  EXPECT_EQ(again.to_json(), cfg.to_json());
  EXPECT_EQ(again.hash(), cfg.hash());
  // Level 1.0 is always present.
  EXPECT_EQ(cfg.split.subsample_levels.back(), 1.0);

  auto j = smoke();
  j["seed"] = 8;
  EXPECT_NE(RunConfig::from_json(j).hash(), cfg.hash());
  EXPECT_NE(cfg.derived_seed("kg"), cfg.derived_seed("split"));
  EXPECT_EQ(cfg.derived_seed("kg"), again.derived_seed("kg"));
}

// Key paths of a JSON value; array elements collapse to "[]".
void json_paths(const nlohmann::json& j, const std::string& prefix, std::set<std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      out.insert(prefix + k);
      json_paths(v, prefix + k + ".", out);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) json_paths(v, prefix + "[].", out);
  }
}

void schema_paths(const nlohmann::json& s, const std::string& prefix, std::set<std::string>& out) {
  if (s.contains("properties")) {
    for (const auto& [k, v] : s["properties"].items()) {
      out.insert(prefix + k);
      schema_paths(v, prefix + k + ".", out);
    }
  }
  if (s.contains("items")) schema_paths(s["items"], prefix + "[].", out);
}

TEST(RunConfig, SchemaListsExactlyTheAcceptedKeys) {
  std::ifstream in(kConfigs / "run_config.schema.json");
  const auto schema = nlohmann::json::parse(in);
  std::set<std::string> from_schema, from_config;
  schema_paths(schema, "", from_schema);
  json_paths(RunConfig::from_json(smoke()).to_json(), "", from_config);
  EXPECT_EQ(from_schema, from_config);
}

TEST(RunConfig, EveryShippedConfigLoads) {
  for (const auto& e : std::filesystem::directory_iterator(kConfigs)) {
    if (e.path().extension() != ".json" || e.path().filename() == "run_config.schema.json") continue;
    EXPECT_NO_THROW(RunConfig::load(e.path())) << e.path();
  }
}

TEST(Grid, UnionOfCellsIsDeduplicatedAndSorted) {
  auto j = smoke();
  j["models"].push_back({{"name", "m"}, {"n_layers", 1}, {"n_heads", 2}, {"d_model", 16}, {"d_ff", 32}});
  j["split"]["levels"] = {0.25, 0.5, 1.0};
  j["grid"] = nlohmann::json::array();
  j["grid"].push_back({{"models", {"xs", "s", "m"}}, {"levels", {1.0}}, {"epochs", {1, 2, 5, 10}}});
  auto cfg = RunConfig::from_json(j);
  auto runs = lm_runs(cfg);
  EXPECT_EQ(runs.size(), 12u);
  EXPECT_TRUE(std::is_sorted(runs.begin(), runs.end()));

  j["grid"].push_back({{"models", {"m"}}, {"levels", {1.0, 0.25}}, {"epochs", {10}}});
  cfg = RunConfig::from_json(j);
  runs = lm_runs(cfg);
  EXPECT_EQ(runs.size(), 13u);
  std::set<std::string> ids;
  for (const auto& r : runs) ids.insert(r.id());
  EXPECT_EQ(ids.size(), runs.size());
  EXPECT_EQ(runs.front().family() + "/" + std::to_string(runs.front().epochs), runs.front().id());
}

TEST(Grid, DetectorRunsCoverTasksTypesAndLayers) {
  const auto cfg = RunConfig::from_json(smoke());
  const auto targets = detector_targets(cfg);
  ASSERT_EQ(targets.size(), 1u);
  EXPECT_EQ(targets[0].model, "s");
  const auto runs = detector_runs(cfg);
  // Two tasks: head and full at the top block plus one head below it.
  EXPECT_EQ(runs.size(), 6u);
  std::set<std::string> names;
  for (const auto& r : runs) {
    names.insert(r.name());
    EXPECT_EQ(r.top, r.layer == 2);
    if (r.type == DetectorType::kFull) EXPECT_TRUE(r.top);
  }
  EXPECT_EQ(names.size(), runs.size());
  EXPECT_TRUE(names.count("sentence_head_L1"));
  EXPECT_TRUE(names.count("token_full_L2"));
}

TEST(Runner, MissingUpstreamStageIsADependencyError) {
  testing::TempDir dir("runner");
  Runner r(RunConfig::from_json(smoke()), dir.path());
  try {
    r.run_stage("split");
    FAIL() << "expected DependencyError";
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("gen-kg"), std::string::npos) << e.what();
  }
  EXPECT_THROW(r.run_stage("nonsense"), ConfigError);
}

TEST(Runner, CompletedUnitsAreSkipped) {
  testing::TempDir dir("runner");
  Runner r(RunConfig::from_json(smoke()), dir.path());
  EXPECT_EQ(r.run_stage("gen-kg").executed, 1u);
  const auto again = r.run_stage("gen-kg");
  EXPECT_EQ(again.executed, 0u);
  EXPECT_EQ(again.skipped, 1u);
  EXPECT_EQ(r.run_stage("split").executed, 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
}

TEST(Runner, DifferentConfigInSameDirectoryNeedsForce) {
  testing::TempDir dir("runner");
  Runner(RunConfig::from_json(smoke()), dir.path()).run_stage("gen-kg");
  auto j = smoke();
  j["seed"] = 99;
  EXPECT_THROW(Runner(RunConfig::from_json(j), dir.path()), ConfigError);
  Runner forced(RunConfig::from_json(j), dir.path(), RunOptions{true, 1});
  // The old marker carries the old hash, so the unit reruns.
  EXPECT_EQ(forced.run_stage("gen-kg").executed, 1u);
}

}  // namespace
}  // namespace hallu
