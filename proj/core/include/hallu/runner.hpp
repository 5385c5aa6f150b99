#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hallu/corpus.hpp"
#include "hallu/detector.hpp"
#include "hallu/knowledge_graph.hpp"
#include "hallu/trainer.hpp"

namespace hallu {

struct ModelSpec {
  std::string name;
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
};

// One Cartesian block of the LM grid.
struct GridCell {
  std::vector<std::string> models;
  std::vector<double> levels;
  std::vector<int> epochs;
};

struct GenerationSpec {
  std::vector<double> temperatures = kDefaultTemperatures;
  int n_samples = 16;
  int max_len = 0;  // 0: longest tokenized object + 2
  // Cap on evaluated prompts per split, chosen by seeded hash; 0 keeps all.
  std::size_t max_prompts = 0;
  double rate_temperature = 1.0;
};

struct DetectorMatrix {
  bool enabled = true;
  std::vector<std::string> models;  // empty: every ladder model
  double level = 1.0;
  int epochs = 20;
  std::vector<DetectorTask> tasks{DetectorTask::kSentence, DetectorTask::kToken};
  std::vector<DetectorType> types{DetectorType::kHead, DetectorType::kFull};
  // Extra head detectors on every block (sentence and token tasks).
  bool layer_sweep = true;
  int n_generations = 5;
  double temperature = 1.0;
  std::size_t max_prompts = 0;
  bool eval_pvs = true;
  int batch_size = 32;
  double step_scale = 1.0;
  std::int64_t eval_every = 250;
  int patience = 5;
  double threshold = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  // "synth" or "ingest"
  std::string kg_source = "synth";
  std::filesystem::path kg_path;
  SynthConfig synth;
  SplitSpec split;
  std::size_t max_objects_per_pair = kMaxObjectsPerPair;
  int context_len = 256;
  std::vector<ModelSpec> models;
  TrainConfig train;  // epochs come from the grid
  std::vector<GridCell> grid;
  GenerationSpec generation;
  DetectorMatrix detectors;

  // Strict: unknown keys and ill-typed values throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  // Hex digest of the canonical JSON form.
  std::string hash() const;

  const ModelSpec& model(std::string_view name) const;
  std::uint64_t derived_seed(std::string_view purpose) const;
};

struct LmRunKey {
  std::string model;
  double level = 1.0;
  int epochs = 1;

  std::string family() const;  // "{model}_{level}"
  std::string id() const;      // "{model}_{level}/{epochs}"
  friend auto operator<=>(const LmRunKey&, const LmRunKey&) = default;
};

// Deduplicated union of the grid cells, sorted.
std::vector<LmRunKey> lm_runs(const RunConfig& cfg);

struct DetectorKey {
  LmRunKey lm;
  DetectorTask task = DetectorTask::kSentence;
  DetectorType type = DetectorType::kHead;
  int layer = 0;  // resolved
  bool top = true;

  std::string name() const;  // "{task}_{type}_L{layer}"
  std::string id() const;
};

std::vector<LmRunKey> detector_targets(const RunConfig& cfg);
std::vector<DetectorKey> detector_runs(const RunConfig& cfg);

inline const std::vector<std::string> kStages = {"gen-kg", "split",          "train", "generate",
                                                 "label",  "train-detector", "eval",  "report"};

struct RunOptions {
  bool force = false;
  int parallel = 1;
};

struct StageStats {
  std::size_t executed = 0;
  std::size_t skipped = 0;
};

// A run directory: manifest.json with the config and its hash, and one
// marker per completed unit recording the config hash, the markers of its
// inputs and a fresh nonce.
class Runner {
 public:
  // Creates or opens `root`. Throws ConfigError if the directory holds a
  // different config and `force` is not set.
  Runner(RunConfig cfg, std::filesystem::path root, RunOptions options = {});

  const RunConfig& config() const noexcept { return cfg_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  // Runs one stage over all its units. Throws DependencyError naming the
  // missing upstream stage.
  StageStats run_stage(std::string_view stage);
  // All stages in order; returns per-stage stats.
  std::vector<std::pair<std::string, StageStats>> sweep();

  std::filesystem::path lm_dir(const LmRunKey& k) const;
  std::filesystem::path gen_dir(const LmRunKey& k) const;
  std::filesystem::path labels_dir(const LmRunKey& k) const;
  std::filesystem::path detector_data_dir(const LmRunKey& k) const;
  std::filesystem::path detector_dir(const DetectorKey& k) const;
  std::filesystem::path eval_dir(const DetectorKey& k) const { return detector_dir(k) / "eval"; }
  std::filesystem::path report_dir() const { return root_ / "report"; }

 private:
  struct Unit {
    std::filesystem::path dir;
    // (stage, directory) of every input unit.
    std::vector<std::pair<std::string, std::filesystem::path>> inputs;
    std::function<void(const std::filesystem::path&)> work;
    // Keep existing output when it was produced from the same inputs
    // (resumable stages).
    bool keep_partial = false;
  };

  StageStats execute(std::string_view stage, const std::vector<Unit>& units);
  nlohmann::json input_nonces(const Unit& u) const;
  bool up_to_date(const Unit& u) const;
  void require(std::string_view stage, const std::vector<Unit>& units) const;

  void gen_kg(const std::filesystem::path& dir) const;
  void build_split(const std::filesystem::path& dir) const;
  void train_lm(const LmRunKey& k, const std::filesystem::path& dir) const;
  void generate(const LmRunKey& k, const std::filesystem::path& dir) const;
  void label(const LmRunKey& k, const std::filesystem::path& dir) const;
  void detector_data(const LmRunKey& k, const std::filesystem::path& dir) const;
  void train_detector(const DetectorKey& k, const std::filesystem::path& dir) const;
  void eval_detector(const DetectorKey& k, const std::filesystem::path& dir) const;
  void report(const std::filesystem::path& dir) const;

  RunConfig cfg_;
  std::filesystem::path root_;
  RunOptions options_;
  std::string hash_;
};

inline constexpr std::string_view kMarkerFile = ".done.json";

}  // namespace hallu
