#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallu/knowledge_graph.hpp"
#include "hallu/metrics.hpp"
#include "hallu/object_trie.hpp"
#include "hallu/oracle.hpp"
#include "hallu/sampler.hpp"
#include "hallu/trainer.hpp"
#include "hallu/transformer.hpp"

namespace hallu {

enum class DetectorTask { kSentence, kToken };
enum class DetectorType { kHead, kFull };
enum class Part { kTrain, kValidation, kTest };

std::string_view to_string(DetectorTask t);
std::string_view to_string(DetectorType t);
std::string_view to_string(Part p);
DetectorTask parse_task(std::string_view s);
DetectorType parse_type(std::string_view s);

struct DetectionExample {
  std::string example_id;
  DetectorTask task = DetectorTask::kSentence;
  // prompt ++ object ++ <EOS>. Length-capped generations get the <EOS>
  // appended at the cap.
  std::vector<TokenId> tokens;
  // Prediction points (positions in `tokens`) and their labels. Sentence:
  // the <EOS> position. Token: each object position up to and including
  // the first hallucinated one.
  std::vector<int> positions;
  std::vector<bool> labels;
  std::string subject, predicate;
  std::string record_id;
  std::string lm_id;
  int epoch = 0;
  Part part = Part::kTrain;

  nlohmann::json to_json() const;
  static DetectionExample from_json(const nlohmann::json& j);
};

// Detection examples of one task from labeled generations. Out-of-reference
// records are skipped.
std::vector<DetectionExample> make_examples(std::span<const LabeledRecord> records,
                                            DetectorTask task, const TokenizerVocab& vocab);

// Prompt-level partition: prompts ordered by seeded hash, the first
// round(train * N) go to train, the next round(validation * N) to validation.
std::map<PairKey, Part> assign_parts(std::span<const PairKey> prompts, std::uint64_t seed,
                                     double train_fraction = 0.9,
                                     double validation_fraction = 0.05);

struct DetectionDataOptions {
  int n_generations = 5;
  double temperature = 1.0;
  int max_len = 8;
  std::uint64_t seed = 0;
  std::string model_id;
  int epoch = 0;
  // false puts every example in the test part (held-out evaluation sets).
  bool partition = true;
  double train_fraction = 0.9;
  double validation_fraction = 0.05;
};

struct DetectionData {
  std::vector<LabeledRecord> records;
  std::vector<DetectionExample> sentence;
  std::vector<DetectionExample> token;

  const std::vector<DetectionExample>& examples(DetectorTask t) const {
    return t == DetectorTask::kSentence ? sentence : token;
  }
  std::vector<DetectionExample> part(DetectorTask t, Part p) const;
  // Labeled prediction points.
  std::size_t points(DetectorTask t) const;

  void save(const std::filesystem::path& dir) const;
  static DetectionData load(const std::filesystem::path& dir);
};

// n generations per prompt at the given temperature, labeled against
// `reference`, turned into both tasks' examples and partitioned by prompt.
DetectionData build_detection_data(const Transformer& lm, std::span<const Prompt> prompts,
                                   const TokenizerVocab& vocab, const KnowledgeGraph& reference,
                                   const ObjectTrie& trie, const DetectionDataOptions& opt);

struct StageSchedule {
  double peak_lr = 1e-3;
  std::int64_t warmup = 0;
  std::int64_t total = 1;
};

struct DetectorConfig {
  DetectorType type = DetectorType::kHead;
  DetectorTask task = DetectorTask::kSentence;
  // Block whose output is read; -1 means the top (after the final norm).
  // Full detectors always read the top.
  int layer = -1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  // Multiplies every step count of the schedules below.
  double step_scale = 1.0;
  std::int64_t min_steps = 10;
  std::int64_t eval_every = 250;
  int patience = 5;
  int divergence_evals = 3;
  AdamConfig adam;

  // Readout-only schedule (head detectors, and stage 1 of the sentence
  // full detector).
  StageSchedule probe() const;
  // All-weights schedule of full detectors.
  StageSchedule finetune() const;
  std::int64_t scaled_eval_every() const;
};

struct Detector {
  DetectorTask task = DetectorTask::kSentence;
  DetectorType type = DetectorType::kHead;
  int layer = 0;  // resolved block index, 1..n_layers
  std::string base_id;
  ModelConfig model;
  std::vector<double> weights;  // base LM weights, finetuned for full
  std::vector<double> readout;  // d_model weights then the bias

  // weights.bin + readout.bin (little-endian f64) + manifest.json
  void save(const std::filesystem::path& dir) const;
  static Detector load(const std::filesystem::path& dir);
};

struct HistoryPoint {
  int stage = 1;
  std::int64_t step = 0;
  double validation_metric = 0.0;  // AUC-PR, or minus log-loss if one class
};

struct DetectorRun {
  Detector detector;
  std::vector<HistoryPoint> history;
  int best_stage = 1;
  std::int64_t best_step = 0;
  bool diverged = false;
  std::optional<Detector> stage1;
};

class FrozenBaseViolation : public Error {
 public:
  using Error::Error;
};

struct ReadoutFit {
  std::vector<double> readout;
  std::vector<HistoryPoint> history;
  std::int64_t best_step = 0;
  bool diverged = false;
};

// Logistic-regression readout on fixed features (rows) with Adam, the given
// schedule and validation-driven early stopping.
ReadoutFit fit_readout(const RowMatrix& train_x, const std::vector<bool>& train_y,
                       const RowMatrix& val_x, const std::vector<bool>& val_y,
                       const StageSchedule& schedule, const DetectorConfig& cfg);

// Features of every prediction point of `examples` at `layer`.
RowMatrix extract_features(const Transformer& model, std::span<const DetectionExample> examples,
                           int layer);
std::vector<bool> point_labels(std::span<const DetectionExample> examples);

// Throws FrozenBaseViolation if any base weight changes.
DetectorRun train_head(const Transformer& base, std::string base_id,
                       std::span<const DetectionExample> train,
                       std::span<const DetectionExample> validation, const DetectorConfig& cfg);

// Sentence task: readout probe then all-weights finetuning, where the
// probe's end state competes in early stopping. Token task: one
// all-weights stage.
DetectorRun train_full(const Transformer& base, std::string base_id,
                       std::span<const DetectionExample> train,
                       std::span<const DetectionExample> validation, const DetectorConfig& cfg);

struct ScoredPoint {
  std::string example_id;  // token-task points carry "@position"
  DetectorTask task = DetectorTask::kSentence;
  double score = 0.0;
  bool label = false;
};

// Deterministic. Throws Error if an example does not fit the detector's
// vocabulary, context or task.
std::vector<ScoredPoint> score(const Detector& det, std::span<const DetectionExample> examples);

void write_scored(const std::filesystem::path& path, std::span<const ScoredPoint> points);
std::vector<ScoredPoint> read_scored(const std::filesystem::path& path);

struct DetectorEval {
  std::size_t points = 0;
  double prevalence = 0.0;
  double accuracy = 0.0;
  std::optional<double> auc_pr;  // absent when the set has one class
  std::vector<PRCurvePoint> curve;
};

DetectorEval evaluate(std::span<const ScoredPoint> points, double threshold = 0.5);

}  // namespace hallu
