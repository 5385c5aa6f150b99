#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hallu/common.hpp"
#include "hallu/tokenizer.hpp"
#include "hallu/transformer.hpp"

namespace hallu {

struct Prompt {
  std::string subject;
  std::string predicate;
  std::vector<TokenId> ids;  // ends with <O_TKN>

  static Prompt make(std::string subject, std::string predicate, const TokenizerVocab& vocab);
};

enum class StopReason { kEos, kLengthCap };
std::string_view to_string(StopReason r);

struct GenerationRecord {
  std::string subject;
  std::string predicate;
  double temperature = 0.0;
  int sample_idx = 0;
  std::vector<TokenId> object_tokens;  // excludes the terminating <EOS>
  std::string object_text;
  StopReason stop_reason = StopReason::kEos;
  std::string model_id;
  int epoch = 0;

  std::string record_id() const;
  nlohmann::json to_json() const;
  static GenerationRecord from_json(const nlohmann::json& j);
};

// Anything that can produce next-token logits incrementally.
class LogitSource {
 public:
  virtual ~LogitSource() = default;
  virtual std::unique_ptr<LogitSource> clone() const = 0;
  // Consumes `tok` and returns the logits for the next position.
  virtual const RowVector& feed(TokenId tok) = 0;
  // Logits returned by the most recent feed.
  virtual const RowVector& logits() const = 0;
};

class TransformerSource final : public LogitSource {
 public:
  TransformerSource(const Transformer& model, int capacity) : session_(model, capacity) {}
  std::unique_ptr<LogitSource> clone() const override {
    return std::make_unique<TransformerSource>(*this);
  }
  const RowVector& feed(TokenId tok) override { return session_.feed(tok); }
  const RowVector& logits() const override { return session_.logits(); }

 private:
  DecodeSession session_;
};

// Draws a token from softmax(logits / temperature) using the uniform draw
// `u` in [0, 1), or the argmax (lowest id on ties) when temperature == 0.
// <S_TKN>, <P_TKN>, <O_TKN> and <PAD> are never chosen.
TokenId sample_token(const RowVector& logits, double temperature, double u);

// The masked, tempered distribution sample_token draws from.
std::vector<double> sampling_distribution(const RowVector& logits, double temperature);

struct GenerateOptions {
  double temperature = 1.0;
  int n_samples = 1;
  int max_len = 8;
  std::uint64_t seed = 0;
  std::string model_id;
  int epoch = 0;
};

// `prompt_state` must already have consumed the prompt tokens.
// Temperature 0 is greedy decoding, so all samples are identical. Sample k
// of a prompt uses an RNG stream derived from (seed, prompt, temperature, k)
// which makes output independent of batching and resumption.
std::vector<GenerationRecord> generate(const LogitSource& prompt_state, const Prompt& prompt,
                                       const TokenizerVocab& vocab, const GenerateOptions& opt);

// Convenience overload running `model` on `prompt.ids` first.
std::vector<GenerationRecord> generate(const Transformer& model, const Prompt& prompt,
                                       const TokenizerVocab& vocab, const GenerateOptions& opt);

inline const std::vector<double> kDefaultTemperatures = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

struct SweepOptions {
  std::vector<double> temperatures = kDefaultTemperatures;
  int n_samples = 16;
  int max_len = 8;
  std::uint64_t seed = 0;
  std::string model_id;
  int epoch = 0;
  // Test hook: stop (as if interrupted) after this many (prompt, temperature)
  // groups have been written.
  std::optional<std::size_t> stop_after_groups;
};

struct SweepResult {
  std::size_t groups_written = 0;
  std::size_t groups_skipped = 0;
  bool complete = false;
};

// Writes prompts x temperatures x samples as JSON lines to `path`,
// appending one (prompt, temperature) group at a time. Complete groups
// already present are kept and skipped; a trailing partial group is
// discarded. `path` + ".done" marks a finished sweep.
SweepResult sweep_generate(const Transformer& model, std::span<const Prompt> prompts,
                           const TokenizerVocab& vocab, const SweepOptions& opt,
                           const std::filesystem::path& path);

std::vector<GenerationRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, std::span<const GenerationRecord> records);

// Longest tokenized object + 2.
int default_max_len(const KnowledgeGraph& kg, const TokenizerVocab& vocab);

}  // namespace hallu
