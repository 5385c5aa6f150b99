#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hallu/knowledge_graph.hpp"
#include "hallu/object_trie.hpp"
#include "hallu/sampler.hpp"

namespace hallu {

struct SentenceLabel {
  std::string record_id;
  bool is_hallucination = false;
  std::optional<std::string> matched_object;
  // The prompt pair is absent from the reference; excluded from rates.
  bool out_of_reference = false;
};

// Exact, whitespace-exact match of the decoded object against the objects of
// the record's (subject, predicate) in `reference`.
SentenceLabel label_sentence(const GenerationRecord& rec, const KnowledgeGraph& reference);

struct TokenLabel {
  std::string record_id;
  // Position within object_tokens; object_tokens.size() denotes the
  // terminator (<EOS>, or the cap for length-capped records).
  std::optional<std::size_t> first_hallucinated_index;
  // One entry per labeled position: every object token when no token is
  // hallucinated, otherwise positions 0..=first_hallucinated_index.
  std::vector<bool> labels;
  bool out_of_reference = false;
};

// A valid strict prefix that stops before completing any object is
// hallucinated at its terminator position.
TokenLabel label_tokens(const GenerationRecord& rec, const ObjectTrie& trie);

struct PromptPR {
  std::string subject;
  std::string predicate;
  double precision = 0.0;
  double recall = 0.0;
};

struct PRPoint {
  double temperature = 0.0;
  double precision = 0.0;  // 1 - hallucination rate
  double recall = 0.0;     // mean over prompts
  std::size_t records = 0;
  std::size_t out_of_reference = 0;
  std::vector<PromptPR> per_prompt;
};

// `records` must share one temperature and hold exactly n_samples records
// for every prompt. Throws Error listing the prompts that do not.
PRPoint pr_at_temperature(std::span<const GenerationRecord> records,
                          const KnowledgeGraph& reference, int n_samples);

struct RateSummary {
  double rate = 0.0;
  std::size_t records = 0;
  std::size_t hallucinated = 0;
  std::size_t out_of_reference = 0;
};

// Mean of label_sentence verdicts over in-reference records.
RateSummary hallucination_rate(std::span<const GenerationRecord> records,
                               const KnowledgeGraph& reference);

struct SeenUnseenRates {
  RateSummary seen;
  RateSummary unseen;
  // In neither reference.
  std::size_t unmatched = 0;
};

// Records whose prompt pair lies in `seen` are scored against it, the rest
// against `unseen` (the held-out split).
SeenUnseenRates hallucination_rates(std::span<const GenerationRecord> records,
                                    const KnowledgeGraph& seen, const KnowledgeGraph& unseen);

// Record identity plus both label kinds, stored next to the generations.
struct LabeledRecord {
  GenerationRecord record;
  SentenceLabel sentence;
  TokenLabel token;
};

std::vector<LabeledRecord> label_records(std::span<const GenerationRecord> records,
                                         const KnowledgeGraph& reference, const ObjectTrie& trie);

void write_labels(const std::filesystem::path& path, std::span<const LabeledRecord> labeled);
std::vector<LabeledRecord> read_labels(const std::filesystem::path& path);

struct AggregateRow {
  std::string model_id;
  int epochs = 0;
  double flops = 0.0;
  double level = 1.0;
  double temperature = 0.0;
  std::string split;
  double rate = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

void write_aggregates_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows);
std::vector<AggregateRow> read_aggregates_csv(const std::filesystem::path& path);

}  // namespace hallu
