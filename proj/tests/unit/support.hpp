#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hallu/knowledge_graph.hpp"
#include "hallu/metrics.hpp"
#include "hallu/sampler.hpp"
#include "hallu/tokenizer.hpp"

namespace hallu::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("hallu_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline SynthConfig small_synth(std::uint64_t seed, std::size_t subjects = 60) {
  SynthConfig c;
  c.n_subjects = subjects;
  c.n_predicates = 5;
  c.predicates_per_subject = {1, 3};
  c.objects_per_pair = {1, 4, CountDistribution::Shape::kGeometric, 0.5};
  c.entity_name_length = {1, 3};
  c.vocab_pool_size = 24;
  c.seed = seed;
  return c;
}

// Linear scan over the triplet list.
inline bool brute_is_valid(const std::vector<Triplet>& triplets, const std::string& s,
                           const std::string& p, const std::string& o) {
  for (const auto& t : triplets) {
    if (t.subject == s && t.predicate == p && t.object == o) return true;
  }
  return false;
}

inline bool brute_pair_known(const std::vector<Triplet>& triplets, const std::string& s,
                             const std::string& p) {
  for (const auto& t : triplets) {
    if (t.subject == s && t.predicate == p) return true;
  }
  return false;
}

// First hallucinated position by scanning every object tokenization; the
// terminator position is tokens.size(). nullopt when `tokens` is a valid
// complete object.
inline std::optional<std::size_t> brute_first_hallucinated(const std::vector<Triplet>& triplets,
                                                           const TokenizerVocab& vocab,
                                                           const std::string& s, const std::string& p,
                                                           const std::vector<TokenId>& tokens) {
  std::size_t best = 0;
  bool complete = false;
  for (const auto& t : triplets) {
    if (t.subject != s || t.predicate != p) continue;
    const auto obj = vocab.tokenize(t.object);
    std::size_t k = 0;
    while (k < obj.size() && k < tokens.size() && obj[k] == tokens[k]) ++k;
    best = std::max(best, k);
    if (k == tokens.size() && obj.size() == tokens.size()) complete = true;
  }
  if (complete) return std::nullopt;
  return best;  // == tokens.size() for a valid strict prefix
}

// Average precision by explicit threshold enumeration: every distinct score
// is a threshold; precision and recall are recounted from scratch for each.
inline double brute_average_precision(const std::vector<double>& scores, const std::vector<bool>& labels) {
  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double positives = 0;
  for (bool l : labels) positives += l;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0, predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        ++predicted;
        tp += labels[i];
      }
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return ap;
}

inline GenerationRecord make_record(std::string s, std::string p, std::vector<TokenId> tokens,
                                    const TokenizerVocab& vocab, double temperature = 1.0, int idx = 0,
                                    StopReason stop = StopReason::kEos) {
  GenerationRecord r;
  r.subject = std::move(s);
  r.predicate = std::move(p);
  r.temperature = temperature;
  r.sample_idx = idx;
  r.object_text = vocab.decode(tokens);
  r.object_tokens = std::move(tokens);
  r.stop_reason = stop;
  r.model_id = "test";
  return r;
}

}  // namespace hallu::testing
