#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallu/common.hpp"
#include "hallu/knowledge_graph.hpp"
#include "hallu/tokenizer.hpp"

namespace hallu {

enum class Split { kFvs = 0, kPvs = 1, kIvs = 2 };
inline constexpr std::array<Split, 3> kAllSplits = {Split::kFvs, Split::kPvs, Split::kIvs};

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct SplitSpec {
  double fvs_fraction = 0.9;
  double pvs_fraction = 0.09;
  double ivs_fraction = 0.01;
  std::vector<double> subsample_levels{0.01, 0.1, 1.0};
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Canonical text for a subsample level, used in file names ("0.01", "1").
std::string level_tag(double level);

struct FilterReport {
  std::size_t pairs_removed = 0;
  std::size_t triplets_removed = 0;
};

// Keeps exactly the triplets whose (subject, predicate) pair has at most
// `max_objects` objects.
KnowledgeGraph filter_long_tail(const KnowledgeGraph& kg, std::size_t max_objects = kMaxObjectsPerPair,
                                FilterReport* report = nullptr);

struct SubjectAssignment {
  Split split = Split::kFvs;
  // Subject belongs to every subsample level strictly greater than this draw.
  double subsample_draw = 0.0;
};

// Subject-level split + nested subsamples.
class DatasetBundle {
 public:
  const SplitSpec& spec() const noexcept { return spec_; }
  const std::vector<double>& levels() const noexcept { return spec_.subsample_levels; }

  // Triplets of `split` whose subject lies in the `level` subsample, in
  // (s, p, o) order.
  const std::vector<Triplet>& triplets(Split split, double level) const;
  const std::vector<Triplet>& triplets(Split split) const { return triplets(split, 1.0); }

  // FVS ∪ PVS at `level`: what the LM is trained on.
  std::vector<Triplet> lm_training(double level) const;

  const SubjectAssignment& assignment(std::string_view subject) const;
  // (split, levels containing the triplet's subject).
  std::pair<Split, std::vector<double>> provenance(const Triplet& t) const;

  std::size_t subject_count(Split split) const;

  // Writes {split}_{level}.tsv files and bundle.json.
  void save(const std::filesystem::path& dir) const;
  static DatasetBundle load(const std::filesystem::path& dir);

  friend DatasetBundle split(const KnowledgeGraph& kg, const SplitSpec& spec);

 private:
  std::size_t level_index(double level) const;

  SplitSpec spec_;
  std::map<std::string, SubjectAssignment, std::less<>> subjects_;
  // [split][level index]
  std::array<std::vector<std::vector<Triplet>>, 3> per_level_;
};

// Split assignment is a function of (subject, seed) only. Throws Error if a
// split or the smallest subsample of a split would be empty.
DatasetBundle split(const KnowledgeGraph& kg, const SplitSpec& spec);

// [<S_TKN>] tok(s) [<P_TKN>] tok(p) [<O_TKN>] tok(o) [<EOS>]
std::vector<TokenId> format_triplet(const Triplet& t, const TokenizerVocab& vocab);
// [<S_TKN>] tok(s) [<P_TKN>] tok(p) [<O_TKN>]
std::vector<TokenId> format_prompt(std::string_view subject, std::string_view predicate,
                                   const TokenizerVocab& vocab);
// Inverse of format_triplet. Throws Error on malformed sequences.
Triplet decode_triplet(std::span<const TokenId> ids, const TokenizerVocab& vocab);

struct PackedBatchStream {
  std::size_t context_len = 256;
  std::size_t window_count = 0;
  // window_count * context_len token IDs, row-major.
  std::vector<TokenId> tokens;
  // Start offset of each sequence within its window.
  std::vector<std::vector<std::uint32_t>> boundaries;

  std::span<const TokenId> window(std::size_t i) const {
    return std::span<const TokenId>(tokens).subspan(i * context_len, context_len);
  }
  // Number of non-pad tokens.
  std::size_t content_tokens() const;
  // The packed sequences in input order (padding dropped).
  std::vector<std::vector<TokenId>> unpack() const;

  // <stem>.bin (little-endian uint32) + <stem>.json sidecar.
  void save(const std::filesystem::path& stem) const;
  static PackedBatchStream load(const std::filesystem::path& stem);
};

class PackingError : public Error {
 public:
  PackingError(std::string what, std::size_t index) : Error(std::move(what)), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// Greedy first-fit in input order; no sequence straddles two windows and
// each window is <PAD>-filled at its tail. Throws PackingError naming the
// first sequence longer than context_len.
PackedBatchStream pack(std::span<const std::vector<TokenId>> sequences, std::size_t context_len = 256);

// Formats and packs `triplets` after a seeded shuffle.
PackedBatchStream build_stream(std::span<const Triplet> triplets, const TokenizerVocab& vocab,
                               std::size_t context_len, std::uint64_t shuffle_seed);

}  // namespace hallu
