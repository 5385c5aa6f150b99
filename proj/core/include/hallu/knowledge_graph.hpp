#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hallu {

struct Triplet {
  std::string subject;
  std::string predicate;
  std::string object;

  friend auto operator<=>(const Triplet&, const Triplet&) = default;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// Collapses internal whitespace runs to one space and trims the ends.
// Throws Error if the result is empty, contains a tab/CR/LF, or contains a
// whitespace token equal to a reserved special-token literal.
std::string canonical_field(std::string_view raw);

using PairKey = std::pair<std::string, std::string>;

struct PairLess {
  using is_transparent = void;
  template <class A, class B>
  bool operator()(const A& a, const B& b) const {
    const std::string_view as = a.first, ap = a.second;
    const std::string_view bs = b.first, bp = b.second;
    return as < bs || (as == bs && ap < bp);
  }
};

// Immutable set of facts with its (subject, predicate) -> objects index.
// Objects under a pair are kept in lexicographic order.
class KnowledgeGraph {
 public:
  using PairIndex = std::map<PairKey, std::vector<std::string>, PairLess>;
  using SubjectIndex = std::map<std::string, std::set<std::string>, std::less<>>;

  KnowledgeGraph() = default;

  // Fields must already be canonical. Duplicates are dropped; their count is
  // written to `duplicates` when non-null.
  static KnowledgeGraph from_triplets(std::vector<Triplet> triplets,
                                      std::size_t* duplicates = nullptr);

  const std::vector<Triplet>& triplets() const noexcept { return triplets_; }
  std::size_t size() const noexcept { return triplets_.size(); }
  bool empty() const noexcept { return triplets_.empty(); }
  std::size_t pair_count() const noexcept { return sp_index_.size(); }

  std::span<const std::string> lookup_objects(std::string_view subject,
                                              std::string_view predicate) const;
  bool contains(const Triplet& t) const;

  const PairIndex& pair_index() const noexcept { return sp_index_; }
  const SubjectIndex& subject_index() const noexcept { return subject_index_; }

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.triplets_ == b.triplets_;
  }

 private:
  std::vector<Triplet> triplets_;  // sorted, unique
  PairIndex sp_index_;
  SubjectIndex subject_index_;
};

struct IngestReport {
  std::size_t lines_read = 0;
  std::size_t duplicates_dropped = 0;
};

// Parses `subject<TAB>predicate<TAB>object` lines. Throws ParseError with
// the 1-based line number on malformed input, and on empty input.
KnowledgeGraph parse_triplets(std::istream& in, IngestReport* report = nullptr);
KnowledgeGraph ingest(const std::filesystem::path& path, IngestReport* report = nullptr);

void serialize(const KnowledgeGraph& kg, std::ostream& out);
void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets);

// Discrete count distribution over [min, max].
struct CountDistribution {
  enum class Shape { kUniform, kGeometric, kZipf };

  int min = 1;
  int max = 1;
  Shape shape = Shape::kUniform;
  // Geometric: ratio between successive probabilities. Zipf: exponent.
  double param = 0.5;

  std::vector<double> pmf() const;
  double mean() const;
};

std::string_view to_string(CountDistribution::Shape shape);
CountDistribution::Shape parse_shape(std::string_view name);

inline constexpr int kMaxObjectsPerPair = 20;

struct SynthConfig {
  std::size_t n_subjects = 1000;
  std::size_t n_predicates = 16;
  CountDistribution predicates_per_subject{1, 3};
  CountDistribution objects_per_pair{1, kMaxObjectsPerPair};
  CountDistribution entity_name_length{1, 3};
  std::size_t vocab_pool_size = 512;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Deterministic in cfg. Entity names are whitespace-separated sub-word
// tokens drawn from a shared pool so distinct entities share tokens.
KnowledgeGraph synthesize(const SynthConfig& cfg);

// The i-th pool token; distinct i give distinct strings.
std::string pool_token(std::size_t i);

}  // namespace hallu
