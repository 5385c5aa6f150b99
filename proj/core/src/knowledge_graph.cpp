#include "hallu/knowledge_graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <unordered_set>

#include <fmt/format.h>

#include "hallu/common.hpp"

namespace hallu {

std::string canonical_field(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  std::size_t token_start = 0;
  auto check_token = [&](std::size_t end) {
    if (end > token_start &&
        is_special_literal(std::string_view(out).substr(token_start, end - token_start))) {
      throw Error(fmt::format("field '{}' contains reserved token", raw));
    }
  };
  for (char c : raw) {
    if (c == '\t' || c == '\n' || c == '\r') {
      throw Error(fmt::format("field contains a reserved character (tab/CR/LF)"));
    }
    if (c == ' ' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      check_token(out.size());
      out.push_back(' ');
      token_start = out.size();
      pending_space = false;
    }
    out.push_back(c);
  }
  check_token(out.size());
  if (out.empty()) throw Error("empty field");
  return out;
}

KnowledgeGraph KnowledgeGraph::from_triplets(std::vector<Triplet> triplets,
                                             std::size_t* duplicates) {
  std::sort(triplets.begin(), triplets.end());
  const auto before = triplets.size();
  triplets.erase(std::unique(triplets.begin(), triplets.end()), triplets.end());
  if (duplicates != nullptr) *duplicates = before - triplets.size();

  KnowledgeGraph kg;
  kg.triplets_ = std::move(triplets);
  for (const auto& t : kg.triplets_) {
    // Sorted input keeps each object vector in lexicographic order.
    kg.sp_index_[PairKey{t.subject, t.predicate}].push_back(t.object);
    kg.subject_index_[t.subject].insert(t.predicate);
  }
  return kg;
}

std::span<const std::string> KnowledgeGraph::lookup_objects(std::string_view subject,
                                                            std::string_view predicate) const {
  const auto it = sp_index_.find(std::pair{subject, predicate});
  if (it == sp_index_.end()) return {};
  return it->second;
}

bool KnowledgeGraph::contains(const Triplet& t) const {
  return std::binary_search(triplets_.begin(), triplets_.end(), t);
}

KnowledgeGraph parse_triplets(std::istream& in, IngestReport* report) {
  std::vector<Triplet> triplets;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::array<std::string_view, 3> fields;
    std::size_t nfields = 0;
    std::size_t start = 0;
    const std::string_view view(line);
    while (true) {
      const auto tab = view.find('\t', start);
      if (nfields == 3) {
        nfields = 4;
        break;
      }
      fields[nfields++] = view.substr(start, tab == std::string_view::npos ? tab : tab - start);
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (nfields != 3) {
      throw ParseError(fmt::format("line {}: expected 3 tab-separated fields", lineno), lineno);
    }
    try {
      triplets.push_back(Triplet{canonical_field(fields[0]), canonical_field(fields[1]),
                                 canonical_field(fields[2])});
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(fmt::format("line {}: {}", lineno, e.what()), lineno);
    }
  }
  if (lineno == 0) throw ParseError("empty triplet file", 0);

  std::size_t dups = 0;
  auto kg = KnowledgeGraph::from_triplets(std::move(triplets), &dups);
  if (report != nullptr) {
    report->lines_read = lineno;
    report->duplicates_dropped = dups;
  }
  return kg;
}

KnowledgeGraph ingest(const std::filesystem::path& path, IngestReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open triplet file {}", path.string()));
  return parse_triplets(in, report);
}

void serialize(const KnowledgeGraph& kg, std::ostream& out) {
  for (const auto& t : kg.triplets()) {
    out << t.subject << '\t' << t.predicate << '\t' << t.object << '\n';
  }
}

void write_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& t : triplets) {
    out << t.subject << '\t' << t.predicate << '\t' << t.object << '\n';
  }
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

// ---------------------------------------------------------------------------
// Synthesis

std::vector<double> CountDistribution::pmf() const {
  std::vector<double> w;
  for (int k = min; k <= max; ++k) {
    switch (shape) {
      case Shape::kUniform: w.push_back(1.0); break;
      case Shape::kGeometric: w.push_back(std::pow(param, k - min)); break;
      case Shape::kZipf: w.push_back(std::pow(static_cast<double>(k), -param)); break;
    }
  }
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

double CountDistribution::mean() const {
  const auto p = pmf();
  double m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) m += p[i] * (min + static_cast<int>(i));
  return m;
}

std::string_view to_string(CountDistribution::Shape shape) {
  switch (shape) {
    case CountDistribution::Shape::kUniform: return "uniform";
    case CountDistribution::Shape::kGeometric: return "geometric";
    case CountDistribution::Shape::kZipf: return "zipf";
  }
  return "uniform";
}

CountDistribution::Shape parse_shape(std::string_view name) {
  if (name == "uniform") return CountDistribution::Shape::kUniform;
  if (name == "geometric") return CountDistribution::Shape::kGeometric;
  if (name == "zipf") return CountDistribution::Shape::kZipf;
  throw ConfigError(fmt::format("unknown distribution shape '{}'", name));
}

namespace {

void validate_distribution(const CountDistribution& d, std::string_view what) {
  if (d.min < 1 || d.max < d.min) {
    throw ConfigError(fmt::format("{}: need 1 <= min <= max (got {}..{})", what, d.min, d.max));
  }
  if (d.shape == CountDistribution::Shape::kGeometric && !(d.param > 0.0)) {
    throw ConfigError(fmt::format("{}: geometric ratio must be positive", what));
  }
  if (d.shape == CountDistribution::Shape::kZipf && !(d.param >= 0.0)) {
    throw ConfigError(fmt::format("{}: zipf exponent must be non-negative", what));
  }
}

constexpr std::array<char, 18> kConsonants = {'b', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n',
                                              'p', 'r', 's', 't', 'v', 'w', 'y', 'z', 'j'};
constexpr std::array<char, 5> kVowels = {'a', 'e', 'i', 'o', 'u'};
constexpr std::size_t kSyllables = kConsonants.size() * kVowels.size();

constexpr std::array<std::string_view, 24> kPredicateNames = {
    "album_track",  "author_of",    "birth_place",   "member_of",   "located_in",
    "founded_by",   "spouse",       "child",         "award",       "genre",
    "employer",     "educated_at",  "citizenship",   "instrument",  "occupation",
    "publisher",    "record_label", "director",      "cast_member", "composer",
    "headquarters", "subsidiary",   "language",      "sibling"};

class Synthesizer {
 public:
  explicit Synthesizer(const SynthConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    pred_dist_ = make(cfg.predicates_per_subject);
    obj_dist_ = make(cfg.objects_per_pair);
    len_dist_ = make(cfg.entity_name_length);
  }

  KnowledgeGraph run() {
    std::vector<std::string> predicates;
    for (std::size_t k = 0; k < cfg_.n_predicates; ++k) {
      predicates.push_back(k < kPredicateNames.size()
                               ? std::string(kPredicateNames[k])
                               : fmt::format("relation_{}", k));
    }

    std::unordered_set<std::string> subject_names;
    std::vector<Triplet> triplets;
    bool any_multi = false;
    std::vector<std::size_t> pred_order(predicates.size());
    for (std::size_t i = 0; i < cfg_.n_subjects; ++i) {
      std::string subject = fresh_name(subject_names);
      const auto n_pred = std::min<std::size_t>(sample(pred_dist_, cfg_.predicates_per_subject),
                                                predicates.size());
      for (std::size_t k = 0; k < pred_order.size(); ++k) pred_order[k] = k;
      // Partial Fisher-Yates: first n_pred entries are a uniform subset.
      for (std::size_t k = 0; k < n_pred; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pred_order.size() - 1);
        std::swap(pred_order[k], pred_order[pick(rng_)]);
      }
      for (std::size_t k = 0; k < n_pred; ++k) {
        const auto n_obj = sample(obj_dist_, cfg_.objects_per_pair);
        any_multi = any_multi || n_obj >= 2;
        std::unordered_set<std::string> objects;
        for (std::size_t j = 0; j < n_obj; ++j) {
          triplets.push_back(Triplet{subject, predicates[pred_order[k]], fresh_name(objects)});
        }
      }
    }

    if (!any_multi && cfg_.objects_per_pair.max >= 2 && !triplets.empty()) {
      // Guarantee at least one multi-object pair when the support allows it.
      const Triplet first = triplets.front();
      std::unordered_set<std::string> objects{first.object};
      triplets.push_back(Triplet{first.subject, first.predicate, fresh_name(objects)});
    }
    return KnowledgeGraph::from_triplets(std::move(triplets));
  }

 private:
  static std::discrete_distribution<int> make(const CountDistribution& d) {
    const auto p = d.pmf();
    return std::discrete_distribution<int>(p.begin(), p.end());
  }

  std::size_t sample(std::discrete_distribution<int>& dist, const CountDistribution& d) {
    return static_cast<std::size_t>(d.min + dist(rng_));
  }

  std::string random_name() {
    const auto len = sample(len_dist_, cfg_.entity_name_length);
    std::uniform_int_distribution<std::size_t> tok(0, cfg_.vocab_pool_size - 1);
    std::string name;
    for (std::size_t i = 0; i < len; ++i) {
      if (i > 0) name.push_back(' ');
      name += pool_token(tok(rng_));
    }
    return name;
  }

  std::string fresh_name(std::unordered_set<std::string>& taken) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      auto name = random_name();
      if (taken.insert(name).second) return name;
    }
    throw ConfigError("vocab_pool_size/entity_name_length too small to produce distinct names");
  }

  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
  std::discrete_distribution<int> pred_dist_;
  std::discrete_distribution<int> obj_dist_;
  std::discrete_distribution<int> len_dist_;
};

}  // namespace

std::string pool_token(std::size_t i) {
  std::string out;
  do {
    const auto s = i % kSyllables;
    out.insert(out.begin(), kVowels[s % kVowels.size()]);
    out.insert(out.begin(), kConsonants[s / kVowels.size()]);
    i /= kSyllables;
  } while (i > 0);
  return out;
}

void SynthConfig::validate() const {
  if (n_subjects == 0) throw ConfigError("synth: n_subjects must be positive");
  if (n_predicates == 0) throw ConfigError("synth: n_predicates must be positive");
  if (vocab_pool_size == 0) throw ConfigError("synth: vocab_pool_size must be positive");
  validate_distribution(predicates_per_subject, "predicates_per_subject");
  validate_distribution(objects_per_pair, "objects_per_pair");
  validate_distribution(entity_name_length, "entity_name_length");
  if (objects_per_pair.max > kMaxObjectsPerPair) {
    throw ConfigError(fmt::format("objects_per_pair.max must be <= {}", kMaxObjectsPerPair));
  }
}

KnowledgeGraph synthesize(const SynthConfig& cfg) {
  cfg.validate();
  return Synthesizer(cfg).run();
}

}  // namespace hallu
