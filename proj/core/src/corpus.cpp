#include "hallu/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace hallu {

namespace {
constexpr std::uint64_t kSubsampleSalt = 0x5ab5a3c1e0f7d2b9ULL;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kFvs: return "fvs";
    case Split::kPvs: return "pvs";
    case Split::kIvs: return "ivs";
  }
  return "fvs";
}

Split parse_split(std::string_view name) {
  if (name == "fvs") return Split::kFvs;
  if (name == "pvs") return Split::kPvs;
  if (name == "ivs") return Split::kIvs;
  throw ConfigError(fmt::format("unknown split '{}'", name));
}

std::string level_tag(double level) { return fmt::format("{}", level); }

void SplitSpec::validate() const {
  for (double f : {fvs_fraction, pvs_fraction, ivs_fraction}) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in (0, 1]");
  }
  if (std::abs(fvs_fraction + pvs_fraction + ivs_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  if (subsample_levels.empty()) throw ConfigError("at least one subsample level is required");
  for (double l : subsample_levels) {
    if (!(l > 0.0 && l <= 1.0)) throw ConfigError("subsample levels must lie in (0, 1]");
  }
}

KnowledgeGraph filter_long_tail(const KnowledgeGraph& kg, std::size_t max_objects,
                                FilterReport* report) {
  FilterReport r;
  std::vector<Triplet> kept;
  kept.reserve(kg.size());
  for (const auto& [key, objects] : kg.pair_index()) {
    if (objects.size() > max_objects) {
      ++r.pairs_removed;
      r.triplets_removed += objects.size();
      continue;
    }
    for (const auto& o : objects) kept.push_back(Triplet{key.first, key.second, o});
  }
  if (report != nullptr) *report = r;
  return KnowledgeGraph::from_triplets(std::move(kept));
}

// ---------------------------------------------------------------------------
// Splitting

DatasetBundle split(const KnowledgeGraph& kg, const SplitSpec& spec_in) {
  spec_in.validate();
  DatasetBundle b;
  b.spec_ = spec_in;
  auto& levels = b.spec_.subsample_levels;
  levels.push_back(1.0);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  const double cut_fvs = spec_in.fvs_fraction;
  const double cut_pvs = spec_in.fvs_fraction + spec_in.pvs_fraction;
  for (const auto& [subject, preds] : kg.subject_index()) {
    const double u = unit_interval(seeded_hash(subject, spec_in.seed));
    SubjectAssignment a;
    a.split = u < cut_fvs ? Split::kFvs : (u < cut_pvs ? Split::kPvs : Split::kIvs);
    a.subsample_draw = unit_interval(seeded_hash(subject, mix64(spec_in.seed ^ kSubsampleSalt)));
    b.subjects_.emplace(subject, a);
  }

  for (auto& per_split : b.per_level_) per_split.assign(levels.size(), {});
  for (const auto& t : kg.triplets()) {
    const auto& a = b.subjects_.at(t.subject);
    for (std::size_t li = 0; li < levels.size(); ++li) {
      if (a.subsample_draw < levels[li]) {
        b.per_level_[static_cast<int>(a.split)][li].push_back(t);
      }
    }
  }
  for (auto s : kAllSplits) {
    if (b.subject_count(s) == 0) {
      throw Error(fmt::format("split '{}' would be empty", to_string(s)));
    }
  }
  return b;
}

std::size_t DatasetBundle::level_index(double level) const {
  const auto& levels = spec_.subsample_levels;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (std::abs(levels[i] - level) < 1e-12) return i;
  }
  throw Error(fmt::format("unknown subsample level {}", level));
}

const std::vector<Triplet>& DatasetBundle::triplets(Split s, double level) const {
  return per_level_[static_cast<int>(s)][level_index(level)];
}

std::vector<Triplet> DatasetBundle::lm_training(double level) const {
  const auto& f = triplets(Split::kFvs, level);
  const auto& p = triplets(Split::kPvs, level);
  std::vector<Triplet> out;
  out.reserve(f.size() + p.size());
  std::merge(f.begin(), f.end(), p.begin(), p.end(), std::back_inserter(out));
  return out;
}

const SubjectAssignment& DatasetBundle::assignment(std::string_view subject) const {
  const auto it = subjects_.find(subject);
  if (it == subjects_.end()) throw Error(fmt::format("subject '{}' not in bundle", subject));
  return it->second;
}

std::pair<Split, std::vector<double>> DatasetBundle::provenance(const Triplet& t) const {
  const auto& a = assignment(t.subject);
  std::vector<double> in;
  for (double l : spec_.subsample_levels) {
    if (a.subsample_draw < l) in.push_back(l);
  }
  return {a.split, in};
}

std::size_t DatasetBundle::subject_count(Split s) const {
  return static_cast<std::size_t>(std::count_if(
      subjects_.begin(), subjects_.end(), [s](const auto& kv) { return kv.second.split == s; }));
}

void DatasetBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["fractions"] = {{"fvs", spec_.fvs_fraction},
                           {"pvs", spec_.pvs_fraction},
                           {"ivs", spec_.ivs_fraction}};
  manifest["levels"] = spec_.subsample_levels;
  manifest["seed"] = spec_.seed;
  for (auto s : kAllSplits) {
    for (double l : spec_.subsample_levels) {
      const auto name = fmt::format("{}_{}.tsv", to_string(s), level_tag(l));
      const auto& ts = triplets(s, l);
      write_triplets(dir / name, ts);
      manifest["files"][name] = ts.size();
    }
  }
  std::ofstream out(dir / "bundle.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("cannot write {}", (dir / "bundle.json").string()));
}

DatasetBundle DatasetBundle::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bundle.json");
  if (!in) throw IoError(fmt::format("cannot open {}", (dir / "bundle.json").string()));
  const auto manifest = nlohmann::json::parse(in);
  SplitSpec spec;
  spec.fvs_fraction = manifest.at("fractions").at("fvs").get<double>();
  spec.pvs_fraction = manifest.at("fractions").at("pvs").get<double>();
  spec.ivs_fraction = manifest.at("fractions").at("ivs").get<double>();
  spec.subsample_levels = manifest.at("levels").get<std::vector<double>>();
  spec.seed = manifest.at("seed").get<std::uint64_t>();

  std::vector<Triplet> all;
  for (auto s : kAllSplits) {
    const auto kg = ingest(dir / fmt::format("{}_{}.tsv", to_string(s), level_tag(1.0)));
    all.insert(all.end(), kg.triplets().begin(), kg.triplets().end());
  }
  auto b = split(KnowledgeGraph::from_triplets(std::move(all)), spec);
  for (auto s : kAllSplits) {
    for (double l : b.levels()) {
      const auto expected = manifest.at("files")
                                .at(fmt::format("{}_{}.tsv", to_string(s), level_tag(l)))
                                .get<std::size_t>();
      if (b.triplets(s, l).size() != expected) {
        throw Error(fmt::format("bundle at {} is inconsistent with its manifest", dir.string()));
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Formatting

namespace {
void append(std::vector<TokenId>& out, const std::vector<TokenId>& xs) {
  out.insert(out.end(), xs.begin(), xs.end());
}
}  // namespace

std::vector<TokenId> format_prompt(std::string_view subject, std::string_view predicate,
                                   const TokenizerVocab& vocab) {
  std::vector<TokenId> out{kSubjectTok};
  append(out, vocab.tokenize(subject));
  out.push_back(kPredicateTok);
  append(out, vocab.tokenize(predicate));
  out.push_back(kObjectTok);
  return out;
}

std::vector<TokenId> format_triplet(const Triplet& t, const TokenizerVocab& vocab) {
  auto out = format_prompt(t.subject, t.predicate, vocab);
  append(out, vocab.tokenize(t.object));
  out.push_back(kEos);
  return out;
}

Triplet decode_triplet(std::span<const TokenId> ids, const TokenizerVocab& vocab) {
  const auto p = std::find(ids.begin(), ids.end(), kPredicateTok);
  const auto o = std::find(ids.begin(), ids.end(), kObjectTok);
  if (ids.size() < 7 || ids.front() != kSubjectTok || ids.back() != kEos || p == ids.end() ||
      o == ids.end() || !(p < o)) {
    throw Error("malformed triplet sequence");
  }
  auto field = [&](auto b, auto e) {
    const std::span<const TokenId> part(b, e);
    if (part.empty() || std::any_of(part.begin(), part.end(), is_special_token)) {
      throw Error("malformed triplet sequence");
    }
    return vocab.decode(part);
  };
  return Triplet{field(ids.begin() + 1, p), field(p + 1, o), field(o + 1, ids.end() - 1)};
}

// ---------------------------------------------------------------------------
// Packing

PackedBatchStream pack(std::span<const std::vector<TokenId>> sequences, std::size_t context_len) {
  if (context_len == 0) throw ConfigError("context_len must be positive");
  PackedBatchStream s;
  s.context_len = context_len;
  std::size_t used = context_len;  // forces a new window on the first sequence
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    if (seq.size() > context_len) {
      throw PackingError(
          fmt::format("sequence {} has {} tokens, longer than context {}", i, seq.size(), context_len),
          i);
    }
    if (used + seq.size() > context_len) {
      s.tokens.resize(s.tokens.size() + context_len, kPad);
      s.boundaries.emplace_back();
      ++s.window_count;
      used = 0;
    }
    const auto base = (s.window_count - 1) * context_len;
    std::copy(seq.begin(), seq.end(), s.tokens.begin() + static_cast<std::ptrdiff_t>(base + used));
    s.boundaries.back().push_back(static_cast<std::uint32_t>(used));
    used += seq.size();
  }
  return s;
}

std::size_t PackedBatchStream::content_tokens() const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](TokenId t) { return t != kPad; }));
}

std::vector<std::vector<TokenId>> PackedBatchStream::unpack() const {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t w = 0; w < window_count; ++w) {
    const auto win = window(w);
    const auto& b = boundaries[w];
    for (std::size_t k = 0; k < b.size(); ++k) {
      const std::size_t start = b[k];
      std::size_t end = k + 1 < b.size() ? b[k + 1] : context_len;
      if (k + 1 == b.size()) {
        while (end > start && win[end - 1] == kPad) --end;
      }
      out.emplace_back(win.begin() + start, win.begin() + end);
    }
  }
  return out;
}

void PackedBatchStream::save(const std::filesystem::path& stem) const {
  auto bin = stem;
  bin += ".bin";
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", bin.string()));
  for (TokenId t : tokens) {
    const unsigned char le[4] = {static_cast<unsigned char>(t), static_cast<unsigned char>(t >> 8),
                                 static_cast<unsigned char>(t >> 16),
                                 static_cast<unsigned char>(t >> 24)};
    out.write(reinterpret_cast<const char*>(le), 4);
  }
  nlohmann::json side;
  side["context_len"] = context_len;
  side["window_count"] = window_count;
  side["boundaries"] = boundaries;
  auto js = stem;
  js += ".json";
  std::ofstream jout(js, std::ios::trunc);
  jout << side.dump() << '\n';
  if (!out || !jout) throw IoError(fmt::format("write failed for {}", stem.string()));
}

PackedBatchStream PackedBatchStream::load(const std::filesystem::path& stem) {
  auto js = stem;
  js += ".json";
  std::ifstream jin(js);
  if (!jin) throw IoError(fmt::format("cannot open {}", js.string()));
  const auto side = nlohmann::json::parse(jin);
  PackedBatchStream s;
  s.context_len = side.at("context_len").get<std::size_t>();
  s.window_count = side.at("window_count").get<std::size_t>();
  s.boundaries = side.at("boundaries").get<std::vector<std::vector<std::uint32_t>>>();

  auto bin = stem;
  bin += ".bin";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", bin.string()));
  s.tokens.resize(s.window_count * s.context_len);
  for (auto& t : s.tokens) {
    unsigned char le[4];
    if (!in.read(reinterpret_cast<char*>(le), 4)) {
      throw IoError(fmt::format("{} is truncated", bin.string()));
    }
    t = static_cast<TokenId>(le[0]) | (static_cast<TokenId>(le[1]) << 8) |
        (static_cast<TokenId>(le[2]) << 16) | (static_cast<TokenId>(le[3]) << 24);
  }
  return s;
}

PackedBatchStream build_stream(std::span<const Triplet> triplets, const TokenizerVocab& vocab,
                               std::size_t context_len, std::uint64_t shuffle_seed) {
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(triplets.size());
  for (const auto& t : triplets) seqs.push_back(format_triplet(t, vocab));
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(seqs.begin(), seqs.end(), rng);
  return pack(seqs, context_len);
}

}  // namespace hallu
