#include "hallu/sampler.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <tuple>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hallu/corpus.hpp"

namespace hallu {

Prompt Prompt::make(std::string subject, std::string predicate, const TokenizerVocab& vocab) {
  Prompt p;
  p.ids = format_prompt(subject, predicate, vocab);
  p.subject = std::move(subject);
  p.predicate = std::move(predicate);
  return p;
}

std::string_view to_string(StopReason r) { return r == StopReason::kEos ? "eos" : "length_cap"; }

std::string GenerationRecord::record_id() const {
  return fmt::format("{}\t{}\t{}\t{}", subject, predicate, temperature, sample_idx);
}

nlohmann::json GenerationRecord::to_json() const {
  return {{"subject", subject},           {"predicate", predicate},
          {"temperature", temperature},   {"sample_idx", sample_idx},
          {"object_tokens", object_tokens}, {"object_text", object_text},
          {"stop_reason", to_string(stop_reason)}, {"model_id", model_id},
          {"epoch", epoch}};
}

GenerationRecord GenerationRecord::from_json(const nlohmann::json& j) {
  GenerationRecord r;
  r.subject = j.at("subject").get<std::string>();
  r.predicate = j.at("predicate").get<std::string>();
  r.temperature = j.at("temperature").get<double>();
  r.sample_idx = j.at("sample_idx").get<int>();
  r.object_tokens = j.at("object_tokens").get<std::vector<TokenId>>();
  r.object_text = j.at("object_text").get<std::string>();
  const auto stop = j.at("stop_reason").get<std::string>();
  if (stop != "eos" && stop != "length_cap") throw Error(fmt::format("bad stop_reason '{}'", stop));
  r.stop_reason = stop == "eos" ? StopReason::kEos : StopReason::kLengthCap;
  r.model_id = j.at("model_id").get<std::string>();
  r.epoch = j.at("epoch").get<int>();
  return r;
}

namespace {

bool masked(Eigen::Index id) {
  return id == kPad || id == kSubjectTok || id == kPredicateTok || id == kObjectTok;
}

std::uint64_t sample_seed(std::uint64_t seed, const Prompt& prompt, double temperature, int k) {
  auto h = seeded_hash(prompt.subject, seed);
  h = hash_combine(h, fnv1a64(prompt.predicate));
  h = hash_combine(h, fnv1a64(fmt::format("{}", temperature)));
  return hash_combine(h, static_cast<std::uint64_t>(k));
}

}  // namespace

std::vector<double> sampling_distribution(const RowVector& logits, double temperature) {
  const auto n = logits.size();
  std::vector<double> p(static_cast<std::size_t>(n), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (masked(i)) continue;
    if (logits(i) > mx) {
      mx = logits(i);
      best = i;
    }
  }
  if (best < 0) throw Error("no sampleable tokens");
  if (temperature == 0.0) {
    p[static_cast<std::size_t>(best)] = 1.0;
    return p;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (masked(i)) continue;
    const double e = std::exp((logits(i) - mx) / temperature);
    p[static_cast<std::size_t>(i)] = e;
    total += e;
  }
  for (double& x : p) x /= total;
  return p;
}

TokenId sample_token(const RowVector& logits, double temperature, double u) {
  if (temperature < 0.0) throw Error("temperature must be >= 0");
  const auto p = sampling_distribution(logits, temperature);
  if (temperature == 0.0) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] == 1.0) return static_cast<TokenId>(i);
    }
  }
  double cum = 0.0;
  TokenId last = kEos;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cum += p[i];
    last = static_cast<TokenId>(i);
    if (u < cum) return last;
  }
  return last;  // u within rounding of 1
}

std::vector<GenerationRecord> generate(const LogitSource& prompt_state, const Prompt& prompt,
                                       const TokenizerVocab& vocab, const GenerateOptions& opt) {
  if (opt.temperature < 0.0) throw Error("temperature must be >= 0");
  if (opt.max_len < 1) throw Error("max_len must be >= 1");
  if (opt.n_samples < 0) throw Error("n_samples must be >= 0");

  auto run = [&](int k) {
    GenerationRecord rec;
    rec.subject = prompt.subject;
    rec.predicate = prompt.predicate;
    rec.temperature = opt.temperature;
    rec.sample_idx = k;
    rec.model_id = opt.model_id;
    rec.epoch = opt.epoch;
    rec.stop_reason = StopReason::kLengthCap;
    std::mt19937_64 rng(sample_seed(opt.seed, prompt, opt.temperature, k));
    auto state = prompt_state.clone();
    const RowVector* logits = &state->logits();
    for (int step = 0; step < opt.max_len; ++step) {
      const auto tok = sample_token(*logits, opt.temperature, unit_interval(rng()));
      if (tok == kEos) {
        rec.stop_reason = StopReason::kEos;
        break;
      }
      rec.object_tokens.push_back(tok);
      if (step + 1 < opt.max_len) logits = &state->feed(tok);
    }
    rec.object_text = vocab.decode(rec.object_tokens);
    return rec;
  };

  std::vector<GenerationRecord> out;
  out.reserve(static_cast<std::size_t>(opt.n_samples));
  for (int k = 0; k < opt.n_samples; ++k) {
    if (opt.temperature == 0.0 && k > 0) {
      out.push_back(out.front());
      out.back().sample_idx = k;
    } else {
      out.push_back(run(k));
    }
  }
  return out;
}

std::vector<GenerationRecord> generate(const Transformer& model, const Prompt& prompt,
                                       const TokenizerVocab& vocab, const GenerateOptions& opt) {
  for (auto id : prompt.ids) {
    if (id >= vocab.size()) throw Error(fmt::format("prompt token {} outside vocabulary", id));
  }
  TransformerSource src(model, static_cast<int>(prompt.ids.size()) + opt.max_len);
  for (auto id : prompt.ids) src.feed(id);
  return generate(src, prompt, vocab, opt);
}

// ---------------------------------------------------------------------------
// Persistence

std::vector<GenerationRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(GenerationRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()), lineno);
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path, std::span<const GenerationRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& r : records) out << r.to_json().dump() << '\n';
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

namespace {

using GroupKey = std::tuple<std::string, std::string, double>;

// Keeps the complete groups of an interrupted sweep and rewrites the file
// with exactly those.
std::set<GroupKey> recover(const std::filesystem::path& path, int n_samples) {
  std::set<GroupKey> done;
  if (!std::filesystem::exists(path)) return done;
  std::vector<GenerationRecord> kept, group;
  {
    std::ifstream in(path);
    std::string line;
    auto flush = [&] {
      if (static_cast<int>(group.size()) == n_samples) {
        done.emplace(group.front().subject, group.front().predicate, group.front().temperature);
        kept.insert(kept.end(), group.begin(), group.end());
      }
      group.clear();
    };
    while (std::getline(in, line)) {
      GenerationRecord r;
      try {
        r = GenerationRecord::from_json(nlohmann::json::parse(line));
      } catch (const std::exception&) {
        break;  // torn write at the tail
      }
      if (!group.empty() && (group.front().subject != r.subject ||
                             group.front().predicate != r.predicate ||
                             group.front().temperature != r.temperature)) {
        flush();
      }
      group.push_back(std::move(r));
    }
    flush();
  }
  auto tmp = path;
  tmp += ".tmp";
  write_records(tmp, kept);
  std::filesystem::rename(tmp, path);
  return done;
}

}  // namespace

SweepResult sweep_generate(const Transformer& model, std::span<const Prompt> prompts,
                           const TokenizerVocab& vocab, const SweepOptions& opt,
                           const std::filesystem::path& path) {
  if (prompts.empty()) throw Error("sweep_generate needs at least one prompt");
  auto marker = path;
  marker += ".done";
  std::filesystem::remove(marker);
  const auto done = recover(path, opt.n_samples);

  SweepResult result;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError(fmt::format("cannot append to {}", path.string()));
  for (const auto& prompt : prompts) {
    std::optional<TransformerSource> src;
    for (double temp : opt.temperatures) {
      if (done.count(GroupKey{prompt.subject, prompt.predicate, temp}) != 0) {
        ++result.groups_skipped;
        continue;
      }
      if (!src) {
        src.emplace(model, static_cast<int>(prompt.ids.size()) + opt.max_len);
        for (auto id : prompt.ids) src->feed(id);
      }
      GenerateOptions g{temp, opt.n_samples, opt.max_len, opt.seed, opt.model_id, opt.epoch};
      for (const auto& rec : generate(*src, prompt, vocab, g)) out << rec.to_json().dump() << '\n';
      out.flush();
      if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
      ++result.groups_written;
      if (opt.stop_after_groups && result.groups_written >= *opt.stop_after_groups) return result;
    }
  }
  out.close();
  std::ofstream(marker) << "complete\n";
  result.complete = true;
  return result;
}

int default_max_len(const KnowledgeGraph& kg, const TokenizerVocab& vocab) {
  std::size_t longest = 0;
  for (const auto& [key, objects] : kg.pair_index()) {
    for (const auto& o : objects) longest = std::max(longest, vocab.tokenize(o).size());
  }
  return static_cast<int>(longest) + 2;
}

}  // namespace hallu
