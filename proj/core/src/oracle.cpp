#include "hallu/oracle.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hallu/table.hpp"

namespace hallu {

SentenceLabel label_sentence(const GenerationRecord& rec, const KnowledgeGraph& reference) {
  SentenceLabel out;
  out.record_id = rec.record_id();
  const auto objects = reference.lookup_objects(rec.subject, rec.predicate);
  if (objects.empty()) {
    out.out_of_reference = true;
    return out;
  }
  if (std::binary_search(objects.begin(), objects.end(), rec.object_text)) {
    out.matched_object = rec.object_text;
  } else {
    out.is_hallucination = true;
  }
  return out;
}

TokenLabel label_tokens(const GenerationRecord& rec, const ObjectTrie& trie) {
  TokenLabel out;
  out.record_id = rec.record_id();
  if (!trie.has_pair(rec.subject, rec.predicate)) {
    out.out_of_reference = true;
    return out;
  }
  const auto verdict = trie.query(rec.subject, rec.predicate, rec.object_tokens);
  if (!verdict.valid_prefix) {
    out.first_hallucinated_index = verdict.matched;
  } else if (!verdict.complete) {
    out.first_hallucinated_index = rec.object_tokens.size();
  }
  const std::size_t n =
      out.first_hallucinated_index ? *out.first_hallucinated_index + 1 : rec.object_tokens.size();
  out.labels.assign(n, false);
  if (out.first_hallucinated_index) out.labels.back() = true;
  return out;
}

PRPoint pr_at_temperature(std::span<const GenerationRecord> records,
                          const KnowledgeGraph& reference, int n_samples) {
  if (records.empty()) throw Error("pr_at_temperature: no records");
  PRPoint out;
  out.temperature = records.front().temperature;

  struct Acc {
    int count = 0;
    int valid = 0;
    std::set<std::string> hits;
    bool in_reference = true;
  };
  std::map<PairKey, Acc> prompts;
  std::size_t hallucinated = 0;
  for (const auto& rec : records) {
    if (rec.temperature != out.temperature) {
      throw Error(fmt::format("pr_at_temperature: mixed temperatures {} and {}", out.temperature,
                              rec.temperature));
    }
    auto& acc = prompts[{rec.subject, rec.predicate}];
    ++acc.count;
    const auto label = label_sentence(rec, reference);
    if (label.out_of_reference) {
      acc.in_reference = false;
      ++out.out_of_reference;
      continue;
    }
    ++out.records;
    if (label.is_hallucination) {
      ++hallucinated;
    } else {
      ++acc.valid;
      acc.hits.insert(*label.matched_object);
    }
  }

  std::vector<std::string> short_prompts;
  for (const auto& [key, acc] : prompts) {
    if (acc.count != n_samples) {
      short_prompts.push_back(fmt::format("({}, {}): {}", key.first, key.second, acc.count));
    }
  }
  if (!short_prompts.empty()) {
    throw Error(fmt::format("expected {} samples per prompt; got {}", n_samples,
                            fmt::join(short_prompts, "; ")));
  }

  double recall_sum = 0.0;
  for (const auto& [key, acc] : prompts) {
    if (!acc.in_reference) continue;
    const auto objects = reference.lookup_objects(key.first, key.second);
    PromptPR p{key.first, key.second,
               static_cast<double>(acc.valid) / static_cast<double>(acc.count),
               static_cast<double>(acc.hits.size()) / static_cast<double>(objects.size())};
    recall_sum += p.recall;
    out.per_prompt.push_back(std::move(p));
  }
  if (out.records > 0) {
    out.precision = 1.0 - static_cast<double>(hallucinated) / static_cast<double>(out.records);
  }
  if (!out.per_prompt.empty()) out.recall = recall_sum / static_cast<double>(out.per_prompt.size());
  return out;
}

RateSummary hallucination_rate(std::span<const GenerationRecord> records,
                               const KnowledgeGraph& reference) {
  RateSummary s;
  for (const auto& rec : records) {
    const auto label = label_sentence(rec, reference);
    if (label.out_of_reference) {
      ++s.out_of_reference;
      continue;
    }
    ++s.records;
    if (label.is_hallucination) ++s.hallucinated;
  }
  if (s.records > 0) s.rate = static_cast<double>(s.hallucinated) / static_cast<double>(s.records);
  return s;
}

SeenUnseenRates hallucination_rates(std::span<const GenerationRecord> records,
                                    const KnowledgeGraph& seen, const KnowledgeGraph& unseen) {
  std::vector<GenerationRecord> a, b;
  std::size_t unmatched = 0;
  for (const auto& rec : records) {
    if (!seen.lookup_objects(rec.subject, rec.predicate).empty()) {
      a.push_back(rec);
    } else if (!unseen.lookup_objects(rec.subject, rec.predicate).empty()) {
      b.push_back(rec);
    } else {
      ++unmatched;
    }
  }
  return {hallucination_rate(a, seen), hallucination_rate(b, unseen), unmatched};
}

std::vector<LabeledRecord> label_records(std::span<const GenerationRecord> records,
                                         const KnowledgeGraph& reference, const ObjectTrie& trie) {
  std::vector<LabeledRecord> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    out.push_back({rec, label_sentence(rec, reference), label_tokens(rec, trie)});
  }
  return out;
}

void write_labels(const std::filesystem::path& path, std::span<const LabeledRecord> labeled) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& l : labeled) {
    auto j = l.record.to_json();
    j["is_hallucination"] = l.sentence.is_hallucination;
    j["matched_object"] = l.sentence.matched_object ? nlohmann::json(*l.sentence.matched_object)
                                                    : nlohmann::json(nullptr);
    j["out_of_reference"] = l.sentence.out_of_reference;
    j["first_hallucinated_index"] = l.token.first_hallucinated_index
                                        ? nlohmann::json(*l.token.first_hallucinated_index)
                                        : nlohmann::json(nullptr);
    std::vector<int> labels(l.token.labels.begin(), l.token.labels.end());
    j["token_labels"] = labels;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<LabeledRecord> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<LabeledRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledRecord l;
      l.record = GenerationRecord::from_json(j);
      l.sentence.record_id = l.token.record_id = l.record.record_id();
      l.sentence.is_hallucination = j.at("is_hallucination").get<bool>();
      if (!j.at("matched_object").is_null()) {
        l.sentence.matched_object = j.at("matched_object").get<std::string>();
      }
      l.sentence.out_of_reference = l.token.out_of_reference = j.at("out_of_reference").get<bool>();
      if (!j.at("first_hallucinated_index").is_null()) {
        l.token.first_hallucinated_index = j.at("first_hallucinated_index").get<std::size_t>();
      }
      for (int v : j.at("token_labels").get<std::vector<int>>()) l.token.labels.push_back(v != 0);
      out.push_back(std::move(l));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()), lineno);
    }
  }
  return out;
}

namespace {
const std::vector<std::string> kAggregateHeader = {
    "model_id", "epochs", "flops", "level", "temperature", "split", "rate", "precision", "recall"};
}

void write_aggregates_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows) {
  Table t{kAggregateHeader, {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.model_id, std::to_string(r.epochs), format_number(r.flops),
                      format_number(r.level), format_number(r.temperature), r.split,
                      format_number(r.rate), format_number(r.precision), format_number(r.recall)});
  }
  t.write(path);
}

std::vector<AggregateRow> read_aggregates_csv(const std::filesystem::path& path) {
  const auto t = Table::read(path);
  if (t.header != kAggregateHeader) throw ParseError(fmt::format("{}: unexpected header", path.string()), 1);
  std::vector<AggregateRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    rows.push_back({t.at(i, "model_id"), static_cast<int>(t.number(i, "epochs")), t.number(i, "flops"),
                    t.number(i, "level"), t.number(i, "temperature"), t.at(i, "split"),
                    t.number(i, "rate"), t.number(i, "precision"), t.number(i, "recall")});
  }
  return rows;
}

}  // namespace hallu
