#include <gtest/gtest.h>

#include "hallu/object_trie.hpp"
#include "hallu/oracle.hpp"
#include "support.hpp"

namespace hallu {
namespace {

using testing::make_record;

struct Fixture {
  KnowledgeGraph kg = synthesize(testing::small_synth(21, 200));
  TokenizerVocab vocab = TokenizerVocab::build(kg);
  ObjectTrie trie = ObjectTrie::build(kg, vocab);
};

// Random object-token query of one of several shapes.
std::vector<TokenId> random_query(std::mt19937_64& rng, const std::vector<TokenId>& object,
                                  std::size_t vocab_size) {
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  auto random_token = [&] { return static_cast<TokenId>(kFirstRegularToken + pick(static_cast<int>(vocab_size) - kFirstRegularToken)); };
  std::vector<TokenId> q = object;
  switch (pick(5)) {
    case 0:  // exact
      break;
    case 1:  // strict prefix
      q.resize(static_cast<std::size_t>(pick(static_cast<int>(object.size()))));
      break;
    case 2:  // one token replaced
      q[static_cast<std::size_t>(pick(static_cast<int>(q.size())))] = random_token();
      break;
    case 3:  // extended
      q.push_back(random_token());
      break;
    default: {  // random
      q.assign(static_cast<std::size_t>(1 + pick(4)), 0);
      for (auto& t : q) t = random_token();
    }
  }
  return q;
}

TEST(Oracle, MatchesBruteForceOnTenThousandCases) {
  Fixture f;
  const auto& ts = f.kg.triplets();
  std::mt19937_64 rng(77);
  std::size_t hallucinated = 0, unknown = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto& base = ts[std::uniform_int_distribution<std::size_t>(0, ts.size() - 1)(rng)];
    std::string subject = base.subject, predicate = base.predicate;
    if (i % 20 == 0) {
      // A pair absent from the reference.
      predicate = ts[std::uniform_int_distribution<std::size_t>(0, ts.size() - 1)(rng)].predicate;
    }
    const auto q = random_query(rng, f.vocab.tokenize(base.object), f.vocab.size());
    const auto rec = make_record(subject, predicate, q, f.vocab);

    const bool known = testing::brute_pair_known(ts, subject, predicate);
    const auto s = label_sentence(rec, f.kg);
    const auto t = label_tokens(rec, f.trie);
    ASSERT_EQ(s.out_of_reference, !known) << i;
    ASSERT_EQ(t.out_of_reference, !known) << i;
    if (!known) {
      ++unknown;
      continue;
    }
    const bool valid = testing::brute_is_valid(ts, subject, predicate, rec.object_text);
    ASSERT_EQ(s.is_hallucination, !valid) << i << " " << rec.object_text;
    if (valid) ASSERT_EQ(*s.matched_object, rec.object_text);

    const auto first = testing::brute_first_hallucinated(ts, f.vocab, subject, predicate, q);
    ASSERT_EQ(t.first_hallucinated_index, first) << i;
    // Sentence and token labels agree on whether anything is hallucinated.
    ASSERT_EQ(t.first_hallucinated_index.has_value(), s.is_hallucination) << i;
    if (first) {
      ASSERT_EQ(t.labels.size(), *first + 1);
      for (std::size_t k = 0; k < t.labels.size(); ++k) ASSERT_EQ(t.labels[k], k == *first);
      ++hallucinated;
    } else {
      ASSERT_EQ(t.labels.size(), q.size());
      for (bool l : t.labels) ASSERT_FALSE(l);
    }
  }
  EXPECT_GT(hallucinated, 2000u);
  EXPECT_LT(hallucinated, 9000u);
  EXPECT_GT(unknown, 0u);
}

TEST(Oracle, StrictPrefixIsHallucinatedAtTerminator) {
  const auto kg = KnowledgeGraph::from_triplets({{"s", "p", "new york city"}, {"s", "p", "paris"}});
  const auto vocab = TokenizerVocab::build(kg);
  const auto trie = ObjectTrie::build(kg, vocab);
  const auto rec = make_record("s", "p", vocab.tokenize("new york"), vocab);
  EXPECT_TRUE(label_sentence(rec, kg).is_hallucination);
  const auto t = label_tokens(rec, trie);
  ASSERT_TRUE(t.first_hallucinated_index);
  EXPECT_EQ(*t.first_hallucinated_index, 2u);
  EXPECT_EQ(t.labels, (std::vector<bool>{false, false, true}));

  const auto ok = make_record("s", "p", vocab.tokenize("paris"), vocab);
  EXPECT_FALSE(label_sentence(ok, kg).is_hallucination);
  EXPECT_FALSE(label_tokens(ok, trie).first_hallucinated_index);

  const auto wrong = make_record("s", "p", vocab.tokenize("new paris"), vocab);
  EXPECT_EQ(*label_tokens(wrong, trie).first_hallucinated_index, 1u);
}

TEST(Oracle, TrieVerdicts) {
  const auto kg = KnowledgeGraph::from_triplets({{"s", "p", "a b c"}, {"s", "p", "a b"}, {"t", "p", "c"}});
  const auto vocab = TokenizerVocab::build(kg);
  const auto trie = ObjectTrie::build(kg, vocab);
  EXPECT_EQ(trie.terminal_count(), 3u);
  auto v = trie.query("s", "p", vocab.tokenize("a b"));
  EXPECT_TRUE(v.pair_known && v.valid_prefix && v.complete);
  v = trie.query("s", "p", vocab.tokenize("a"));
  EXPECT_TRUE(v.valid_prefix);
  EXPECT_FALSE(v.complete);
  v = trie.query("s", "p", vocab.tokenize("a c"));
  EXPECT_EQ(v.matched, 1u);
  EXPECT_EQ(v.first_invalid(), std::optional<std::size_t>(1));
  EXPECT_FALSE(trie.query("t", "q", vocab.tokenize("c")).pair_known);
}

TEST(Oracle, RatesAndPrecisionRecall) {
  const auto kg = KnowledgeGraph::from_triplets({{"s", "p", "a"}, {"s", "p", "b"}, {"u", "p", "c"}});
  const auto vocab = TokenizerVocab::build(kg);
  std::vector<GenerationRecord> recs{
      make_record("s", "p", vocab.tokenize("a"), vocab, 1.0, 0),
      make_record("s", "p", vocab.tokenize("a"), vocab, 1.0, 1),
      make_record("s", "p", vocab.tokenize("c"), vocab, 1.0, 2),
      make_record("s", "p", vocab.tokenize("b"), vocab, 1.0, 3),
      make_record("u", "p", vocab.tokenize("c"), vocab, 1.0, 0),
      make_record("u", "p", vocab.tokenize("a"), vocab, 1.0, 1),
      make_record("u", "p", vocab.tokenize("a"), vocab, 1.0, 2),
      make_record("u", "p", vocab.tokenize("b"), vocab, 1.0, 3),
  };
  const auto rate = hallucination_rate(recs, kg);
  EXPECT_EQ(rate.records, 8u);
  EXPECT_EQ(rate.hallucinated, 4u);
  EXPECT_DOUBLE_EQ(rate.rate, 0.5);

  const auto pr = pr_at_temperature(recs, kg, 4);
  EXPECT_DOUBLE_EQ(pr.precision, 0.5);
  // s: {a, b} both hit -> 1; u: {c} hit -> 1.
  EXPECT_DOUBLE_EQ(pr.recall, 1.0);
  recs.pop_back();
  EXPECT_THROW(pr_at_temperature(recs, kg, 4), Error);

  // Out-of-reference prompts are excluded from the rate.
  std::vector<GenerationRecord> mixed{make_record("s", "p", vocab.tokenize("a"), vocab),
                                      make_record("zz", "p", vocab.tokenize("a"), vocab)};
  const auto r2 = hallucination_rate(mixed, kg);
  EXPECT_EQ(r2.out_of_reference, 1u);
  EXPECT_DOUBLE_EQ(r2.rate, 0.0);
}

TEST(Oracle, LabelsAndAggregatesRoundTrip) {
  Fixture f;
  testing::TempDir dir("labels");
  std::vector<GenerationRecord> recs;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& t = f.kg.triplets()[i];
    auto toks = f.vocab.tokenize(t.object);
    if (i % 3 == 0) toks.pop_back();
    if (toks.empty()) toks.push_back(kFirstRegularToken);
    recs.push_back(make_record(t.subject, t.predicate, toks, f.vocab, 0.5, static_cast<int>(i)));
  }
  const auto labeled = label_records(recs, f.kg, f.trie);
  write_labels(dir / "l.jsonl", labeled);
  const auto back = read_labels(dir / "l.jsonl");
  ASSERT_EQ(back.size(), labeled.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].sentence.is_hallucination, labeled[i].sentence.is_hallucination);
    EXPECT_EQ(back[i].token.labels, labeled[i].token.labels);
    EXPECT_EQ(back[i].token.first_hallucinated_index, labeled[i].token.first_hallucinated_index);
    EXPECT_EQ(back[i].record.record_id(), labeled[i].record.record_id());
  }

  std::vector<AggregateRow> rows{{"m_0.1", 20, 1.5e9, 0.1, 1.0, "fvs", 0.25, 0.75, 0.5},
                                 {"m_0.1", 20, 1.5e9, 0.1, 0.0, "ivs", 1.0, 0.0, 0.0}};
  write_aggregates_csv(dir / "a.csv", rows);
  const auto rb = read_aggregates_csv(dir / "a.csv");
  ASSERT_EQ(rb.size(), 2u);
  EXPECT_EQ(rb[0].model_id, "m_0.1");
  EXPECT_EQ(rb[1].split, "ivs");
  EXPECT_DOUBLE_EQ(rb[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(rb[0].flops, 1.5e9);
}

}  // namespace
}  // namespace hallu
