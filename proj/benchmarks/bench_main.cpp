#include <benchmark/benchmark.h>

#include <random>

#include "hallu/corpus.hpp"
#include "hallu/metrics.hpp"
#include "hallu/object_trie.hpp"
#include "hallu/trainer.hpp"
#include "hallu/transformer.hpp"

namespace {

using namespace hallu;

SynthConfig synth(std::size_t subjects) {
  SynthConfig c;
  c.n_subjects = subjects;
  c.n_predicates = 12;
  c.predicates_per_subject = {1, 3};
  c.objects_per_pair = {1, 6, CountDistribution::Shape::kGeometric, 0.5};
  c.entity_name_length = {1, 3};
  c.vocab_pool_size = 400;
  c.seed = 1;
  return c;
}

void BM_TrieQuery(benchmark::State& state) {
  const auto kg = synthesize(synth(static_cast<std::size_t>(state.range(0))));
  const auto vocab = TokenizerVocab::build(kg);
  const auto trie = ObjectTrie::build(kg, vocab);
  std::vector<std::tuple<std::string, std::string, std::vector<TokenId>>> queries;
  for (const auto& t : kg.triplets()) queries.emplace_back(t.subject, t.predicate, vocab.tokenize(t.object));
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& [s, p, q] = queries[i++ % queries.size()];
    benchmark::DoNotOptimize(trie.query(s, p, q));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TrieQuery)->Arg(1000)->Arg(10000);

void BM_AucPr(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> s(n);
  std::vector<bool> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::normal_distribution<double>()(rng);
    y[i] = std::bernoulli_distribution(0.3)(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc_pr(s, y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AucPr)->Arg(1000)->Arg(100000);

ModelConfig ladder_model(int d) { return {"bench", 2, 4, d, 4 * d, 32, 1200, 1}; }

void BM_TrainStep(benchmark::State& state) {
  const Transformer model(ladder_model(static_cast<int>(state.range(0))));
  std::mt19937_64 rng(5);
  std::vector<TokenId> window(32);
  for (auto& t : window) t = static_cast<TokenId>(std::uniform_int_distribution<int>(5, 1199)(rng));
  Activations act;
  ParamBuffer grads(model.param_count());
  Adam adam(model.param_count(), AdamConfig{});
  std::vector<double> params(model.params().begin(), model.params().end());
  for (auto _ : state) {
    std::fill(grads.begin(), grads.end(), 0.0);
    benchmark::DoNotOptimize(model.lm_loss(window, act, grads, 1.0 / 31));
    adam.step(params, grads, 1e-4);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Arg(40)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_DecodeToken(benchmark::State& state) {
  const Transformer model(ladder_model(static_cast<int>(state.range(0))));
  for (auto _ : state) {
    DecodeSession session(model, 16);
    for (int i = 0; i < 16; ++i) benchmark::DoNotOptimize(session.feed(static_cast<TokenId>(5 + i)));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DecodeToken)->Arg(40)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
