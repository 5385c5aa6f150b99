#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>

#include "hallu/corpus.hpp"
#include "hallu/detector.hpp"
#include "support.hpp"

namespace hallu {
namespace {

std::vector<double> readout_scores(const std::vector<double>& readout, const RowMatrix& x) {
  std::vector<double> s(static_cast<std::size_t>(x.rows()));
  const auto d = x.cols();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double z = readout[static_cast<std::size_t>(d)];
    for (Eigen::Index j = 0; j < d; ++j) z += readout[static_cast<std::size_t>(j)] * x(i, j);
    s[static_cast<std::size_t>(i)] = z;
  }
  return s;
}

struct Synthetic {
  RowMatrix x;
  std::vector<bool> y;
};

Synthetic gaussian_set(std::mt19937_64& rng, int n, int d, const std::vector<double>* direction) {
  Synthetic s{RowMatrix(n, d), std::vector<bool>(static_cast<std::size_t>(n))};
  std::normal_distribution<double> normal;
  for (int i = 0; i < n; ++i) {
    double proj = 0.0;
    for (int j = 0; j < d; ++j) {
      s.x(i, j) = normal(rng);
      if (direction) proj += (*direction)[static_cast<std::size_t>(j)] * s.x(i, j);
    }
    s.y[static_cast<std::size_t>(i)] = direction ? proj > 0.3 : std::bernoulli_distribution(0.3)(rng);
  }
  return s;
}

DetectorConfig probe_config() {
  DetectorConfig cfg;
  cfg.seed = 5;
  cfg.step_scale = 0.2;
  cfg.eval_every = 100;
  return cfg;
}

TEST(Readout, SeparableProbeIsNearPerfect) {
  std::mt19937_64 rng(2);
  const int d = 16;
  std::vector<double> dir(d);
  for (auto& v : dir) v = std::normal_distribution<double>()(rng);
  const auto train = gaussian_set(rng, 1500, d, &dir);
  const auto val = gaussian_set(rng, 300, d, &dir);
  const auto test = gaussian_set(rng, 1000, d, &dir);
  const auto cfg = probe_config();
  const auto fit = fit_readout(train.x, train.y, val.x, val.y, cfg.probe(), cfg);
  ASSERT_EQ(fit.readout.size(), static_cast<std::size_t>(d) + 1);
  EXPECT_FALSE(fit.diverged);
  EXPECT_GT(auc_pr(readout_scores(fit.readout, test.x), test.y), 0.99);
}

TEST(Readout, ShuffledLabelsScoreNearPrevalence) {
  std::mt19937_64 rng(3);
  const int d = 16;
  const auto train = gaussian_set(rng, 1500, d, nullptr);
  const auto val = gaussian_set(rng, 300, d, nullptr);
  const auto test = gaussian_set(rng, 3000, d, nullptr);
  const auto cfg = probe_config();
  const auto fit = fit_readout(train.x, train.y, val.x, val.y, cfg.probe(), cfg);
  EXPECT_NEAR(auc_pr(readout_scores(fit.readout, test.x), test.y), prevalence(test.y), 0.05);
}

TEST(Parts, PromptLevelPartitionIsDisjointAndDeterministic) {
  std::vector<PairKey> prompts;
  for (int i = 0; i < 1000; ++i) prompts.emplace_back("s" + std::to_string(i), "p");
  const auto a = assign_parts(prompts, 17);
  const auto b = assign_parts(prompts, 17);
  const auto c = assign_parts(prompts, 18);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::map<Part, int> counts;
  for (const auto& [k, p] : a) ++counts[p];
  EXPECT_EQ(counts[Part::kTrain], 900);
  EXPECT_EQ(counts[Part::kValidation], 50);
  EXPECT_EQ(counts[Part::kTest], 50);
}

class Detection : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    kg_ = new KnowledgeGraph(synthesize(testing::small_synth(41, 90)));
    vocab_ = new TokenizerVocab(TokenizerVocab::build(*kg_));
    trie_ = new ObjectTrie(ObjectTrie::build(*kg_, *vocab_));
    const auto stream = build_stream(kg_->triplets(), *vocab_, 32, 1);
    const ModelConfig mc{"d", 2, 2, 16, 32, 32, static_cast<int>(vocab_->size()), 3};
    TrainConfig tc;
    tc.lr_constant = 1.0;
    tc.warmup_steps = 20;
    tc.epochs = 8;
    tc.batch_size = 1;
    tc.seed = 9;
    lm_ = new Transformer(train(stream, mc, tc).checkpoint.instantiate());

    std::set<PairKey> pairs;
    for (const auto& t : kg_->triplets()) pairs.emplace(t.subject, t.predicate);
    for (const auto& [s, p] : pairs) {
      if (prompts_.size() == 100) break;
      prompts_.push_back(Prompt::make(s, p, *vocab_));
    }
    DetectionDataOptions opt;
    opt.max_len = default_max_len(*kg_, *vocab_);
    opt.seed = 4;
    opt.model_id = "d";
    data_ = new DetectionData(build_detection_data(*lm_, prompts_, *vocab_, *kg_, *trie_, opt));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete lm_;
    delete trie_;
    delete vocab_;
    delete kg_;
  }

  static DetectorConfig config(DetectorTask task, DetectorType type) {
    DetectorConfig cfg;
    cfg.task = task;
    cfg.type = type;
    cfg.seed = 12;
    cfg.batch_size = 8;
    cfg.step_scale = 0.002;
    cfg.eval_every = 10;
    cfg.patience = 2;
    return cfg;
  }

  static inline KnowledgeGraph* kg_ = nullptr;
  static inline TokenizerVocab* vocab_ = nullptr;
  static inline ObjectTrie* trie_ = nullptr;
  static inline Transformer* lm_ = nullptr;
  static inline DetectionData* data_ = nullptr;
  static inline std::vector<Prompt> prompts_;
};

TEST_F(Detection, FiveGenerationsPerPromptGiveOneSentenceExampleEach) {
  ASSERT_EQ(prompts_.size(), 100u);
  EXPECT_EQ(data_->records.size(), 500u);
  EXPECT_EQ(data_->sentence.size(), 500u);
  for (const auto& e : data_->sentence) {
    ASSERT_EQ(e.positions.size(), 1u);
    EXPECT_EQ(e.tokens[static_cast<std::size_t>(e.positions[0])], kEos);
  }
  std::size_t token_points = 0;
  for (const auto& e : data_->token) {
    token_points += e.positions.size();
    // Labels are negative up to a single positive at the end.
    for (std::size_t k = 0; k + 1 < e.labels.size(); ++k) EXPECT_FALSE(e.labels[k]);
  }
  EXPECT_EQ(token_points, data_->points(DetectorTask::kToken));
}

TEST_F(Detection, PartsNeverShareAPrompt) {
  for (auto task : {DetectorTask::kSentence, DetectorTask::kToken}) {
    std::map<PairKey, Part> seen;
    for (const auto& e : data_->examples(task)) {
      const auto [it, fresh] = seen.emplace(PairKey{e.subject, e.predicate}, e.part);
      EXPECT_TRUE(fresh || it->second == e.part);
    }
    std::size_t total = 0;
    for (auto p : {Part::kTrain, Part::kValidation, Part::kTest}) total += data_->part(task, p).size();
    EXPECT_EQ(total, data_->examples(task).size());
  }
}

TEST_F(Detection, SaveLoadRoundTrip) {
  testing::TempDir dir("dd");
  data_->save(dir.path());
  const auto back = DetectionData::load(dir.path());
  ASSERT_EQ(back.sentence.size(), data_->sentence.size());
  ASSERT_EQ(back.token.size(), data_->token.size());
  for (std::size_t i = 0; i < back.token.size(); ++i) {
    EXPECT_EQ(back.token[i].tokens, data_->token[i].tokens);
    EXPECT_EQ(back.token[i].labels, data_->token[i].labels);
    EXPECT_EQ(back.token[i].part, data_->token[i].part);
  }
}

TEST_F(Detection, HeadLeavesBaseBitwiseIntact) {
  const std::vector<double> before(lm_->params().begin(), lm_->params().end());
  const auto train_set = data_->part(DetectorTask::kSentence, Part::kTrain);
  const auto val_set = data_->part(DetectorTask::kSentence, Part::kValidation);
  for (int layer : {1, 2, -1}) {
    auto cfg = config(DetectorTask::kSentence, DetectorType::kHead);
    cfg.layer = layer;
    const auto run = train_head(*lm_, "d", train_set, val_set, cfg);
    EXPECT_EQ(std::memcmp(before.data(), lm_->params().data(), before.size() * sizeof(double)), 0);
    EXPECT_EQ(run.detector.weights, before);
    EXPECT_EQ(run.detector.layer, layer == -1 ? 2 : layer);
  }
}

TEST_F(Detection, FullSentenceStageOneIsTheTopHead) {
  const auto train_set = data_->part(DetectorTask::kSentence, Part::kTrain);
  const auto val_set = data_->part(DetectorTask::kSentence, Part::kValidation);
  const auto head = train_head(*lm_, "d", train_set, val_set, config(DetectorTask::kSentence, DetectorType::kHead));
  const auto full = train_full(*lm_, "d", train_set, val_set, config(DetectorTask::kSentence, DetectorType::kFull));
  ASSERT_TRUE(full.stage1.has_value());
  EXPECT_EQ(full.stage1->readout, head.detector.readout);
  EXPECT_EQ(full.stage1->weights, head.detector.weights);
  EXPECT_EQ(full.detector.type, DetectorType::kFull);
  EXPECT_TRUE(full.best_stage == 1 || full.best_stage == 2);
}

TEST_F(Detection, ScoringIsDeterministicAndSurvivesSaveLoad) {
  const auto train_set = data_->part(DetectorTask::kToken, Part::kTrain);
  const auto val_set = data_->part(DetectorTask::kToken, Part::kValidation);
  const auto test_set = data_->part(DetectorTask::kToken, Part::kTest);
  const auto run = train_full(*lm_, "d", train_set, val_set, config(DetectorTask::kToken, DetectorType::kFull));
  const auto a = score(run.detector, test_set);
  const auto b = score(run.detector, test_set);
  testing::TempDir dir("det");
  run.detector.save(dir.path());
  const auto c = score(Detector::load(dir.path()), test_set);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.size(), c.size());
  std::size_t expected = 0;
  for (const auto& e : test_set) expected += e.positions.size();
  EXPECT_EQ(a.size(), expected);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].score, c[i].score);
    EXPECT_EQ(a[i].example_id, c[i].example_id);
  }
  write_scored(dir / "s.jsonl", a);
  const auto back = read_scored(dir / "s.jsonl");
  ASSERT_EQ(back.size(), a.size());
  EXPECT_EQ(back.front().score, a.front().score);

  // Wrong task.
  EXPECT_THROW(score(run.detector, data_->part(DetectorTask::kSentence, Part::kTest)), Error);
}

TEST(Evaluate, OneClassSetHasNoAucPr) {
  std::vector<ScoredPoint> pts{{"a", DetectorTask::kSentence, 0.2, false},
                               {"b", DetectorTask::kSentence, 0.7, false}};
  const auto e = evaluate(pts);
  EXPECT_FALSE(e.auc_pr.has_value());
  EXPECT_DOUBLE_EQ(e.accuracy, 0.5);
  EXPECT_EQ(e.points, 2u);
  pts.push_back({"c", DetectorTask::kSentence, 0.9, true});
  const auto f = evaluate(pts);
  ASSERT_TRUE(f.auc_pr.has_value());
  EXPECT_DOUBLE_EQ(*f.auc_pr, 1.0);
}

}  // namespace
}  // namespace hallu
