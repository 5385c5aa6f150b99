#include "hallu/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hallu/corpus.hpp"
#include "hallu/schedule.hpp"

namespace hallu {

std::string_view to_string(DetectorTask t) { return t == DetectorTask::kSentence ? "sentence" : "token"; }
std::string_view to_string(DetectorType t) { return t == DetectorType::kHead ? "head" : "full"; }
std::string_view to_string(Part p) {
  switch (p) {
    case Part::kTrain: return "train";
    case Part::kValidation: return "validation";
    case Part::kTest: return "test";
  }
  return "?";
}

DetectorTask parse_task(std::string_view s) {
  if (s == "sentence") return DetectorTask::kSentence;
  if (s == "token") return DetectorTask::kToken;
  throw ConfigError(fmt::format("unknown detector task '{}'", s));
}

DetectorType parse_type(std::string_view s) {
  if (s == "head") return DetectorType::kHead;
  if (s == "full") return DetectorType::kFull;
  throw ConfigError(fmt::format("unknown detector type '{}'", s));
}

namespace {

Part parse_part(std::string_view s) {
  if (s == "train") return Part::kTrain;
  if (s == "validation") return Part::kValidation;
  if (s == "test") return Part::kTest;
  throw Error(fmt::format("unknown part '{}'", s));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) - y z, the logistic loss on the logit.
double logistic_loss(double z, bool y) {
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - (y ? z : 0.0);
}

}  // namespace

nlohmann::json DetectionExample::to_json() const {
  std::vector<int> l(labels.begin(), labels.end());
  return {{"example_id", example_id}, {"task", to_string(task)}, {"tokens", tokens},
          {"positions", positions},   {"labels", l},             {"subject", subject},
          {"predicate", predicate},   {"record_id", record_id},  {"lm_id", lm_id},
          {"epoch", epoch},           {"part", to_string(part)}};
}

DetectionExample DetectionExample::from_json(const nlohmann::json& j) {
  DetectionExample e;
  e.example_id = j.at("example_id").get<std::string>();
  e.task = parse_task(j.at("task").get<std::string>());
  e.tokens = j.at("tokens").get<std::vector<TokenId>>();
  e.positions = j.at("positions").get<std::vector<int>>();
  for (int v : j.at("labels").get<std::vector<int>>()) e.labels.push_back(v != 0);
  e.subject = j.at("subject").get<std::string>();
  e.predicate = j.at("predicate").get<std::string>();
  e.record_id = j.at("record_id").get<std::string>();
  e.lm_id = j.at("lm_id").get<std::string>();
  e.epoch = j.at("epoch").get<int>();
  e.part = parse_part(j.at("part").get<std::string>());
  return e;
}

std::vector<DetectionExample> make_examples(std::span<const LabeledRecord> records,
                                            DetectorTask task, const TokenizerVocab& vocab) {
  std::vector<DetectionExample> out;
  for (const auto& l : records) {
    if (l.sentence.out_of_reference) continue;
    const auto& rec = l.record;
    DetectionExample e;
    e.task = task;
    e.tokens = format_prompt(rec.subject, rec.predicate, vocab);
    const int prompt_len = static_cast<int>(e.tokens.size());
    e.tokens.insert(e.tokens.end(), rec.object_tokens.begin(), rec.object_tokens.end());
    e.tokens.push_back(kEos);
    if (task == DetectorTask::kSentence) {
      e.positions = {static_cast<int>(e.tokens.size()) - 1};
      e.labels = {l.sentence.is_hallucination};
    } else {
      for (std::size_t i = 0; i < l.token.labels.size(); ++i) {
        e.positions.push_back(prompt_len + static_cast<int>(i));
        e.labels.push_back(l.token.labels[i]);
      }
      if (e.positions.empty()) continue;  // valid empty object: nothing to label
    }
    e.subject = rec.subject;
    e.predicate = rec.predicate;
    e.record_id = rec.record_id();
    e.example_id = fmt::format("{}\t{}", to_string(task), e.record_id);
    e.lm_id = rec.model_id;
    e.epoch = rec.epoch;
    out.push_back(std::move(e));
  }
  return out;
}

std::map<PairKey, Part> assign_parts(std::span<const PairKey> prompts, std::uint64_t seed,
                                     double train_fraction, double validation_fraction) {
  std::vector<std::pair<std::uint64_t, PairKey>> keyed;
  for (const auto& p : prompts) {
    keyed.emplace_back(hash_combine(seeded_hash(p.first, seed), fnv1a64(p.second)), p);
  }
  std::sort(keyed.begin(), keyed.end());
  keyed.erase(std::unique(keyed.begin(), keyed.end()), keyed.end());
  const auto n = static_cast<double>(keyed.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * n));
  std::map<PairKey, Part> out;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    out[keyed[i].second] = i < n_train ? Part::kTrain
                           : i < n_train + n_val ? Part::kValidation
                                                 : Part::kTest;
  }
  return out;
}

std::vector<DetectionExample> DetectionData::part(DetectorTask t, Part p) const {
  std::vector<DetectionExample> out;
  for (const auto& e : examples(t)) {
    if (e.part == p) out.push_back(e);
  }
  return out;
}

std::size_t DetectionData::points(DetectorTask t) const {
  std::size_t n = 0;
  for (const auto& e : examples(t)) n += e.positions.size();
  return n;
}

namespace {

void write_examples(const std::filesystem::path& path, std::span<const DetectionExample> ex) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& e : ex) out << e.to_json().dump() << '\n';
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<DetectionExample> read_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<DetectionExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(DetectionExample::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace

void DetectionData::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_labels(dir / "records.jsonl", records);
  write_examples(dir / "sentence.jsonl", sentence);
  write_examples(dir / "token.jsonl", token);
}

DetectionData DetectionData::load(const std::filesystem::path& dir) {
  DetectionData d;
  d.records = read_labels(dir / "records.jsonl");
  d.sentence = read_examples(dir / "sentence.jsonl");
  d.token = read_examples(dir / "token.jsonl");
  return d;
}

DetectionData build_detection_data(const Transformer& lm, std::span<const Prompt> prompts,
                                   const TokenizerVocab& vocab, const KnowledgeGraph& reference,
                                   const ObjectTrie& trie, const DetectionDataOptions& opt) {
  if (prompts.empty()) throw Error("build_detection_data needs prompts");
  DetectionData data;
  const GenerateOptions g{opt.temperature, opt.n_generations, opt.max_len, opt.seed, opt.model_id,
                          opt.epoch};
  std::vector<GenerationRecord> records;
  for (const auto& p : prompts) {
    auto recs = generate(lm, p, vocab, g);
    records.insert(records.end(), std::make_move_iterator(recs.begin()),
                   std::make_move_iterator(recs.end()));
  }
  data.records = label_records(records, reference, trie);
  data.sentence = make_examples(data.records, DetectorTask::kSentence, vocab);
  data.token = make_examples(data.records, DetectorTask::kToken, vocab);

  std::map<PairKey, Part> parts;
  if (opt.partition) {
    std::vector<PairKey> keys;
    for (const auto& p : prompts) keys.emplace_back(p.subject, p.predicate);
    parts = assign_parts(keys, opt.seed, opt.train_fraction, opt.validation_fraction);
  }
  for (auto* set : {&data.sentence, &data.token}) {
    for (auto& e : *set) {
      e.part = opt.partition ? parts.at({e.subject, e.predicate}) : Part::kTest;
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::int64_t scaled(std::int64_t steps, double scale, std::int64_t floor) {
  return std::max(floor, static_cast<std::int64_t>(std::llround(static_cast<double>(steps) * scale)));
}

StageSchedule make_stage(double peak, std::int64_t warmup, std::int64_t total, const DetectorConfig& c) {
  StageSchedule s;
  s.peak_lr = peak;
  s.total = scaled(total, c.step_scale, c.min_steps);
  s.warmup = std::min(static_cast<std::int64_t>(std::llround(static_cast<double>(warmup) * c.step_scale)),
                      s.total - 1);
  return s;
}

LrSchedule lr_schedule(const StageSchedule& s) {
  LrSchedule l;
  l.peak = s.peak_lr;
  l.warmup_steps = s.warmup;
  l.total_steps = s.total;
  l.final_fraction = 0.0;
  l.validate();
  return l;
}

// AUC-PR when both classes are present, otherwise minus the mean log-loss.
struct ValidationScore {
  double metric = 0.0;
  bool is_auc = false;
};

ValidationScore validation_score(std::span<const double> logits, const std::vector<bool>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  std::vector<double> scores(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scores[i] = sigmoid(logits[i]);
  if (pos > 0 && static_cast<std::size_t>(pos) < labels.size()) {
    return {auc_pr(scores, labels), true};
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) loss += logistic_loss(logits[i], labels[i]);
  return {labels.empty() ? 0.0 : -loss / static_cast<double>(labels.size()), false};
}

class EarlyStopping {
 public:
  // Divergence means AUC-PR below the chance band: prevalence minus one
  // standard error of a random ranking on the validation labels.
  EarlyStopping(const DetectorConfig& cfg, const std::vector<bool>& labels)
      : patience_(cfg.patience), divergence_evals_(cfg.divergence_evals) {
    const double p = prevalence(labels);
    const double n = std::max<double>(1.0, static_cast<double>(labels.size()));
    floor_ = p - std::sqrt(p * (1.0 - p) / n);
  }

  // Returns true when `v` is the best so far. The untrained step-0 readout
  // never counts towards divergence.
  bool observe(const ValidationScore& v, std::int64_t step) {
    bool improved = false;
    if (v.metric > best_) {
      best_ = v.metric;
      since_best_ = 0;
      improved = true;
    } else {
      ++since_best_;
    }
    if (step > 0) below_ = (v.is_auc && v.metric < floor_) ? below_ + 1 : 0;
    if (below_ >= divergence_evals_) diverged_ = true;
    return improved;
  }
  bool stop() const { return diverged_ || since_best_ >= patience_; }
  bool diverged() const { return diverged_; }

 private:
  int patience_, divergence_evals_;
  double floor_;
  double best_ = -std::numeric_limits<double>::infinity();
  int since_best_ = 0, below_ = 0;
  bool diverged_ = false;
};

// Cycles through a seeded permutation of [0, n), reshuffling each pass.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

int resolve_layer(const DetectorConfig& cfg, const ModelConfig& m) {
  const int layer = cfg.layer < 0 ? m.n_layers : cfg.layer;
  if (layer < 1 || layer > m.n_layers) {
    throw ConfigError(fmt::format("detector layer {} outside [1, {}]", layer, m.n_layers));
  }
  return layer;
}

void check_examples(std::span<const DetectionExample> ex, DetectorTask task, const ModelConfig& m) {
  for (const auto& e : ex) {
    if (e.task != task) {
      throw Error(fmt::format("example {} is a {} example, detector is {}", e.example_id,
                              to_string(e.task), to_string(task)));
    }
    if (static_cast<int>(e.tokens.size()) > m.context_len) {
      throw Error(fmt::format("example {} longer than context {}", e.example_id, m.context_len));
    }
    for (auto t : e.tokens) {
      if (t >= static_cast<TokenId>(m.vocab_size)) {
        throw Error(fmt::format("example {} has token {} outside vocabulary {}", e.example_id, t,
                                m.vocab_size));
      }
    }
    if (e.positions.size() != e.labels.size()) throw Error("positions/labels size mismatch");
    for (int p : e.positions) {
      if (p < 0 || p >= static_cast<int>(e.tokens.size())) throw Error("prediction point outside sequence");
    }
  }
}

double readout_logit(std::span<const double> readout, const Eigen::Ref<const RowVector>& h) {
  const auto d = h.size();
  return h.dot(Eigen::Map<const RowVector>(readout.data(), d)) + readout[static_cast<std::size_t>(d)];
}

}  // namespace

StageSchedule DetectorConfig::probe() const {
  if (task == DetectorTask::kSentence) return make_stage(1e-2, 1000, 10000, *this);
  return make_stage(1e-4, 1000, 5000, *this);
}

StageSchedule DetectorConfig::finetune() const {
  if (task == DetectorTask::kSentence) return make_stage(1e-3, 10000, 250000, *this);
  return make_stage(5e-5, 1000, 20000, *this);
}

std::int64_t DetectorConfig::scaled_eval_every() const { return scaled(eval_every, step_scale, 10); }

RowMatrix extract_features(const Transformer& model, std::span<const DetectionExample> examples,
                           int layer) {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.positions.size();
  RowMatrix out(static_cast<Eigen::Index>(n), model.config().d_model);
  Activations act;
  Eigen::Index row = 0;
  for (const auto& e : examples) {
    model.forward(e.tokens, act);
    for (int p : e.positions) out.row(row++) = model.tap(act, layer, p);
  }
  return out;
}

std::vector<bool> point_labels(std::span<const DetectionExample> examples) {
  std::vector<bool> out;
  for (const auto& e : examples) out.insert(out.end(), e.labels.begin(), e.labels.end());
  return out;
}

ReadoutFit fit_readout(const RowMatrix& train_x, const std::vector<bool>& train_y,
                       const RowMatrix& val_x, const std::vector<bool>& val_y,
                       const StageSchedule& stage, const DetectorConfig& cfg) {
  if (train_x.rows() == 0) throw Error("no training points");
  if (static_cast<std::size_t>(train_x.rows()) != train_y.size() ||
      static_cast<std::size_t>(val_x.rows()) != val_y.size()) {
    throw Error("feature/label count mismatch");
  }
  const auto d = train_x.cols();
  const auto sched = lr_schedule(stage);
  const auto eval_every = cfg.scaled_eval_every();
  std::vector<double> theta(static_cast<std::size_t>(d) + 1, 0.0), grads(theta.size());
  Adam adam(theta.size(), cfg.adam);
  BatchCursor cursor(static_cast<std::size_t>(train_x.rows()), cfg.seed);
  EarlyStopping stopper(cfg, val_y);

  ReadoutFit fit;
  fit.readout = theta;
  std::vector<double> logits(static_cast<std::size_t>(val_x.rows()));
  auto evaluate = [&](std::int64_t step) {
    for (Eigen::Index i = 0; i < val_x.rows(); ++i) {
      logits[static_cast<std::size_t>(i)] = readout_logit(theta, val_x.row(i));
    }
    const auto v = validation_score(logits, val_y);
    fit.history.push_back({1, step, v.metric});
    if (stopper.observe(v, step)) {
      fit.readout = theta;
      fit.best_step = step;
    }
  };

  evaluate(0);
  Eigen::Map<RowVector> gw(grads.data(), d);
  for (std::int64_t step = 1; step <= sched.total_steps && !stopper.stop(); ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    const double inv = 1.0 / cfg.batch_size;
    for (int k = 0; k < cfg.batch_size; ++k) {
      const auto i = static_cast<Eigen::Index>(cursor.next());
      const double g = (sigmoid(readout_logit(theta, train_x.row(i))) -
                        (train_y[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) * inv;
      gw += g * train_x.row(i);
      grads.back() += g;
    }
    adam.step(theta, grads, sched.at(step));
    if (step % eval_every == 0 || step == sched.total_steps) evaluate(step);
  }
  fit.diverged = stopper.diverged();
  return fit;
}

namespace {

Detector make_detector(const Transformer& model, std::string base_id, DetectorTask task,
                       DetectorType type, int layer, std::vector<double> readout) {
  Detector det;
  det.task = task;
  det.type = type;
  det.layer = layer;
  det.base_id = std::move(base_id);
  det.model = model.config();
  det.weights.assign(model.params().begin(), model.params().end());
  det.readout = std::move(readout);
  return det;
}

}  // namespace

DetectorRun train_head(const Transformer& base, std::string base_id,
                       std::span<const DetectionExample> train,
                       std::span<const DetectionExample> validation, const DetectorConfig& cfg) {
  check_examples(train, cfg.task, base.config());
  check_examples(validation, cfg.task, base.config());
  const int layer = resolve_layer(cfg, base.config());
  const std::vector<double> before(base.params().begin(), base.params().end());

  const auto fit = fit_readout(extract_features(base, train, layer), point_labels(train),
                               extract_features(base, validation, layer), point_labels(validation),
                               cfg.probe(), cfg);

  if (std::memcmp(before.data(), base.params().data(), before.size() * sizeof(double)) != 0) {
    throw FrozenBaseViolation("base weights changed while training a head detector");
  }
  DetectorRun run;
  run.detector = make_detector(base, std::move(base_id), cfg.task, DetectorType::kHead, layer, fit.readout);
  run.history = fit.history;
  run.best_step = fit.best_step;
  run.diverged = fit.diverged;
  return run;
}

DetectorRun train_full(const Transformer& base, std::string base_id,
                       std::span<const DetectionExample> train,
                       std::span<const DetectionExample> validation, const DetectorConfig& cfg) {
  check_examples(train, cfg.task, base.config());
  check_examples(validation, cfg.task, base.config());
  if (train.empty()) throw Error("no training examples");
  const int top = base.config().n_layers;
  const int d = base.config().d_model;

  DetectorRun run;
  Transformer model = base;
  std::vector<double> readout(static_cast<std::size_t>(d) + 1, 0.0);
  std::int64_t probe_best_step = 0;

  if (cfg.task == DetectorTask::kSentence) {
    DetectorConfig probe_cfg = cfg;
    probe_cfg.type = DetectorType::kHead;
    probe_cfg.layer = top;
    auto head = train_head(base, base_id, train, validation, probe_cfg);
    readout = head.detector.readout;
    probe_best_step = head.best_step;
    run.history = head.history;
    run.stage1 = head.detector;
    run.stage1->type = DetectorType::kFull;
    if (head.diverged) {
      run.detector = *run.stage1;
      run.best_step = head.best_step;
      run.diverged = true;
      return run;
    }
  }

  const int stage = cfg.task == DetectorTask::kSentence ? 2 : 1;
  const auto sched = lr_schedule(cfg.finetune());
  const auto eval_every = cfg.scaled_eval_every();
  const std::size_t n_model = model.param_count();
  ParamBuffer theta(n_model + readout.size());
  std::copy(model.params().begin(), model.params().end(), theta.begin());
  std::copy(readout.begin(), readout.end(), theta.begin() + static_cast<std::ptrdiff_t>(n_model));
  ParamBuffer grads(theta.size());
  Adam adam(theta.size(), cfg.adam);
  BatchCursor cursor(train.size(), hash_combine(cfg.seed, 2));
  const auto val_labels = point_labels(validation);
  EarlyStopping stopper(cfg, val_labels);
  Activations act;

  auto sync_model = [&] { std::copy_n(theta.begin(), n_model, model.params().begin()); };
  std::span<const double> ro(theta.data() + n_model, readout.size());

  ParamBuffer best = theta;
  std::int64_t best_step = 0;
  std::vector<double> logits(val_labels.size());
  auto evaluate = [&](std::int64_t step) {
    std::size_t k = 0;
    for (const auto& e : validation) {
      model.forward(e.tokens, act);
      for (int p : e.positions) logits[k++] = readout_logit(ro, act.out.row(p));
    }
    const auto v = validation_score(logits, val_labels);
    run.history.push_back({stage, step, v.metric});
    if (stopper.observe(v, step)) {
      best = theta;
      best_step = step;
    }
  };

  sync_model();
  evaluate(0);
  RowMatrix d_out;
  for (std::int64_t step = 1; step <= sched.total_steps && !stopper.stop(); ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch_size));
    std::size_t points = 0;
    for (auto& i : batch) {
      i = cursor.next();
      points += train[i].positions.size();
    }
    const double inv = 1.0 / static_cast<double>(points);
    Eigen::Map<RowVector> gw(grads.data() + n_model, d);
    Eigen::Map<const RowVector> w(ro.data(), d);
    for (auto i : batch) {
      const auto& e = train[i];
      model.forward(e.tokens, act);
      d_out = RowMatrix::Zero(act.length, d);
      for (std::size_t k = 0; k < e.positions.size(); ++k) {
        const int p = e.positions[k];
        const double g = (sigmoid(readout_logit(ro, act.out.row(p))) - (e.labels[k] ? 1.0 : 0.0)) * inv;
        d_out.row(p) += g * w;
        gw += g * act.out.row(p);
        grads.back() += g;
      }
      model.backward(e.tokens, act, d_out, std::span<double>(grads.data(), n_model));
    }
    for (double g : grads) {
      if (!std::isfinite(g)) throw NumericalError(fmt::format("non-finite detector gradient at step {}", step));
    }
    adam.step(theta, grads, sched.at(step));
    sync_model();
    if (step % eval_every == 0 || step == sched.total_steps) evaluate(step);
  }

  std::copy_n(best.begin(), n_model, model.params().begin());
  run.detector = make_detector(model, std::move(base_id), cfg.task, DetectorType::kFull, top,
                               std::vector<double>(best.begin() + static_cast<std::ptrdiff_t>(n_model), best.end()));
  run.best_stage = stage;
  run.best_step = best_step;
  if (stage == 2 && best_step == 0) {
    run.best_stage = 1;
    run.best_step = probe_best_step;
  }
  run.diverged = stopper.diverged();
  return run;
}

// ---------------------------------------------------------------------------
// Scoring and persistence

std::vector<ScoredPoint> score(const Detector& det, std::span<const DetectionExample> examples) {
  check_examples(examples, det.task, det.model);
  Transformer model(det.model);
  if (det.weights.size() != model.param_count()) throw Error("detector weights do not match its config");
  if (det.readout.size() != static_cast<std::size_t>(det.model.d_model) + 1) {
    throw Error("detector readout does not match its config");
  }
  std::copy(det.weights.begin(), det.weights.end(), model.params().begin());
  std::vector<ScoredPoint> out;
  Activations act;
  for (const auto& e : examples) {
    model.forward(e.tokens, act);
    for (std::size_t k = 0; k < e.positions.size(); ++k) {
      const int p = e.positions[k];
      ScoredPoint s;
      s.example_id = det.task == DetectorTask::kSentence ? e.example_id
                                                         : fmt::format("{}@{}", e.example_id, p);
      s.task = det.task;
      s.score = sigmoid(readout_logit(det.readout, model.tap(act, det.layer, p)));
      s.label = e.labels[k];
      out.push_back(std::move(s));
    }
  }
  return out;
}

void Detector::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_f64(dir / "weights.bin", weights);
  write_f64(dir / "readout.bin", readout);
  nlohmann::json manifest{{"format", "hallu-detector-v1"},
                          {"dtype", "f64le"},
                          {"task", to_string(task)},
                          {"type", to_string(type)},
                          {"layer", layer},
                          {"base_id", base_id},
                          {"model", to_json(model)},
                          {"param_count", weights.size()},
                          {"readout_size", readout.size()}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("cannot write manifest in {}", dir.string()));
}

Detector Detector::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError(fmt::format("no detector manifest in {}", dir.string()));
  const auto m = nlohmann::json::parse(in);
  if (m.at("format") != "hallu-detector-v1") throw Error(fmt::format("{} is not a detector", dir.string()));
  Detector det;
  det.task = parse_task(m.at("task").get<std::string>());
  det.type = parse_type(m.at("type").get<std::string>());
  det.layer = m.at("layer").get<int>();
  det.base_id = m.at("base_id").get<std::string>();
  det.model = model_config_from_json(m.at("model"));
  det.weights = read_f64(dir / "weights.bin", m.at("param_count").get<std::size_t>());
  det.readout = read_f64(dir / "readout.bin", m.at("readout_size").get<std::size_t>());
  return det;
}

void write_scored(const std::filesystem::path& path, std::span<const ScoredPoint> points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& p : points) {
    out << nlohmann::json{{"example_id", p.example_id},
                          {"task", to_string(p.task)},
                          {"score", p.score},
                          {"label", p.label}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<ScoredPoint> read_scored(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<ScoredPoint> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("example_id").get<std::string>(), parse_task(j.at("task").get<std::string>()),
                   j.at("score").get<double>(), j.at("label").get<bool>()});
  }
  return out;
}

DetectorEval evaluate(std::span<const ScoredPoint> points, double threshold) {
  DetectorEval ev;
  ev.points = points.size();
  if (points.empty()) return ev;
  std::vector<double> s;
  std::vector<bool> l;
  for (const auto& p : points) {
    s.push_back(p.score);
    l.push_back(p.label);
  }
  ev.prevalence = prevalence(l);
  ev.accuracy = accuracy(s, l, threshold);
  if (ev.prevalence > 0.0 && ev.prevalence < 1.0) {
    ev.auc_pr = auc_pr(s, l);
    ev.curve = pr_curve(s, l);
  }
  return ev;
}

}  // namespace hallu
