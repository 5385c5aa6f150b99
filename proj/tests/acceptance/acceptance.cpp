// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when a hard gate fails.
//
//   hallu_acceptance [--work DIR] [--config PATH]
//
// The two sweeps go to DIR/a and DIR/b; completed units are reused, so a
// persistent DIR makes reruns cheap. Without --work a temporary directory
// is used and removed afterwards.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hallu/corpus.hpp"
#include "hallu/detector.hpp"
#include "hallu/metrics.hpp"
#include "hallu/object_trie.hpp"
#include "hallu/oracle.hpp"
#include "hallu/runner.hpp"
#include "hallu/schedule.hpp"
#include "hallu/table.hpp"
#include "hallu/trainer.hpp"
#include "hallu/transformer.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace hallu;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int hard_failures = 0;

void report(int n, const std::string& name, const Verdict& v, bool soft = false) {
  if (!v.pass && !soft) ++hard_failures;
  fmt::print("CRITERION {:>2} {} {}: {}{}\n", n, v.pass ? "PASS" : "FAIL", name, v.detail,
             soft && !v.pass ? " [soft gate: warning only]" : "");
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError(fmt::format("missing {}", p.string()));
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(fmt::format("missing {}", p.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// 1. Oracle exactness

Verdict oracle_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto kg = synthesize(testing::small_synth(101, 2000));
  const auto vocab = TokenizerVocab::build(kg);
  const auto trie = ObjectTrie::build(kg, vocab);
  const auto& ts = kg.triplets();
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto token = [&] { return static_cast<TokenId>(kFirstRegularToken + pick(vocab.size() - kFirstRegularToken)); };

  const std::size_t cases = 20000;
  std::size_t agree = 0, hallucinated = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const auto& base = ts[pick(ts.size())];
    std::string predicate = i % 25 == 0 ? ts[pick(ts.size())].predicate : base.predicate;
    auto q = vocab.tokenize(base.object);
    switch (pick(5)) {
      case 1: q.resize(pick(q.size())); break;
      case 2: q[pick(q.size())] = token(); break;
      case 3: q.push_back(token()); break;
      case 4:
        q.assign(1 + pick(4), 0);
        for (auto& t : q) t = token();
        break;
      default: break;
    }
    const auto rec = testing::make_record(base.subject, predicate, q, vocab);
    const auto s = label_sentence(rec, kg);
    const auto t = label_tokens(rec, trie);
    const bool known = testing::brute_pair_known(ts, base.subject, predicate);
    bool ok = s.out_of_reference == !known && t.out_of_reference == !known;
    if (ok && known) {
      const bool valid = testing::brute_is_valid(ts, base.subject, predicate, rec.object_text);
      const auto first = testing::brute_first_hallucinated(ts, vocab, base.subject, predicate, q);
      ok = s.is_hallucination == !valid && t.first_hallucinated_index == first;
      if (ok) {
        const std::size_t n = first ? *first + 1 : q.size();
        ok = t.labels.size() == n;
        for (std::size_t k = 0; ok && k < n; ++k) ok = t.labels[k] == (first && k == *first);
      }
      hallucinated += !valid;
    }
    agree += ok;
  }
  const double secs = seconds_since(t0);
  return {agree == cases && secs < 60.0,
          fmt::format("{}/{} cases agree ({} hallucinated) in {:.2f} s", agree, cases, hallucinated, secs)};
}

// ---------------------------------------------------------------------------
// 2. Metric exactness

Verdict metric_exactness() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const int n = std::uniform_int_distribution<int>(2, 80)(rng);
    const int levels = std::uniform_int_distribution<int>(2, 15)(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<bool> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = std::uniform_int_distribution<int>(0, levels)(rng) / double(levels);
      y[static_cast<std::size_t>(i)] = std::bernoulli_distribution(0.35)(rng);
    }
    y[0] = true;
    y[1] = false;
    worst = std::max(worst, std::abs(auc_pr(s, y) - testing::brute_average_precision(s, y)));
  }

  const std::size_t n = 4000;
  std::vector<double> s(n);
  std::vector<bool> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::normal_distribution<double>()(rng);
    y[i] = i < n / 4;
  }
  const double prev = prevalence(y);
  std::vector<double> aps;
  for (int r = 0; r < 100; ++r) {
    std::shuffle(y.begin(), y.end(), rng);
    aps.push_back(auc_pr(s, y));
  }
  const double mean = std::accumulate(aps.begin(), aps.end(), 0.0) / double(aps.size());
  double var = 0.0;
  for (double a : aps) var += (a - mean) * (a - mean);
  const double sigma = std::sqrt(var / double(aps.size() - 1));
  std::shuffle(y.begin(), y.end(), rng);
  const double shuffled = auc_pr(s, y);

  std::vector<double> zeros(2000, 0.0);
  std::vector<bool> five(2000, false);
  for (int i = 0; i < 100; ++i) five[static_cast<std::size_t>(i)] = true;
  const double acc = accuracy(zeros, five);

  const bool ok = worst <= 1e-12 && std::abs(shuffled - prev) <= 3 * sigma && acc == 0.95;
  return {ok, fmt::format("max |AP - enumeration| = {:.2e} over 200 sets; shuffled AUC-PR {:.4f} vs "
                          "prevalence {:.4f} (3 sigma = {:.4f}); all-negative accuracy {}",
                          worst, shuffled, prev, 3 * sigma, acc)};
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

Verdict gradient_correctness() {
  Transformer model({"tiny", 2, 2, 8, 16, 12, 17, 1});
  model.init(19);
  std::mt19937_64 rng(5);
  std::vector<TokenId> w(12, kPad);
  for (int i = 0; i < 10; ++i) w[static_cast<std::size_t>(i)] = static_cast<TokenId>(std::uniform_int_distribution<int>(1, 16)(rng));
  Activations act;
  std::vector<double> g(model.param_count(), 0.0);
  model.lm_loss(w, act, g, 1.0);
  auto loss_at = [&](std::size_t i, double d) {
    const double keep = model.params()[i];
    model.params()[i] = keep + d;
    Activations a;
    const double v = model.lm_loss(w, a).nats;
    model.params()[i] = keep;
    return v;
  };
  const double h = 1e-4;
  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < model.param_count(); ++i) {
    const double numeric = (8 * (loss_at(i, h) - loss_at(i, -h)) - (loss_at(i, 2 * h) - loss_at(i, -2 * h))) / (12 * h);
    const double scale = std::max(std::abs(numeric), std::abs(g[i]));
    if (scale < 1e-6) continue;
    worst = std::max(worst, std::abs(numeric - g[i]) / scale);
    ++checked;
  }

  const int vocab = 500;
  Transformer big({"init", 2, 4, 32, 64, 64, vocab, 3});
  LossSum total;
  for (int k = 0; k < 8; ++k) {
    std::vector<TokenId> win(64);
    for (auto& t : win) t = static_cast<TokenId>(std::uniform_int_distribution<int>(1, vocab - 1)(rng));
    const auto part = big.lm_loss(win, act);
    total.nats += part.nats;
    total.tokens += part.tokens;
  }
  const double ln_v = std::log(double(vocab));
  const double rel = std::abs(total.mean() - ln_v) / ln_v;
  return {checked >= 100 && worst <= 1e-4 && rel <= 0.05,
          fmt::format("max relative error {:.2e} over {} parameters; initial loss {:.4f} vs ln V {:.4f} ({:.2f}%)",
                      worst, checked, total.mean(), ln_v, 100 * rel)};
}

// ---------------------------------------------------------------------------
// 4. Schedule correctness

Verdict schedule_correctness() {
  const double base = base_learning_rate(5.0, 25'200'000);
  LrSchedule s{base, 4000, 100000, 0.05};
  const bool endpoints = s.at(0) == 0.0 && s.at(4000) == base && std::abs(s.at(100000) - 0.05 * base) <= 1e-15;
  const bool ladder = std::abs(base - 1e-3) <= 0.01 * 1e-3;
  return {endpoints && ladder, fmt::format("lr(0) = {}, lr(warmup) = {:.6e}, lr(final) / base = {:.6f}; "
                                           "base_lr(25.2M, c=5) = {:.6e}",
                                           s.at(0), s.at(4000), s.at(100000) / base, base)};
}

// ---------------------------------------------------------------------------
// Sweep outputs

struct RateSet {
  std::map<double, nlohmann::json> by_temperature;
  const nlohmann::json& at(double t) const { return by_temperature.at(t); }
};

struct Sweep {
  fs::path root;
  RunConfig cfg;
  std::map<std::string, RateSet> rates;  // LM run id -> metrics
  std::map<std::string, LmRunKey> keys;

  double fvs(const std::string& id, double t) const { return rates.at(id).at(t)["fvs"]["rate"]; }
  double ivs(const std::string& id, double t) const { return rates.at(id).at(t)["ivs"]["rate"]; }
};

Sweep load_sweep(const Runner& runner) {
  Sweep s{runner.root(), runner.config(), {}, {}};
  for (const auto& k : lm_runs(s.cfg)) {
    const auto m = read_json(runner.labels_dir(k) / "metrics.json");
    RateSet r;
    for (const auto& t : m.at("temperatures")) r.by_temperature[t.at("temperature").get<double>()] = t;
    s.rates[k.id()] = r;
    s.keys[k.id()] = k;
  }
  return s;
}

std::string id_of(const std::string& model, double level, int epochs) {
  return LmRunKey{model, level, epochs}.id();
}

std::vector<std::string> ladder_by_size(const RunConfig& cfg) {
  std::vector<std::pair<std::size_t, std::string>> sized;
  for (const auto& m : cfg.models) {
    sized.emplace_back(ModelConfig{m.name, m.n_layers, m.n_heads, m.d_model, m.d_ff, cfg.context_len, 100, 0}
                           .nonembedding_params(),
                       m.name);
  }
  std::sort(sized.begin(), sized.end());
  std::vector<std::string> names;
  for (const auto& [p, n] : sized) names.push_back(n);
  return names;
}

// 5. Epoch trend
Verdict epoch_trend(const Sweep& s, const std::string& model, double level) {
  const std::vector<int> epochs{1, 2, 10, 20, 100};
  std::vector<double> r;
  for (int e : epochs) r.push_back(s.fvs(id_of(model, level, e), 1.0));
  bool mono = true;
  for (std::size_t i = 1; i < r.size(); ++i) mono = mono && r[i] <= r[i - 1] + 0.02;
  const bool drop = r.back() < 0.25 * r.front();
  std::string trail;
  for (std::size_t i = 0; i < r.size(); ++i) trail += fmt::format("{}{}ep {:.4f}", i ? ", " : "", epochs[i], r[i]);
  return {mono && drop, fmt::format("{} at level {}, temp 1 FVS rate: {}; 100ep / 1ep = {:.3f}", model, level,
                                    trail, r.back() / r.front())};
}

// 6. Size trend
Verdict size_trend(const Sweep& s, double level, int epochs) {
  const auto ladder = ladder_by_size(s.cfg);
  bool ok = true;
  std::string trail;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const double r = s.fvs(id_of(ladder[i], level, epochs), 1.0);
    trail += fmt::format("{}{} {:.4f}", i ? " <= " : "", ladder[i], r);
    if (i > 0) ok = ok && r <= s.fvs(id_of(ladder[i - 1], level, epochs), 1.0) + 0.02;
  }
  return {ok, fmt::format("temp 1 FVS rate at {} epochs, level {} (smallest first, 2 pp allowance): {}", epochs,
                          level, trail)};
}

// 7. Dataset-size trend
Verdict data_trend(const Sweep& s, const std::string& model, int epochs, double small, double large) {
  const double a = s.fvs(id_of(model, small, epochs), 1.0);
  const double b = s.fvs(id_of(model, large, epochs), 1.0);
  return {b > a, fmt::format("{} at {} epochs, temp 1 FVS rate: level {} -> {:.4f}, level {} (10x) -> {:.4f}", model,
                             epochs, small, a, large, b)};
}

// 8. Temperature trade-off
int inversions(const std::vector<double>& v, bool increasing) {
  int n = 0;
  for (std::size_t i = 1; i < v.size(); ++i) n += increasing ? v[i] < v[i - 1] : v[i] > v[i - 1];
  return n;
}

Verdict temperature_tradeoff(const Sweep& s, const std::string& id) {
  std::vector<double> temps, prec, rec;
  for (const auto& [t, m] : s.rates.at(id).by_temperature) {
    temps.push_back(t);
    prec.push_back(m["fvs"]["precision"]);
    rec.push_back(m["fvs"]["recall"]);
  }
  const double p0 = s.rates.at(id).at(0.0)["fvs"]["precision"], p1 = s.rates.at(id).at(1.0)["fvs"]["precision"];
  const double r0 = s.rates.at(id).at(0.0)["fvs"]["recall"], r1 = s.rates.at(id).at(1.0)["fvs"]["recall"];
  const bool ends = p0 >= p1 && r1 >= r0 && (p0 > p1 || r1 > r0);
  const int pi = inversions(prec, false), ri = inversions(rec, true);
  const bool six = temps.size() == 6;
  return {ends && six && pi <= 1 && ri <= 1,
          fmt::format("{}: precision {:.4f} (t0) vs {:.4f} (t1), recall {:.4f} (t0) vs {:.4f} (t1); "
                      "inversions over {} temperatures: precision {}, recall {}",
                      id, p0, p1, r0, r1, temps.size(), pi, ri)};
}

// 9. Seen vs unseen
std::pair<Verdict, Verdict> seen_unseen(const Sweep& s) {
  bool order = true, half = true;
  std::size_t checked = 0;
  double min_gap = 1.0, min_ivs = 1.0;
  std::string worst_gap, worst_ivs;
  for (const auto& [id, r] : s.rates) {
    for (const auto& [t, m] : r.by_temperature) {
      const double f = m["fvs"]["rate"], i = m["ivs"]["rate"];
      if (i < min_ivs) min_ivs = i, worst_ivs = fmt::format("{} t{}", id, t);
      half = half && i >= 0.5;
      if (s.keys.at(id).epochs < 10) continue;
      ++checked;
      if (i - f < min_gap) min_gap = i - f, worst_gap = fmt::format("{} t{}", id, t);
      order = order && i >= f;
    }
  }
  return {{order, fmt::format("IVS >= FVS on {} (run, temperature) points from 10 epochs on; "
                              "smallest IVS - FVS = {:.4f} at {}",
                              checked, min_gap, worst_gap)},
          {half, fmt::format("smallest IVS rate {:.4f} at {}", min_ivs, worst_ivs)}};
}

// 10 and 11. Detectors
struct EvalRow {
  std::string lm;
  std::string model;
  std::size_t params = 0;
  std::string name;
  std::optional<double> ap;
};

std::vector<EvalRow> detector_evals(const Runner& runner, const std::string& eval_set) {
  std::vector<EvalRow> out;
  for (const auto& k : detector_runs(runner.config())) {
    if (!k.top) continue;
    const auto e = read_json(runner.eval_dir(k) / "eval.json").at(eval_set);
    const auto& spec = runner.config().model(k.lm.model);
    EvalRow r{k.lm.id(), k.lm.model,
              ModelConfig{spec.name, spec.n_layers, spec.n_heads, spec.d_model, spec.d_ff, runner.config().context_len, 100, 0}
                  .nonembedding_params(),
              k.name(), std::nullopt};
    if (!e.at("auc_pr").is_null()) r.ap = e.at("auc_pr").get<double>();
    out.push_back(r);
  }
  return out;
}

Verdict detector_ordering(const Runner& runner) {
  const auto rows = detector_evals(runner, "fvs_test");
  std::map<std::pair<std::string, std::string>, std::pair<std::optional<double>, std::optional<double>>> pairs;
  for (const auto& r : rows) {
    const auto task = r.name.substr(0, r.name.find('_'));
    auto& slot = pairs[{r.lm, task}];
    (r.name.find("_full_") != std::string::npos ? slot.second : slot.first) = r.ap;
  }
  bool ordered = true;
  std::string trail;
  for (const auto& [key, hf] : pairs) {
    const auto& [head, full] = hf;
    const bool ok = head && full && *full >= *head - 0.02;
    ordered = ordered && ok;
    trail += fmt::format("; {} {}: full {} vs head {}", key.first, key.second,
                         full ? fmt::format("{:.4f}", *full) : "undefined",
                         head ? fmt::format("{:.4f}", *head) : "undefined");
  }

  // Linearly separable probe.
  std::mt19937_64 rng(31);
  const int d = 24;
  std::vector<double> dir(d);
  for (auto& v : dir) v = std::normal_distribution<double>()(rng);
  auto make = [&](int n, RowMatrix& x, std::vector<bool>& y) {
    x.resize(n, d);
    y.assign(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      double p = 0.0;
      for (int j = 0; j < d; ++j) p += dir[static_cast<std::size_t>(j)] * (x(i, j) = std::normal_distribution<double>()(rng));
      y[static_cast<std::size_t>(i)] = p > 0.5;
    }
  };
  RowMatrix tx, vx, ex;
  std::vector<bool> ty, vy, ey;
  make(2000, tx, ty);
  make(400, vx, vy);
  make(2000, ex, ey);
  DetectorConfig cfg;
  cfg.seed = 3;
  cfg.step_scale = 0.2;
  cfg.eval_every = 100;
  const auto fit = fit_readout(tx, ty, vx, vy, cfg.probe(), cfg);
  std::vector<double> sc(static_cast<std::size_t>(ex.rows()));
  for (Eigen::Index i = 0; i < ex.rows(); ++i) {
    double z = fit.readout[static_cast<std::size_t>(d)];
    for (int j = 0; j < d; ++j) z += fit.readout[static_cast<std::size_t>(j)] * ex(i, j);
    sc[static_cast<std::size_t>(i)] = z;
  }
  const double probe_ap = auc_pr(sc, ey);

  // Frozen base: head training on a real LM leaves it bitwise intact.
  const auto kg = synthesize(testing::small_synth(77, 60));
  const auto vocab = TokenizerVocab::build(kg);
  const auto trie = ObjectTrie::build(kg, vocab);
  TrainConfig tc;
  tc.epochs = 3;
  tc.warmup_steps = 10;
  const Transformer lm =
      train(build_stream(kg.triplets(), vocab, 32, 1), {"f", 2, 2, 16, 32, 32, int(vocab.size()), 2}, tc)
          .checkpoint.instantiate();
  std::vector<Prompt> prompts;
  for (const auto& [pair, objs] : kg.pair_index()) prompts.push_back(Prompt::make(pair.first, pair.second, vocab));
  DetectionDataOptions dopt;
  dopt.max_len = default_max_len(kg, vocab);
  const auto data = build_detection_data(lm, prompts, vocab, kg, trie, dopt);
  const std::vector<double> before(lm.params().begin(), lm.params().end());
  bool frozen = true;
  for (auto task : {DetectorTask::kSentence, DetectorTask::kToken}) {
    for (int layer : {1, 2}) {
      DetectorConfig hc;
      hc.task = task;
      hc.layer = layer;
      hc.step_scale = 0.01;
      hc.eval_every = 20;
      train_head(lm, "f", data.part(task, Part::kTrain), data.part(task, Part::kValidation), hc);
      frozen = frozen && std::memcmp(before.data(), lm.params().data(), before.size() * sizeof(double)) == 0;
    }
  }

  return {ordered && probe_ap > 0.99 && frozen,
          fmt::format("separable probe AUC-PR {:.5f}; frozen base {}{}", probe_ap, frozen ? "bitwise intact" : "CHANGED",
                      trail)};
}

Verdict inverse_detectability(const Runner& runner) {
  std::vector<double> sizes, aps;
  std::string trail;
  for (const auto& r : detector_evals(runner, "fvs_test")) {
    if (r.name.rfind("sentence_full_", 0) != 0) continue;
    trail += fmt::format("{}{} ({} params) {}", trail.empty() ? "" : ", ", r.lm, r.params,
                         r.ap ? fmt::format("{:.4f}", *r.ap) : "undefined");
    if (!r.ap) continue;
    sizes.push_back(double(r.params));
    aps.push_back(*r.ap);
  }
  if (sizes.size() < 3) return {false, fmt::format("fewer than 3 sizes with a defined AUC-PR: {}", trail)};
  const double rho = spearman(sizes, aps);
  return {rho < 0, fmt::format("Spearman(size, sentence full-detector AUC-PR) = {:.3f} over {} sizes: {}", rho,
                               sizes.size(), trail)};
}

// 12. Reproducibility
Verdict reproducibility(const Runner& a, const Runner& b) {
  auto temp0 = [](const fs::path& csv) {
    const auto t = Table::read(csv);
    Table out{t.header, {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.number(r, "temperature") == 0.0) out.rows.push_back(t.rows[r]);
    }
    return out;
  };
  const auto ta = temp0(a.report_dir() / "aggregates.csv");
  const auto tb = temp0(b.report_dir() / "aggregates.csv");
  std::size_t traces = 0, same = 0;
  for (const auto& k : lm_runs(a.config())) {
    ++traces;
    same += slurp(a.lm_dir(k) / "loss.csv") == slurp(b.lm_dir(k) / "loss.csv");
  }
  const bool csv = !ta.rows.empty() && ta == tb;
  return {csv && same == traces, fmt::format("temp-0 aggregate rows identical: {} ({} rows); loss traces identical: {}/{}",
                                             csv ? "yes" : "no", ta.rows.size(), same, traces)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work;
  fs::path config = fs::path(HALLU_CONFIG_DIR) / "acceptance.json";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--config" && i + 1 < argc) {
      config = argv[++i];
    } else {
      fmt::print(stderr, "usage: {} [--work DIR] [--config PATH]\n", argv[0]);
      return 2;
    }
  }
  std::optional<testing::TempDir> scratch;
  if (work.empty()) {
    scratch.emplace("acceptance");
    work = scratch->path();
  }

  try {
    report(1, "oracle exactness", oracle_exactness());
    report(2, "metric exactness", metric_exactness());
    report(3, "gradient correctness", gradient_correctness());
    report(4, "schedule correctness", schedule_correctness());

    const auto cfg = RunConfig::load(config);
    Runner first(cfg, work / "a");
    Runner second(cfg, work / "b");
    auto t0 = std::chrono::steady_clock::now();
    first.sweep();
    const double sweep_secs = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    second.sweep();
    const double second_secs = seconds_since(t0);
    fmt::print("sweeps finished in {:.1f} s and {:.1f} s (zero when reused)\n", sweep_secs, second_secs);
    const auto s = load_sweep(first);

    const double slowest = std::max(sweep_secs, second_secs);
    auto v5 = epoch_trend(s, "m", 0.1);
    v5.detail += fmt::format("; slowest sweep {:.1f} min", slowest / 60);
    v5.pass = v5.pass && slowest < 7200;
    report(5, "epoch trend", v5);
    report(6, "size trend", size_trend(s, 0.1, 20));
    report(7, "dataset-size trend", data_trend(s, "m", 50, 0.01, 0.1));
    report(8, "temperature trade-off", temperature_tradeoff(s, id_of("m", 0.1, 100)));
    const auto [order, half] = seen_unseen(s);
    report(9, "seen vs unseen", order);
    fmt::print("   observation: IVS rate >= 50% everywhere: {} ({})\n", half.pass ? "yes" : "no", half.detail);
    report(10, "detector ordering", detector_ordering(first));
    report(11, "inverse detectability", inverse_detectability(first), true);
    report(12, "end-to-end reproducibility", reproducibility(first, second));
  } catch (const std::exception& e) {
    fmt::print("acceptance aborted: {}\n", e.what());
    return 1;
  }
  fmt::print("{} hard gate(s) failed\n", hard_failures);
  return hard_failures == 0 ? 0 : 1;
}
