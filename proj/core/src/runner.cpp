#include "hallu/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hallu/metrics.hpp"
#include "hallu/object_trie.hpp"
#include "hallu/oracle.hpp"
#include "hallu/report.hpp"
#include "hallu/sampler.hpp"

namespace hallu {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Strict config reading

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{} must be an object", name()));
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), key);
  }

  template <class T>
  T req(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(fmt::format("{}.{} is required", name(), key));
    return convert<T>(j_.at(key), key);
  }

  template <class T>
  std::vector<T> list(const char* key, std::vector<T> fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(fmt::format("{}.{} must be an array", name(), key));
    std::vector<T> out;
    for (const auto& e : v) out.push_back(convert<T>(e, key));
    return out;
  }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(fmt::format("unknown key {}.{}", name(), k));
    }
  }

 private:
  std::string name() const { return path_.empty() ? "config" : path_; }

  template <class T>
  T convert(const json& v, const char* key) const {
    const auto where = fmt::format("{}.{}", name(), key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
      if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
        throw ConfigError(where + " must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
    }
    return v.get<T>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

CountDistribution read_distribution(Section s, CountDistribution d) {
  d.min = s.get<int>("min", d.min);
  d.max = s.get<int>("max", d.max);
  d.shape = parse_shape(s.get<std::string>("shape", std::string(to_string(d.shape))));
  d.param = s.get<double>("param", d.param);
  s.finish();
  return d;
}

json distribution_json(const CountDistribution& d) {
  return {{"min", d.min}, {"max", d.max}, {"shape", to_string(d.shape)}, {"param", d.param}};
}

bool contains_level(const std::vector<double>& levels, double l) {
  return std::find(levels.begin(), levels.end(), l) != levels.end();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  c.seed = root.get<std::uint64_t>("seed", c.seed);

  {
    auto kg = root.sub("kg");
    c.kg_source = kg.get<std::string>("source", c.kg_source);
    c.kg_path = kg.get<std::string>("path", "");
    auto s = kg.sub("synth");
    c.synth.n_subjects = s.get<std::size_t>("n_subjects", c.synth.n_subjects);
    c.synth.n_predicates = s.get<std::size_t>("n_predicates", c.synth.n_predicates);
    c.synth.predicates_per_subject =
        read_distribution(s.sub("predicates_per_subject"), c.synth.predicates_per_subject);
    c.synth.objects_per_pair = read_distribution(s.sub("objects_per_pair"), c.synth.objects_per_pair);
    c.synth.entity_name_length =
        read_distribution(s.sub("entity_name_length"), c.synth.entity_name_length);
    c.synth.vocab_pool_size = s.get<std::size_t>("vocab_pool_size", c.synth.vocab_pool_size);
    s.finish();
    kg.finish();
  }
  {
    auto s = root.sub("split");
    c.split.fvs_fraction = s.get<double>("fvs", c.split.fvs_fraction);
    c.split.pvs_fraction = s.get<double>("pvs", c.split.pvs_fraction);
    c.split.ivs_fraction = s.get<double>("ivs", c.split.ivs_fraction);
    c.split.subsample_levels = s.list<double>("levels", c.split.subsample_levels);
    c.max_objects_per_pair = s.get<std::size_t>("max_objects_per_pair", c.max_objects_per_pair);
    s.finish();
  }
  c.context_len = root.get<int>("context_len", c.context_len);

  if (root.has("models")) {
    const auto& models = root.raw("models");
    if (!models.is_array()) throw ConfigError("config.models must be an array");
    for (std::size_t i = 0; i < models.size(); ++i) {
      Section m(models[i], fmt::format("models[{}]", i));
      ModelSpec spec;
      spec.name = m.req<std::string>("name");
      spec.n_layers = m.get<int>("n_layers", spec.n_layers);
      spec.n_heads = m.get<int>("n_heads", spec.n_heads);
      spec.d_model = m.get<int>("d_model", spec.d_model);
      spec.d_ff = m.get<int>("d_ff", spec.d_ff);
      m.finish();
      c.models.push_back(spec);
    }
  } else {
    root.get<int>("models", 0);
  }
  {
    auto t = root.sub("train");
    c.train.lr_constant = t.get<double>("lr_constant", c.train.lr_constant);
    c.train.warmup_steps = t.get<std::int64_t>("warmup_steps", c.train.warmup_steps);
    c.train.max_warmup_fraction = t.get<double>("max_warmup_fraction", c.train.max_warmup_fraction);
    c.train.final_lr_fraction = t.get<double>("final_lr_fraction", c.train.final_lr_fraction);
    c.train.batch_size = t.get<int>("batch_size", c.train.batch_size);
    c.train.repack = t.get<bool>("repack", c.train.repack);
    c.train.adam.beta1 = t.get<double>("beta1", c.train.adam.beta1);
    c.train.adam.beta2 = t.get<double>("beta2", c.train.adam.beta2);
    c.train.adam.eps = t.get<double>("eps", c.train.adam.eps);
    t.finish();
  }
  if (root.has("grid")) {
    const auto& grid = root.raw("grid");
    if (!grid.is_array()) throw ConfigError("config.grid must be an array");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      Section g(grid[i], fmt::format("grid[{}]", i));
      GridCell cell;
      cell.models = g.list<std::string>("models", {});
      cell.levels = g.list<double>("levels", {1.0});
      cell.epochs = g.list<int>("epochs", {});
      g.finish();
      c.grid.push_back(cell);
    }
  } else {
    root.get<int>("grid", 0);
  }
  {
    auto g = root.sub("generation");
    c.generation.temperatures = g.list<double>("temperatures", c.generation.temperatures);
    c.generation.n_samples = g.get<int>("n_samples", c.generation.n_samples);
    c.generation.max_len = g.get<int>("max_len", c.generation.max_len);
    c.generation.max_prompts = g.get<std::size_t>("max_prompts", c.generation.max_prompts);
    c.generation.rate_temperature = g.get<double>("rate_temperature", c.generation.rate_temperature);
    g.finish();
  }
  {
    auto d = root.sub("detectors");
    auto& m = c.detectors;
    m.enabled = d.get<bool>("enabled", m.enabled);
    m.models = d.list<std::string>("models", m.models);
    m.level = d.get<double>("level", m.level);
    m.epochs = d.get<int>("epochs", m.epochs);
    std::vector<std::string> tasks, types;
    for (auto t : m.tasks) tasks.emplace_back(to_string(t));
    for (auto t : m.types) types.emplace_back(to_string(t));
    m.tasks.clear();
    m.types.clear();
    for (const auto& t : d.list<std::string>("tasks", tasks)) m.tasks.push_back(parse_task(t));
    for (const auto& t : d.list<std::string>("types", types)) m.types.push_back(parse_type(t));
    m.layer_sweep = d.get<bool>("layer_sweep", m.layer_sweep);
    m.n_generations = d.get<int>("n_generations", m.n_generations);
    m.temperature = d.get<double>("temperature", m.temperature);
    m.max_prompts = d.get<std::size_t>("max_prompts", m.max_prompts);
    m.eval_pvs = d.get<bool>("eval_pvs", m.eval_pvs);
    m.batch_size = d.get<int>("batch_size", m.batch_size);
    m.step_scale = d.get<double>("step_scale", m.step_scale);
    m.eval_every = d.get<std::int64_t>("eval_every", m.eval_every);
    m.patience = d.get<int>("patience", m.patience);
    m.threshold = d.get<double>("threshold", m.threshold);
    d.finish();
  }
  root.finish();

  // Semantic checks.
  if (c.kg_source != "synth" && c.kg_source != "ingest") {
    throw ConfigError(fmt::format("kg.source must be 'synth' or 'ingest', got '{}'", c.kg_source));
  }
  if (c.kg_source == "ingest" && c.kg_path.empty()) throw ConfigError("kg.path is required for ingest");
  c.synth.seed = c.derived_seed("kg");
  c.synth.validate();
  c.split.seed = c.derived_seed("split");
  if (!contains_level(c.split.subsample_levels, 1.0)) c.split.subsample_levels.push_back(1.0);
  std::sort(c.split.subsample_levels.begin(), c.split.subsample_levels.end());
  c.split.validate();
  if (c.max_objects_per_pair < 1 || c.max_objects_per_pair > static_cast<std::size_t>(kMaxObjectsPerPair)) {
    throw ConfigError(fmt::format("split.max_objects_per_pair must lie in [1, {}]", kMaxObjectsPerPair));
  }
  if (c.context_len < 8) throw ConfigError("context_len must be >= 8");
  if (c.models.empty()) throw ConfigError("config.models must list at least one model");
  std::set<std::string> names;
  for (const auto& m : c.models) {
    if (m.name.empty() || m.name.find_first_of("/\\ ,_\t") != std::string::npos) {
      throw ConfigError(fmt::format("model name '{}' must be non-empty without '/', '_', ',' or spaces", m.name));
    }
    if (!names.insert(m.name).second) throw ConfigError(fmt::format("duplicate model '{}'", m.name));
    ModelConfig mc{m.name, m.n_layers, m.n_heads, m.d_model, m.d_ff, c.context_len, 16, 0};
    mc.validate();
  }
  c.train.epochs = 1;
  c.train.validate();
  if (c.grid.empty()) throw ConfigError("config.grid must hold at least one cell");
  for (const auto& cell : c.grid) {
    if (cell.models.empty() || cell.levels.empty() || cell.epochs.empty()) {
      throw ConfigError("grid cells need models, levels and epochs");
    }
    for (const auto& m : cell.models) c.model(m);
    for (double l : cell.levels) {
      if (!contains_level(c.split.subsample_levels, l)) {
        throw ConfigError(fmt::format("grid level {} is not a split level", l));
      }
    }
    for (int e : cell.epochs) {
      if (e < 1) throw ConfigError("grid epochs must be >= 1");
    }
  }
  auto& g = c.generation;
  if (g.temperatures.empty()) throw ConfigError("generation.temperatures is empty");
  for (double t : g.temperatures) {
    if (!(t >= 0.0)) throw ConfigError("temperatures must be >= 0");
  }
  if (std::find(g.temperatures.begin(), g.temperatures.end(), g.rate_temperature) == g.temperatures.end()) {
    throw ConfigError("generation.rate_temperature must be one of the temperatures");
  }
  if (g.n_samples < 1) throw ConfigError("generation.n_samples must be >= 1");
  if (g.max_len < 0) throw ConfigError("generation.max_len must be >= 0");
  auto& d = c.detectors;
  if (d.enabled) {
    if (d.n_generations < 1 || d.batch_size < 1 || d.patience < 1 || d.eval_every < 1) {
      throw ConfigError("detector counts must be positive");
    }
    if (!(d.step_scale > 0.0)) throw ConfigError("detectors.step_scale must be positive");
    if (d.tasks.empty() || d.types.empty()) throw ConfigError("detectors need tasks and types");
    const auto runs = lm_runs(c);
    for (const auto& t : detector_targets(c)) {
      if (!std::binary_search(runs.begin(), runs.end(), t)) {
        throw ConfigError(fmt::format("detector target {} is not in the LM grid", t.id()));
      }
    }
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json models = json::array();
  for (const auto& m : this->models) {
    models.push_back({{"name", m.name},
                      {"n_layers", m.n_layers},
                      {"n_heads", m.n_heads},
                      {"d_model", m.d_model},
                      {"d_ff", m.d_ff}});
  }
  json grid = json::array();
  for (const auto& g : this->grid) {
    grid.push_back({{"models", g.models}, {"levels", g.levels}, {"epochs", g.epochs}});
  }
  std::vector<std::string> tasks, types;
  for (auto t : detectors.tasks) tasks.emplace_back(to_string(t));
  for (auto t : detectors.types) types.emplace_back(to_string(t));
  return {
      {"seed", seed},
      {"kg",
       {{"source", kg_source},
        {"path", kg_path.string()},
        {"synth",
         {{"n_subjects", synth.n_subjects},
          {"n_predicates", synth.n_predicates},
          {"predicates_per_subject", distribution_json(synth.predicates_per_subject)},
          {"objects_per_pair", distribution_json(synth.objects_per_pair)},
          {"entity_name_length", distribution_json(synth.entity_name_length)},
          {"vocab_pool_size", synth.vocab_pool_size}}}}},
      {"split",
       {{"fvs", split.fvs_fraction},
        {"pvs", split.pvs_fraction},
        {"ivs", split.ivs_fraction},
        {"levels", split.subsample_levels},
        {"max_objects_per_pair", max_objects_per_pair}}},
      {"context_len", context_len},
      {"models", models},
      {"train",
       {{"lr_constant", train.lr_constant},
        {"warmup_steps", train.warmup_steps},
        {"max_warmup_fraction", train.max_warmup_fraction},
        {"final_lr_fraction", train.final_lr_fraction},
        {"batch_size", train.batch_size},
        {"repack", train.repack},
        {"beta1", train.adam.beta1},
        {"beta2", train.adam.beta2},
        {"eps", train.adam.eps}}},
      {"grid", grid},
      {"generation",
       {{"temperatures", generation.temperatures},
        {"n_samples", generation.n_samples},
        {"max_len", generation.max_len},
        {"max_prompts", generation.max_prompts},
        {"rate_temperature", generation.rate_temperature}}},
      {"detectors",
       {{"enabled", detectors.enabled},
        {"models", detectors.models},
        {"level", detectors.level},
        {"epochs", detectors.epochs},
        {"tasks", tasks},
        {"types", types},
        {"layer_sweep", detectors.layer_sweep},
        {"n_generations", detectors.n_generations},
        {"temperature", detectors.temperature},
        {"max_prompts", detectors.max_prompts},
        {"eval_pvs", detectors.eval_pvs},
        {"batch_size", detectors.batch_size},
        {"step_scale", detectors.step_scale},
        {"eval_every", detectors.eval_every},
        {"patience", detectors.patience},
        {"threshold", detectors.threshold}}},
  };
}

std::string RunConfig::hash() const { return fmt::format("{:016x}", fnv1a64(to_json().dump())); }

const ModelSpec& RunConfig::model(std::string_view name) const {
  for (const auto& m : models) {
    if (m.name == name) return m;
  }
  throw ConfigError(fmt::format("unknown model '{}'", name));
}

std::uint64_t RunConfig::derived_seed(std::string_view purpose) const { return seeded_hash(purpose, seed); }

std::string LmRunKey::family() const { return fmt::format("{}_{}", model, level_tag(level)); }
std::string LmRunKey::id() const { return fmt::format("{}/{}", family(), epochs); }

std::vector<LmRunKey> lm_runs(const RunConfig& cfg) {
  std::set<LmRunKey> keys;
  for (const auto& cell : cfg.grid) {
    for (const auto& m : cell.models) {
      for (double l : cell.levels) {
        for (int e : cell.epochs) keys.insert({m, l, e});
      }
    }
  }
  return {keys.begin(), keys.end()};
}

std::string DetectorKey::name() const {
  return fmt::format("{}_{}_L{}", to_string(task), to_string(type), layer);
}
std::string DetectorKey::id() const { return fmt::format("{}/{}", lm.id(), name()); }

std::vector<LmRunKey> detector_targets(const RunConfig& cfg) {
  if (!cfg.detectors.enabled) return {};
  std::vector<LmRunKey> out;
  if (cfg.detectors.models.empty()) {
    for (const auto& m : cfg.models) out.push_back({m.name, cfg.detectors.level, cfg.detectors.epochs});
  } else {
    for (const auto& m : cfg.detectors.models) out.push_back({m, cfg.detectors.level, cfg.detectors.epochs});
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<DetectorKey> detector_runs(const RunConfig& cfg) {
  std::vector<DetectorKey> out;
  for (const auto& lm : detector_targets(cfg)) {
    const int top = cfg.model(lm.model).n_layers;
    for (auto task : cfg.detectors.tasks) {
      for (auto type : cfg.detectors.types) out.push_back({lm, task, type, top, true});
      const bool has_head = std::find(cfg.detectors.types.begin(), cfg.detectors.types.end(),
                                      DetectorType::kHead) != cfg.detectors.types.end();
      if (cfg.detectors.layer_sweep && has_head) {
        for (int l = 1; l < top; ++l) out.push_back({lm, task, DetectorType::kHead, l, false});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directory

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
}

std::optional<std::string> nonce_of(const fs::path& dir) {
  const auto marker = dir / kMarkerFile;
  if (!fs::exists(marker)) return std::nullopt;
  try {
    return read_json(marker).at("nonce").get<std::string>();
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string fresh_nonce() {
  std::random_device rd;
  const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return fmt::format("{:016x}", v);
}

struct Corpus {
  KnowledgeGraph kg;  // filtered
  DatasetBundle bundle;
  TokenizerVocab vocab;
};

Corpus load_corpus(const fs::path& dir) {
  return {ingest(dir / "filtered.tsv"), DatasetBundle::load(dir / "bundle"),
          TokenizerVocab::load(dir / "vocab.tsv")};
}

KnowledgeGraph graph_of(std::vector<Triplet> t) { return KnowledgeGraph::from_triplets(std::move(t)); }

// Distinct prompt pairs of `triplets`, optionally capped to a seeded-hash
// subset, in (subject, predicate) order.
std::vector<Prompt> prompts_of(const std::vector<Triplet>& triplets, const TokenizerVocab& vocab,
                               std::size_t cap, std::uint64_t seed) {
  std::set<PairKey> pairs;
  for (const auto& t : triplets) pairs.emplace(t.subject, t.predicate);
  std::vector<PairKey> keys(pairs.begin(), pairs.end());
  if (cap > 0 && keys.size() > cap) {
    std::vector<std::pair<std::uint64_t, PairKey>> ranked;
    for (auto& k : keys) ranked.emplace_back(hash_combine(seeded_hash(k.first, seed), fnv1a64(k.second)), k);
    std::sort(ranked.begin(), ranked.end());
    ranked.resize(cap);
    keys.clear();
    for (auto& r : ranked) keys.push_back(std::move(r.second));
    std::sort(keys.begin(), keys.end());
  }
  std::vector<Prompt> out;
  for (auto& k : keys) out.push_back(Prompt::make(k.first, k.second, vocab));
  return out;
}

json rate_json(const RateSummary& r) {
  return {{"rate", r.rate}, {"records", r.records}, {"hallucinated", r.hallucinated},
          {"out_of_reference", r.out_of_reference}};
}

json eval_json(const DetectorEval& e) {
  json curve = json::array();
  for (const auto& p : e.curve) {
    curve.push_back({std::isfinite(p.threshold) ? json(p.threshold) : json(nullptr), p.precision, p.recall});
  }
  return {{"points", e.points},
          {"prevalence", e.prevalence},
          {"accuracy", e.accuracy},
          {"auc_pr", e.auc_pr ? json(*e.auc_pr) : json(nullptr)},
          {"curve", curve}};
}

}  // namespace

Runner::Runner(RunConfig cfg, fs::path root, RunOptions options)
    : cfg_(std::move(cfg)), root_(std::move(root)), options_(options), hash_(cfg_.hash()) {
  fs::create_directories(root_);
  const auto manifest = root_ / "manifest.json";
  if (fs::exists(manifest)) {
    const auto existing = read_json(manifest).value("config_hash", std::string());
    if (existing != hash_ && !options_.force) {
      throw ConfigError(fmt::format(
          "{} was created with config {} but this config hashes to {}; pass --force to reuse it",
          root_.string(), existing, hash_));
    }
  }
  write_json(manifest, {{"config_hash", hash_}, {"config", cfg_.to_json()}});
}

fs::path Runner::lm_dir(const LmRunKey& k) const { return root_ / "lm" / k.family() / std::to_string(k.epochs); }
fs::path Runner::gen_dir(const LmRunKey& k) const { return root_ / "gen" / k.family() / std::to_string(k.epochs); }
fs::path Runner::labels_dir(const LmRunKey& k) const {
  return root_ / "labels" / k.family() / std::to_string(k.epochs);
}
fs::path Runner::detector_data_dir(const LmRunKey& k) const {
  return root_ / "detectors" / k.family() / std::to_string(k.epochs) / "data";
}
fs::path Runner::detector_dir(const DetectorKey& k) const {
  return root_ / "detectors" / k.lm.family() / std::to_string(k.lm.epochs) / k.name();
}

json Runner::input_nonces(const Unit& u) const {
  json inputs = json::object();
  for (const auto& [stage, dir] : u.inputs) {
    inputs[fs::relative(dir, root_).generic_string()] = nonce_of(dir).value_or("");
  }
  return inputs;
}

bool Runner::up_to_date(const Unit& u) const {
  const auto marker = u.dir / kMarkerFile;
  if (!fs::exists(marker)) return false;
  try {
    const auto m = read_json(marker);
    return m.at("config_hash") == hash_ && m.at("inputs") == input_nonces(u);
  } catch (const std::exception&) {
    return false;
  }
}

void Runner::require(std::string_view stage, const std::vector<Unit>& units) const {
  for (const auto& u : units) {
    for (const auto& [upstream, dir] : u.inputs) {
      if (!nonce_of(dir)) {
        throw DependencyError(fmt::format("stage '{}' needs stage '{}' first ({} is not complete)", stage,
                                          upstream, fs::relative(dir, root_).generic_string()));
      }
    }
  }
}

StageStats Runner::execute(std::string_view stage, const std::vector<Unit>& units) {
  require(stage, units);
  StageStats stats;
  std::vector<const Unit*> todo;
  for (const auto& u : units) {
    if (up_to_date(u)) {
      ++stats.skipped;
      spdlog::debug("[{}] up to date: {}", stage, fs::relative(u.dir, root_).generic_string());
    } else {
      todo.push_back(&u);
    }
  }
  stats.executed = todo.size();

  auto run_one = [&](const Unit& u) {
    const auto rel = fs::relative(u.dir, root_).generic_string();
    const auto inputs = input_nonces(u);
    const auto partial = u.dir / ".partial.json";
    bool keep = false;
    if (u.keep_partial && fs::exists(partial)) {
      try {
        const auto p = read_json(partial);
        keep = p.at("config_hash") == hash_ && p.at("inputs") == inputs;
      } catch (const std::exception&) {
        keep = false;
      }
    }
    if (!keep) fs::remove_all(u.dir);
    fs::create_directories(u.dir);
    fs::remove(u.dir / kMarkerFile);
    if (u.keep_partial) write_json(partial, {{"config_hash", hash_}, {"inputs", inputs}});
    spdlog::info("[{}] {}{}", stage, rel, keep ? " (resuming)" : "");
    u.work(u.dir);
    write_json(u.dir / kMarkerFile, {{"stage", stage},
                                     {"config_hash", hash_},
                                     {"inputs", inputs},
                                     {"nonce", fresh_nonce()}});
  };

  const int workers = std::max(1, std::min<int>(options_.parallel, static_cast<int>(todo.size())));
  if (workers <= 1) {
    for (const auto* u : todo) run_one(*u);
    return stats;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= todo.size()) return;
        {
          std::lock_guard lock(failure_mutex);
          if (failure) return;
        }
        try {
          run_one(*todo[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return stats;
}

StageStats Runner::run_stage(std::string_view stage) {
  const auto corpus = root_ / "corpus";
  std::vector<Unit> units;
  if (stage == "gen-kg") {
    units.push_back({root_ / "kg", {}, [this](const fs::path& d) { gen_kg(d); }});
  } else if (stage == "split") {
    units.push_back({corpus, {{"gen-kg", root_ / "kg"}}, [this](const fs::path& d) { build_split(d); }});
  } else if (stage == "train") {
    for (const auto& k : lm_runs(cfg_)) {
      units.push_back({lm_dir(k), {{"split", corpus}}, [this, k](const fs::path& d) { train_lm(k, d); }});
    }
  } else if (stage == "generate") {
    for (const auto& k : lm_runs(cfg_)) {
      units.push_back({gen_dir(k),
                       {{"split", corpus}, {"train", lm_dir(k)}},
                       [this, k](const fs::path& d) { generate(k, d); },
                       true});
    }
  } else if (stage == "label") {
    for (const auto& k : lm_runs(cfg_)) {
      units.push_back({labels_dir(k),
                       {{"split", corpus}, {"train", lm_dir(k)}, {"generate", gen_dir(k)}},
                       [this, k](const fs::path& d) { label(k, d); }});
    }
  } else if (stage == "train-detector") {
    for (const auto& k : detector_targets(cfg_)) {
      units.push_back({detector_data_dir(k),
                       {{"split", corpus}, {"train", lm_dir(k)}},
                       [this, k](const fs::path& d) { detector_data(k, d); }});
    }
    auto stats = execute(stage, units);
    units.clear();
    for (const auto& k : detector_runs(cfg_)) {
      units.push_back({detector_dir(k),
                       {{"train", lm_dir(k.lm)}, {"train-detector", detector_data_dir(k.lm)}},
                       [this, k](const fs::path& d) { train_detector(k, d); }});
    }
    const auto more = execute(stage, units);
    return {stats.executed + more.executed, stats.skipped + more.skipped};
  } else if (stage == "eval") {
    for (const auto& k : detector_runs(cfg_)) {
      units.push_back({eval_dir(k),
                       {{"train-detector", detector_data_dir(k.lm)}, {"train-detector", detector_dir(k)}},
                       [this, k](const fs::path& d) { eval_detector(k, d); }});
    }
  } else if (stage == "report") {
    Unit u{report_dir(), {}, [this](const fs::path& d) { report(d); }};
    for (const auto& k : lm_runs(cfg_)) {
      u.inputs.emplace_back("train", lm_dir(k));
      u.inputs.emplace_back("label", labels_dir(k));
    }
    for (const auto& k : detector_runs(cfg_)) u.inputs.emplace_back("eval", eval_dir(k));
    units.push_back(std::move(u));
  } else {
    throw ConfigError(fmt::format("unknown stage '{}'", stage));
  }
  return execute(stage, units);
}

std::vector<std::pair<std::string, StageStats>> Runner::sweep() {
  std::vector<std::pair<std::string, StageStats>> out;
  for (const auto& s : kStages) out.emplace_back(s, run_stage(s));
  return out;
}

// ---------------------------------------------------------------------------
// Stages

void Runner::gen_kg(const fs::path& dir) const {
  KnowledgeGraph kg;
  IngestReport rep;
  if (cfg_.kg_source == "synth") {
    kg = synthesize(cfg_.synth);
  } else {
    kg = ingest(cfg_.kg_path, &rep);
  }
  write_triplets(dir / "kg.tsv", kg.triplets());
  write_json(dir / "kg.json", {{"source", cfg_.kg_source},
                               {"triplets", kg.size()},
                               {"pairs", kg.pair_count()},
                               {"subjects", kg.subject_index().size()},
                               {"lines_read", rep.lines_read},
                               {"duplicates_dropped", rep.duplicates_dropped}});
}

void Runner::build_split(const fs::path& dir) const {
  const auto kg = ingest(root_ / "kg" / "kg.tsv");
  FilterReport rep;
  const auto filtered = filter_long_tail(kg, cfg_.max_objects_per_pair, &rep);
  write_triplets(dir / "filtered.tsv", filtered.triplets());
  const auto bundle = split(filtered, cfg_.split);
  bundle.save(dir / "bundle");
  const auto vocab = TokenizerVocab::build(filtered);
  vocab.save(dir / "vocab.tsv");
  json levels = json::object();
  for (double level : bundle.levels()) {
    const auto stream = build_stream(bundle.lm_training(level), vocab, static_cast<std::size_t>(cfg_.context_len),
                                     cfg_.derived_seed("shuffle/" + level_tag(level)));
    stream.save(dir / ("stream_" + level_tag(level)));
    levels[level_tag(level)] = {{"windows", stream.window_count},
                                {"content_tokens", stream.content_tokens()},
                                {"fvs_triplets", bundle.triplets(Split::kFvs, level).size()},
                                {"pvs_triplets", bundle.triplets(Split::kPvs, level).size()},
                                {"ivs_triplets", bundle.triplets(Split::kIvs, level).size()}};
  }
  write_json(dir / "split.json", {{"pairs_removed", rep.pairs_removed},
                                  {"triplets_removed", rep.triplets_removed},
                                  {"vocab_size", vocab.size()},
                                  {"levels", levels}});
}

void Runner::train_lm(const LmRunKey& k, const fs::path& dir) const {
  const auto corpus = root_ / "corpus";
  const auto stream = PackedBatchStream::load(corpus / ("stream_" + level_tag(k.level)));
  const auto vocab = TokenizerVocab::load(corpus / "vocab.tsv");
  const auto& spec = cfg_.model(k.model);
  ModelConfig mc{spec.name,      spec.n_layers, spec.n_heads, spec.d_model, spec.d_ff, cfg_.context_len,
                 static_cast<int>(vocab.size()), cfg_.derived_seed("init/" + spec.name)};
  TrainConfig tc = cfg_.train;
  tc.epochs = k.epochs;
  tc.seed = cfg_.derived_seed("order/" + k.family());
  TrainOptions opt;
  opt.out_dir = dir;
  const auto total = tc.total_steps(stream.window_count);
  opt.on_step = [&](const LossPoint& p) {
    if (p.step % 500 == 0 || p.step == total) {
      spdlog::debug("[train] {} step {}/{} loss {:.4f}", k.id(), p.step, total, p.loss);
    }
  };
  const auto result = train(stream, mc, tc, opt);
  const auto model = result.checkpoint.instantiate();
  write_json(dir / "run.json", {{"run_id", k.id()},
                                {"model", k.model},
                                {"params", mc.nonembedding_params()},
                                {"epochs", k.epochs},
                                {"level", k.level},
                                {"steps", result.checkpoint.step},
                                {"tokens", result.checkpoint.tokens},
                                {"flops", result.checkpoint.flops},
                                {"loss", eval_loss(model, stream)}});
}

void Runner::generate(const LmRunKey& k, const fs::path& dir) const {
  const auto c = load_corpus(root_ / "corpus");
  const auto model = Checkpoint::load(lm_dir(k)).instantiate();
  SweepOptions opt;
  opt.temperatures = cfg_.generation.temperatures;
  opt.n_samples = cfg_.generation.n_samples;
  opt.max_len = cfg_.generation.max_len > 0 ? cfg_.generation.max_len : default_max_len(c.kg, c.vocab);
  opt.seed = cfg_.derived_seed("generate");
  opt.model_id = k.family();
  opt.epoch = k.epochs;
  const auto fvs = prompts_of(c.bundle.triplets(Split::kFvs, k.level), c.vocab, cfg_.generation.max_prompts,
                              cfg_.derived_seed("prompts/fvs"));
  const auto ivs = prompts_of(c.bundle.triplets(Split::kIvs), c.vocab, cfg_.generation.max_prompts,
                              cfg_.derived_seed("prompts/ivs"));
  sweep_generate(model, fvs, c.vocab, opt, dir / "fvs.jsonl");
  sweep_generate(model, ivs, c.vocab, opt, dir / "ivs.jsonl");
}

void Runner::label(const LmRunKey& k, const fs::path& dir) const {
  const auto c = load_corpus(root_ / "corpus");
  const auto seen = graph_of(c.bundle.lm_training(k.level));
  const auto unseen = graph_of(c.bundle.triplets(Split::kIvs));
  const auto seen_trie = ObjectTrie::build(seen, c.vocab);
  const auto unseen_trie = ObjectTrie::build(unseen, c.vocab);
  const auto run = read_json(lm_dir(k) / "run.json");
  const double flops = run.at("flops").get<double>();

  std::vector<AggregateRow> rows;
  json per_temp = json::array();
  std::map<double, json> by_temp;
  for (const auto& [name, ref, trie] :
       {std::tuple{"fvs", &seen, &seen_trie}, std::tuple{"ivs", &unseen, &unseen_trie}}) {
    const auto records = read_records(gen_dir(k) / (std::string(name) + ".jsonl"));
    write_labels(dir / (std::string(name) + ".jsonl"), label_records(records, *ref, *trie));
    for (double t : cfg_.generation.temperatures) {
      std::vector<GenerationRecord> at_t;
      for (const auto& r : records) {
        if (r.temperature == t) at_t.push_back(r);
      }
      const auto rate = hallucination_rate(at_t, *ref);
      const auto pr = pr_at_temperature(at_t, *ref, cfg_.generation.n_samples);
      rows.push_back({k.family(), k.epochs, flops, k.level, t, name, rate.rate, pr.precision, pr.recall});
      auto& entry = by_temp[t];
      entry["temperature"] = t;
      entry[name] = rate_json(rate);
      entry[name]["precision"] = pr.precision;
      entry[name]["recall"] = pr.recall;
    }
  }
  for (auto& [t, e] : by_temp) per_temp.push_back(e);
  write_aggregates_csv(dir / "aggregates.csv", rows);
  write_json(dir / "metrics.json", {{"run_id", k.id()}, {"temperatures", per_temp}});
}

void Runner::detector_data(const LmRunKey& k, const fs::path& dir) const {
  const auto c = load_corpus(root_ / "corpus");
  const auto model = Checkpoint::load(lm_dir(k)).instantiate();
  const auto reference = graph_of(c.bundle.lm_training(k.level));
  const auto trie = ObjectTrie::build(reference, c.vocab);
  DetectionDataOptions opt;
  opt.n_generations = cfg_.detectors.n_generations;
  opt.temperature = cfg_.detectors.temperature;
  opt.max_len = cfg_.generation.max_len > 0 ? cfg_.generation.max_len : default_max_len(c.kg, c.vocab);
  opt.seed = cfg_.derived_seed("detector-data");
  opt.model_id = k.family();
  opt.epoch = k.epochs;
  const auto fvs = prompts_of(c.bundle.triplets(Split::kFvs, k.level), c.vocab, cfg_.detectors.max_prompts,
                              cfg_.derived_seed("detector-prompts/fvs"));
  const auto data = build_detection_data(model, fvs, c.vocab, reference, trie, opt);
  data.save(dir / "fvs");
  json info{{"fvs_records", data.records.size()}};
  std::vector<GenerationRecord> recs;
  for (const auto& l : data.records) recs.push_back(l.record);
  info["fvs_rate"] = hallucination_rate(recs, reference).rate;
  if (cfg_.detectors.eval_pvs) {
    const auto pvs_triplets = c.bundle.triplets(Split::kPvs, k.level);
    if (!pvs_triplets.empty()) {
      opt.partition = false;
      const auto pvs = prompts_of(pvs_triplets, c.vocab, cfg_.detectors.max_prompts,
                                  cfg_.derived_seed("detector-prompts/pvs"));
      const auto pdata = build_detection_data(model, pvs, c.vocab, reference, trie, opt);
      pdata.save(dir / "pvs");
      recs.clear();
      for (const auto& l : pdata.records) recs.push_back(l.record);
      info["pvs_records"] = pdata.records.size();
      info["pvs_rate"] = hallucination_rate(recs, reference).rate;
    }
  }
  write_json(dir / "data.json", info);
}

void Runner::train_detector(const DetectorKey& k, const fs::path& dir) const {
  const auto base = Checkpoint::load(lm_dir(k.lm)).instantiate();
  const auto data = DetectionData::load(detector_data_dir(k.lm) / "fvs");
  const auto train_set = data.part(k.task, Part::kTrain);
  const auto val_set = data.part(k.task, Part::kValidation);
  DetectorConfig dc;
  dc.type = k.type;
  dc.task = k.task;
  dc.layer = k.layer;
  dc.batch_size = cfg_.detectors.batch_size;
  dc.seed = cfg_.derived_seed("detector/" + k.name());
  dc.step_scale = cfg_.detectors.step_scale;
  dc.eval_every = cfg_.detectors.eval_every;
  dc.patience = cfg_.detectors.patience;
  const auto run = k.type == DetectorType::kHead ? train_head(base, k.lm.id(), train_set, val_set, dc)
                                                 : train_full(base, k.lm.id(), train_set, val_set, dc);
  run.detector.save(dir / "detector");
  if (run.stage1) run.stage1->save(dir / "stage1");
  json history = json::array();
  for (const auto& h : run.history) history.push_back({h.stage, h.step, h.validation_metric});
  write_json(dir / "run.json", {{"detector", k.id()},
                                {"task", to_string(k.task)},
                                {"type", to_string(k.type)},
                                {"layer", k.layer},
                                {"top", k.top},
                                {"train_examples", train_set.size()},
                                {"validation_examples", val_set.size()},
                                {"best_stage", run.best_stage},
                                {"best_step", run.best_step},
                                {"diverged", run.diverged},
                                {"history", history}});
  if (run.diverged) spdlog::warn("[train-detector] {} diverged", k.id());
}

void Runner::eval_detector(const DetectorKey& k, const fs::path& dir) const {
  const auto det = Detector::load(detector_dir(k) / "detector");
  const auto data_dir = detector_data_dir(k.lm);
  const auto data = DetectionData::load(data_dir / "fvs");
  json out = json::object();
  const auto test = score(det, data.part(k.task, Part::kTest));
  write_scored(dir / "scored_fvs_test.jsonl", test);
  out["fvs_test"] = eval_json(evaluate(test, cfg_.detectors.threshold));
  if (fs::exists(data_dir / "pvs")) {
    const auto pdata = DetectionData::load(data_dir / "pvs");
    const auto scored = score(det, pdata.examples(k.task));
    write_scored(dir / "scored_pvs.jsonl", scored);
    out["pvs"] = eval_json(evaluate(scored, cfg_.detectors.threshold));
  }
  write_json(dir / "eval.json", out);
}

void Runner::report(const fs::path& dir) const {
  ReportInput in;
  in.rate_temperature = cfg_.generation.rate_temperature;
  std::vector<AggregateRow> all_rows;
  std::map<LmRunKey, std::size_t> params;
  for (const auto& k : lm_runs(cfg_)) {
    const auto run = read_json(lm_dir(k) / "run.json");
    const auto metrics = read_json(labels_dir(k) / "metrics.json");
    LmRunRecord r;
    r.run_id = k.id();
    r.model = k.model;
    r.params = run.at("params").get<std::size_t>();
    r.epochs = k.epochs;
    r.level = k.level;
    r.flops = run.at("flops").get<double>();
    r.loss = run.at("loss").get<double>();
    for (const auto& t : metrics.at("temperatures")) {
      r.temperatures.push_back({t.at("temperature").get<double>(), t.at("fvs").at("rate").get<double>(),
                                t.at("ivs").at("rate").get<double>(), t.at("fvs").at("precision").get<double>(),
                                t.at("fvs").at("recall").get<double>()});
    }
    params[k] = r.params;
    in.lms.push_back(std::move(r));
    const auto rows = read_aggregates_csv(labels_dir(k) / "aggregates.csv");
    all_rows.insert(all_rows.end(), rows.begin(), rows.end());
  }
  write_aggregates_csv(dir / "aggregates.csv", all_rows);

  for (const auto& k : detector_runs(cfg_)) {
    const auto ev = read_json(eval_dir(k) / "eval.json");
    const auto data = read_json(detector_data_dir(k.lm) / "data.json");
    for (const auto& [set, rate_key] : {std::pair{"fvs_test", "fvs_rate"}, std::pair{"pvs", "pvs_rate"}}) {
      if (!ev.contains(set)) continue;
      const auto& e = ev.at(set);
      DetectorRunRecord d;
      d.run_id = fmt::format("{}_{}", k.lm.family(), k.lm.epochs) + "_" + k.name();
      d.lm_run_id = k.lm.id();
      d.model = k.lm.model;
      d.params = params.at(k.lm);
      d.epochs = k.lm.epochs;
      d.level = k.lm.level;
      d.task = to_string(k.task);
      d.type = to_string(k.type);
      d.layer = k.layer;
      d.top_layer = k.top;
      d.eval_set = set;
      d.lm_rate = data.at(rate_key).get<double>();
      d.prevalence = e.at("prevalence").get<double>();
      d.accuracy = e.at("accuracy").get<double>();
      if (!e.at("auc_pr").is_null()) d.auc_pr = e.at("auc_pr").get<double>();
      for (const auto& p : e.at("curve")) {
        d.curve.push_back({p[0].is_null() ? kMinusInfinity : p[0].get<double>(), p[1].get<double>(),
                           p[2].get<double>()});
      }
      in.detectors.push_back(std::move(d));
    }
  }
  write_report(dir, in);
}

}  // namespace hallu
