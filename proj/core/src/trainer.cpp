#include "hallu/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace hallu {

void Adam::step(std::span<double> params, std::span<const double> grads, double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const std::size_t n = params.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
  }
}

void Adam::restore(std::vector<double> m, std::vector<double> v, std::int64_t t) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw Error("optimizer state size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("training epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (!(lr_constant > 0.0)) throw ConfigError("lr_constant must be positive");
  if (!(max_warmup_fraction >= 0.0 && max_warmup_fraction <= 1.0)) {
    throw ConfigError("max_warmup_fraction must lie in [0, 1]");
  }
}

std::int64_t TrainConfig::total_steps(std::size_t windows) const {
  const auto w = static_cast<std::int64_t>(windows) * epochs;
  return (w + batch_size - 1) / batch_size;
}

LrSchedule TrainConfig::schedule(const ModelConfig& model, std::size_t windows) const {
  LrSchedule s;
  s.peak = base_learning_rate(lr_constant, model.nonembedding_params());
  s.total_steps = total_steps(windows);
  const auto cap = static_cast<std::int64_t>(std::floor(max_warmup_fraction *
                                                        static_cast<double>(s.total_steps)));
  s.warmup_steps = std::min({warmup_steps, cap, s.total_steps - 1});
  s.final_fraction = final_lr_fraction;
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const ModelConfig& c) {
  return {{"name", c.name},         {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"d_model", c.d_model},   {"d_ff", c.d_ff},             {"context_len", c.context_len},
          {"vocab_size", c.vocab_size}, {"seed", c.seed},
          {"nonembedding_params", c.nonembedding_params()}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.name = j.at("name").get<std::string>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr_constant", c.lr_constant},
          {"warmup_steps", c.warmup_steps},
          {"max_warmup_fraction", c.max_warmup_fraction},
          {"final_lr_fraction", c.final_lr_fraction},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"repack", c.repack},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr_constant = j.at("lr_constant").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<std::int64_t>();
  c.max_warmup_fraction = j.at("max_warmup_fraction").get<double>();
  c.final_lr_fraction = j.at("final_lr_fraction").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.repack = j.value("repack", true);
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.eps = j.at("eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void write_f64(const std::filesystem::path& path, std::span<const double> values) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<double> values(expected);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(expected * sizeof(double)));
  if (!in || in.peek() != std::char_traits<char>::eof()) {
    throw IoError(fmt::format("{} does not hold {} doubles", path.string(), expected));
  }
  return values;
}

Transformer Checkpoint::instantiate() const {
  Transformer t(model);
  if (weights.size() != t.param_count()) throw Error("checkpoint weights do not match config");
  std::copy(weights.begin(), weights.end(), t.params().begin());
  return t;
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_f64(dir / "weights.bin", weights);
  write_f64(dir / "adam_m.bin", adam_m);
  write_f64(dir / "adam_v.bin", adam_v);
  const Transformer shape(model);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : shape.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"offset", t.offset},
                       {"embedding", t.embedding}});
  }
  nlohmann::json manifest{{"format", "hallu-checkpoint-v1"},
                          {"dtype", "f64le"},
                          {"model", to_json(model)},
                          {"train", to_json(train)},
                          {"step", step},
                          {"tokens", tokens},
                          {"flops", flops},
                          {"param_count", weights.size()},
                          {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError(fmt::format("cannot write manifest in {}", dir.string()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError(fmt::format("no checkpoint manifest in {}", dir.string()));
  const auto manifest = nlohmann::json::parse(in);
  Checkpoint c;
  c.model = model_config_from_json(manifest.at("model"));
  c.train = train_config_from_json(manifest.at("train"));
  c.step = manifest.at("step").get<std::int64_t>();
  c.tokens = manifest.at("tokens").get<double>();
  c.flops = manifest.at("flops").get<double>();
  const auto n = manifest.at("param_count").get<std::size_t>();
  c.weights = read_f64(dir / "weights.bin", n);
  c.adam_m = read_f64(dir / "adam_m.bin", n);
  c.adam_v = read_f64(dir / "adam_v.bin", n);
  return c;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> trace) {
  std::ofstream out(path, std::ios::trunc);
  out << "step,loss,lr\n";
  for (const auto& p : trace) out << fmt::format("{},{},{}\n", p.step, p.loss, p.lr);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Sequential window feed. Each epoch visits its windows in a seeded order;
// with repacking the sequences are also reshuffled and packed afresh.
class WindowFeed {
 public:
  WindowFeed(const PackedBatchStream& stream, bool repack, std::uint64_t seed)
      : stream_(stream), repack_(repack), seed_(seed) {
    if (repack_) sequences_ = stream.unpack();
  }

  std::vector<TokenId> next() {
    if (cursor_ == order_.size()) start_epoch();
    const auto w = order_[cursor_++];
    const auto win = repack_ ? packed_.window(w) : stream_.window(w);
    return {win.begin(), win.end()};
  }

 private:
  void start_epoch() {
    std::mt19937_64 rng(hash_combine(seed_, epoch_++));
    std::size_t windows = stream_.window_count;
    if (repack_) {
      std::shuffle(sequences_.begin(), sequences_.end(), rng);
      packed_ = pack(sequences_, stream_.context_len);
      windows = packed_.window_count;
    }
    order_.resize(windows);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
  }

  const PackedBatchStream& stream_;
  bool repack_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::vector<TokenId>> sequences_;
  PackedBatchStream packed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

Checkpoint snapshot(const Transformer& model, const Adam& adam, const TrainConfig& tcfg,
                    std::int64_t step) {
  Checkpoint c;
  c.model = model.config();
  c.train = tcfg;
  c.step = step;
  c.tokens = static_cast<double>(step) * tcfg.batch_size * model.config().context_len;
  c.flops = flops_per_token(model.config()) * c.tokens;
  c.weights.assign(model.params().begin(), model.params().end());
  c.adam_m = adam.first_moment();
  c.adam_v = adam.second_moment();
  return c;
}

}  // namespace

TrainResult train(const PackedBatchStream& stream, const ModelConfig& model_cfg,
                  const TrainConfig& tcfg, const TrainOptions& options) {
  tcfg.validate();
  if (stream.window_count == 0) throw Error("training stream is empty");
  if (static_cast<int>(stream.context_len) != model_cfg.context_len) {
    throw ConfigError(fmt::format("stream context {} != model context {}", stream.context_len,
                                  model_cfg.context_len));
  }
  const auto max_token = *std::max_element(stream.tokens.begin(), stream.tokens.end());
  if (max_token >= static_cast<TokenId>(model_cfg.vocab_size)) {
    throw ConfigError("stream token ids exceed model vocabulary");
  }

  Transformer model(model_cfg);
  Adam adam(model.param_count(), tcfg.adam);
  const auto schedule = tcfg.schedule(model_cfg, stream.window_count);
  schedule.validate();
  WindowFeed feed(stream, tcfg.repack, tcfg.seed);

  std::vector<int> grid = options.checkpoint_epochs;
  std::sort(grid.begin(), grid.end());
  auto next_grid = grid.begin();

  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(schedule.total_steps));
  ParamBuffer grads(model.param_count());
  Activations act;
  const auto batch = static_cast<std::int64_t>(tcfg.batch_size);

  for (std::int64_t step = 1; step <= schedule.total_steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    std::vector<std::vector<TokenId>> windows;
    std::size_t targets = 0;
    for (std::int64_t k = 0; k < batch; ++k) {
      const auto& win = windows.emplace_back(feed.next());
      std::size_t T = win.size();
      while (T > 0 && win[T - 1] == kPad) --T;
      targets += T > 1 ? T - 1 : 0;
    }
    LossSum sum;
    try {
      const double scale = targets == 0 ? 0.0 : 1.0 / static_cast<double>(targets);
      for (const auto& win : windows) {
        const auto part = model.lm_loss(win, act, grads, scale);
        sum.nats += part.nats;
        sum.tokens += part.tokens;
      }
    } catch (const NumericalError& e) {
      if (!options.out_dir.empty()) {
        snapshot(model, adam, tcfg, step - 1).save(options.out_dir / "diagnostic");
      }
      throw NumericalError(fmt::format("{} at step {}", e.what(), step));
    }
    const double lr = schedule.at(step);
    adam.step(model.params(), grads, lr);

    const LossPoint point{step, sum.mean(), lr};
    result.trace.push_back(point);
    if (options.on_step) options.on_step(point);

    const auto consumed = step * batch;
    while (next_grid != grid.end() &&
           consumed >= static_cast<std::int64_t>(*next_grid) *
                           static_cast<std::int64_t>(stream.window_count)) {
      if (!options.out_dir.empty()) {
        snapshot(model, adam, tcfg, step).save(options.out_dir / fmt::format("epoch_{}", *next_grid));
      }
      ++next_grid;
    }
  }

  result.checkpoint = snapshot(model, adam, tcfg, schedule.total_steps);
  if (!options.out_dir.empty()) {
    result.checkpoint.save(options.out_dir);
    write_loss_csv(options.out_dir / "loss.csv", result.trace);
  }
  return result;
}

double eval_loss(const Transformer& model, const PackedBatchStream& stream) {
  Activations act;
  LossSum total;
  for (std::size_t w = 0; w < stream.window_count; ++w) {
    const auto part = model.lm_loss(stream.window(w), act);
    total.nats += part.nats;
    total.tokens += part.tokens;
  }
  return total.mean();
}

}  // namespace hallu
