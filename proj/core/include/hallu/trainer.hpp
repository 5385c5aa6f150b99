#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hallu/corpus.hpp"
#include "hallu/schedule.hpp"
#include "hallu/transformer.hpp"

namespace hallu {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  // One bias-corrected update.
  void step(std::span<double> params, std::span<const double> grads, double lr);

  std::int64_t steps() const noexcept { return t_; }
  const std::vector<double>& first_moment() const noexcept { return m_; }
  const std::vector<double>& second_moment() const noexcept { return v_; }
  void restore(std::vector<double> m, std::vector<double> v, std::int64_t t);

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  double lr_constant = 5.0;
  std::int64_t warmup_steps = 4000;
  // Desk-scale cap: warmup never exceeds this fraction of the run.
  double max_warmup_fraction = 1.0;
  double final_lr_fraction = 0.05;
  int epochs = 1;
  int batch_size = 8;  // windows per step
  // Reshuffle the packed sequences and re-pack them at every epoch, so no
  // triplet keeps the same window neighbours across epochs.
  bool repack = true;
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const;
  // ceil(epochs * windows / batch_size)
  std::int64_t total_steps(std::size_t windows) const;
  LrSchedule schedule(const ModelConfig& model, std::size_t windows) const;
};

struct LossPoint {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::int64_t step = 0;
  double tokens = 0.0;  // step * batch * context_len
  double flops = 0.0;   // flops_per_token * tokens
  std::vector<double> weights;
  std::vector<double> adam_m, adam_v;

  Transformer instantiate() const;

  // weights.bin / adam_m.bin / adam_v.bin (little-endian f64) + manifest.json
  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

void write_f64(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected);

struct TrainOptions {
  // When set, the final checkpoint, loss.csv and (on failure) a diagnostic
  // checkpoint are written here.
  std::filesystem::path out_dir;
  // Additional checkpoints at these epoch counts, under out_dir/epoch_<n>.
  std::vector<int> checkpoint_epochs;
  std::function<void(const LossPoint&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> trace;
};

// Runs exactly total_steps Adam updates of next-token cross-entropy. Throws
// NumericalError on a non-finite loss.
TrainResult train(const PackedBatchStream& stream, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const TrainOptions& options = {});

// Mean nats per non-pad target token.
double eval_loss(const Transformer& model, const PackedBatchStream& stream);

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> trace);

}  // namespace hallu
