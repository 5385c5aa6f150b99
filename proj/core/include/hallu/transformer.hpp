#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hallu/common.hpp"

namespace hallu {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
// Parameter-sized buffers with SIMD alignment.
using ParamBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelConfig {
  std::string name = "model";
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int context_len = 256;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;

  // Transformer blocks + final norm. Token and position tables are
  // embeddings and excluded; the output projection is tied to the token
  // table.
  std::size_t nonembedding_params() const;
  std::size_t embedding_params() const;
  std::size_t total_params() const { return nonembedding_params() + embedding_params(); }
};

// Training FLOPs per token, 6 * non-embedding parameters. This is the single
// accounting rule used for every FLOPs figure.
double flops_per_token(const ModelConfig& cfg);

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  bool embedding = false;
  std::size_t size() const { return rows * cols; }
};

// Per-forward scratch; reusable across calls to avoid reallocation.
struct Activations {
  struct Layer {
    RowMatrix x_in;
    RowMatrix ln1_xhat, ln1_out;
    Eigen::VectorXd ln1_rstd;
    RowMatrix qkv;
    std::vector<RowMatrix> probs;
    RowMatrix attn;
    RowMatrix x_mid;
    RowMatrix ln2_xhat, ln2_out;
    Eigen::VectorXd ln2_rstd;
    RowMatrix h_pre, h_act;
  };
  int length = 0;
  std::vector<Layer> layers;
  RowMatrix x_final;
  RowMatrix lnf_xhat;
  Eigen::VectorXd lnf_rstd;
  RowMatrix out;  // final normalized hidden states, length x d_model
};

struct LossSum {
  double nats = 0.0;
  std::size_t tokens = 0;
  double mean() const { return tokens == 0 ? 0.0 : nats / static_cast<double>(tokens); }
};

// Pre-norm decoder-only transformer with learned absolute positions, causal
// attention over the whole window and a tied output projection.
class Transformer {
 public:
  explicit Transformer(const ModelConfig& cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }

  // normal(0, 0.02); residual output projections scaled by 1/sqrt(n_layers);
  // norms at identity; biases zero.
  void init(std::uint64_t seed);

  // Runs the network on `ids` (length <= context_len) up to the final norm.
  void forward(std::span<const TokenId> ids, Activations& act) const;

  // Accumulates parameter gradients for d(loss)/d(act.out) = d_out.
  void backward(std::span<const TokenId> ids, const Activations& act, const RowMatrix& d_out,
                std::span<double> grads) const;

  // Next-token cross-entropy over every position whose target is not <PAD>.
  // Trailing padding is not evaluated. When `grads` is non-empty the
  // gradient of grad_scale * (summed nats) is accumulated into it.
  LossSum lm_loss(std::span<const TokenId> window, Activations& act,
                  std::span<double> grads = {}, double grad_scale = 1.0) const;

  // logits = out * E^T for the given row of act.out.
  RowVector logits_row(const Activations& act, int row) const;

  // Hidden state used by probes: residual stream after block `layer`
  // (1-based), with the final norm applied when layer == n_layers.
  RowVector tap(const Activations& act, int layer, int row) const;

  std::size_t offset(const std::string& tensor) const;

 private:
  friend class DecodeSession;

  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
  };

  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols, bool embedding);

  ModelConfig cfg_;
  std::vector<TensorInfo> tensors_;
  ParamBuffer params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0;
  std::vector<LayerOffsets> layers_;
};

// Incremental decoding with a key/value cache. Cheap to copy, so a prompt
// can be encoded once and forked per sample.
class DecodeSession {
 public:
  DecodeSession(const Transformer& model, int capacity);

  // Appends `tok` and returns the logits predicting the following token.
  const RowVector& feed(TokenId tok);
  const RowVector& logits() const noexcept { return logits_; }
  int position() const noexcept { return pos_; }

 private:
  const Transformer* model_;
  int capacity_;
  int pos_ = 0;
  std::vector<RowMatrix> keys_, values_;
  RowVector logits_;
};

}  // namespace hallu
