#include "hallu/transformer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

namespace hallu {

namespace {

using MapMat = Eigen::Map<RowMatrix>;
using CMapMat = Eigen::Map<const RowMatrix>;
using MapVec = Eigen::Map<RowVector>;
using CMapVec = Eigen::Map<const RowVector>;

constexpr double kNormEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

CMapMat cmat(std::span<const double> p, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return CMapMat(p.data() + off, r, c);
}
MapMat mmat(std::span<double> p, std::size_t off, Eigen::Index r, Eigen::Index c) {
  return MapMat(p.data() + off, r, c);
}
CMapVec cvec(std::span<const double> p, std::size_t off, Eigen::Index n) {
  return CMapVec(p.data() + off, n);
}
MapVec mvec(std::span<double> p, std::size_t off, Eigen::Index n) {
  return MapVec(p.data() + off, n);
}

template <class X>
void layer_norm(const X& x, const CMapVec& g, const CMapVec& b, RowMatrix& xhat,
                Eigen::VectorXd& rstd, RowMatrix& out) {
  const auto rows = x.rows();
  xhat.resize(rows, x.cols());
  rstd.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const double var = centered.square().mean();
    rstd(i) = 1.0 / std::sqrt(var + kNormEps);
    xhat.row(i) = centered * rstd(i);
  }
  out = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
}

// dx += d(layer_norm)/dx^T dy; also accumulates dg and db.
void layer_norm_backward(const RowMatrix& dy, const RowMatrix& xhat, const Eigen::VectorXd& rstd,
                         const CMapVec& g, MapVec dg, MapVec db, RowMatrix& dx) {
  dg += (dy.array() * xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const RowMatrix dxhat = dy.array().rowwise() * g.array();
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i).array() += rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluK * (x + kGeluC * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}

// Row-wise softmax restricted to columns [0, i] of row i; the rest is zeroed.
void causal_softmax(RowMatrix& s) {
  const auto n = s.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = s.row(i);
    const double mx = row.head(i + 1).maxCoeff();
    row.head(i + 1) = (row.head(i + 1).array() - mx).exp();
    row.head(i + 1) /= row.head(i + 1).sum();
    if (i + 1 < n) row.tail(n - i - 1).setZero();
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1) {
    throw ConfigError(fmt::format("model '{}': dimensions must be positive", name));
  }
  if (d_model % n_heads != 0) {
    throw ConfigError(fmt::format("model '{}': d_model {} not divisible by n_heads {}", name,
                                  d_model, n_heads));
  }
  if (context_len < 2) throw ConfigError(fmt::format("model '{}': context_len must be >= 2", name));
  if (vocab_size <= static_cast<int>(kFirstRegularToken)) {
    throw ConfigError(fmt::format("model '{}': vocab_size {} too small", name, vocab_size));
  }
}

std::size_t ModelConfig::nonembedding_params() const {
  const std::size_t d = d_model, f = d_ff;
  const std::size_t per_layer = 2 * d            // ln1
                                + d * 3 * d + 3 * d  // qkv
                                + d * d + d          // attention out
                                + 2 * d              // ln2
                                + d * f + f          // mlp in
                                + f * d + d;         // mlp out
  return static_cast<std::size_t>(n_layers) * per_layer + 2 * d;
}

std::size_t ModelConfig::embedding_params() const {
  return static_cast<std::size_t>(vocab_size + context_len) * static_cast<std::size_t>(d_model);
}

double flops_per_token(const ModelConfig& cfg) {
  return 6.0 * static_cast<double>(cfg.nonembedding_params());
}

// ---------------------------------------------------------------------------

std::size_t Transformer::add(const std::string& name, std::size_t rows, std::size_t cols,
                             bool embedding) {
  const std::size_t off = tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
  tensors_.push_back(TensorInfo{name, rows, cols, off, embedding});
  return off;
}

Transformer::Transformer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
  tok_emb_ = add("tok_emb", cfg_.vocab_size, d, true);
  pos_emb_ = add("pos_emb", cfg_.context_len, d, true);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto p = fmt::format("h{}.", l);
    LayerOffsets o{};
    o.ln1_g = add(p + "ln1.g", 1, d, false);
    o.ln1_b = add(p + "ln1.b", 1, d, false);
    o.w_qkv = add(p + "attn.w_qkv", d, 3 * d, false);
    o.b_qkv = add(p + "attn.b_qkv", 1, 3 * d, false);
    o.w_o = add(p + "attn.w_o", d, d, false);
    o.b_o = add(p + "attn.b_o", 1, d, false);
    o.ln2_g = add(p + "ln2.g", 1, d, false);
    o.ln2_b = add(p + "ln2.b", 1, d, false);
    o.w_1 = add(p + "mlp.w_1", d, f, false);
    o.b_1 = add(p + "mlp.b_1", 1, f, false);
    o.w_2 = add(p + "mlp.w_2", f, d, false);
    o.b_2 = add(p + "mlp.b_2", 1, d, false);
    layers_.push_back(o);
  }
  lnf_g_ = add("lnf.g", 1, d, false);
  lnf_b_ = add("lnf.b", 1, d, false);
  params_.assign(tensors_.back().offset + tensors_.back().size(), 0.0);
  init(cfg_.seed);
}

std::size_t Transformer::offset(const std::string& tensor) const {
  for (const auto& t : tensors_) {
    if (t.name == tensor) return t.offset;
  }
  throw Error(fmt::format("no tensor named '{}'", tensor));
}

void Transformer::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.n_layers));
  for (const auto& t : tensors_) {
    const auto is = [&](std::string_view suffix) { return t.name.ends_with(suffix); };
    double* p = params_.data() + t.offset;
    if (is(".g")) {
      std::fill(p, p + t.size(), 1.0);
    } else if (is(".b") || is(".b_qkv") || is(".b_o") || is(".b_1") || is(".b_2")) {
      std::fill(p, p + t.size(), 0.0);
    } else {
      const double scale = (is(".w_o") || is(".w_2")) ? out_scale : 1.0;
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = normal(rng) * scale;
    }
  }
}

void Transformer::forward(std::span<const TokenId> ids, Activations& act) const {
  const int T = static_cast<int>(ids.size());
  const int d = cfg_.d_model, H = cfg_.n_heads, hd = d / H, f = cfg_.d_ff;
  if (T < 1 || T > cfg_.context_len) {
    throw Error(fmt::format("sequence length {} outside [1, {}]", T, cfg_.context_len));
  }
  const std::span<const double> P = params_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  act.length = T;
  act.layers.resize(cfg_.n_layers);
  RowMatrix x(T, d);
  const auto tok = cmat(P, tok_emb_, cfg_.vocab_size, d);
  const auto pos = cmat(P, pos_emb_, cfg_.context_len, d);
  for (int t = 0; t < T; ++t) {
    if (ids[t] >= static_cast<TokenId>(cfg_.vocab_size)) {
      throw Error(fmt::format("token id {} outside vocabulary of {}", ids[t], cfg_.vocab_size));
    }
    x.row(t) = tok.row(ids[t]) + pos.row(t);
  }

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto& o = layers_[l];
    auto& c = act.layers[l];
    c.x_in = x;
    layer_norm(c.x_in, cvec(P, o.ln1_g, d), cvec(P, o.ln1_b, d), c.ln1_xhat, c.ln1_rstd, c.ln1_out);
    c.qkv.noalias() = c.ln1_out * cmat(P, o.w_qkv, d, 3 * d);
    c.qkv.rowwise() += cvec(P, o.b_qkv, 3 * d);

    c.probs.resize(H);
    c.attn.resize(T, d);
    for (int h = 0; h < H; ++h) {
      const auto q = c.qkv.middleCols(h * hd, hd);
      const auto k = c.qkv.middleCols(d + h * hd, hd);
      const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
      auto& p = c.probs[h];
      p.noalias() = q * k.transpose();
      p *= scale;
      causal_softmax(p);
      c.attn.middleCols(h * hd, hd).noalias() = p * v;
    }
    c.x_mid = c.x_in;
    c.x_mid.noalias() += c.attn * cmat(P, o.w_o, d, d);
    c.x_mid.rowwise() += cvec(P, o.b_o, d);

    layer_norm(c.x_mid, cvec(P, o.ln2_g, d), cvec(P, o.ln2_b, d), c.ln2_xhat, c.ln2_rstd, c.ln2_out);
    c.h_pre.noalias() = c.ln2_out * cmat(P, o.w_1, d, f);
    c.h_pre.rowwise() += cvec(P, o.b_1, f);
    c.h_act = c.h_pre.unaryExpr([](double v) { return gelu(v); });
    x = c.x_mid;
    x.noalias() += c.h_act * cmat(P, o.w_2, f, d);
    x.rowwise() += cvec(P, o.b_2, d);
  }
  act.x_final = std::move(x);
  layer_norm(act.x_final, cvec(P, lnf_g_, d), cvec(P, lnf_b_, d), act.lnf_xhat, act.lnf_rstd,
             act.out);
}

void Transformer::backward(std::span<const TokenId> ids, const Activations& act,
                           const RowMatrix& d_out, std::span<double> G) const {
  const int T = act.length;
  const int d = cfg_.d_model, H = cfg_.n_heads, hd = d / H, f = cfg_.d_ff;
  const std::span<const double> P = params_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  RowMatrix dx = RowMatrix::Zero(T, d);
  layer_norm_backward(d_out, act.lnf_xhat, act.lnf_rstd, cvec(P, lnf_g_, d), mvec(G, lnf_g_, d),
                      mvec(G, lnf_b_, d), dx);

  RowMatrix dh, dqkv(T, 3 * d), d_attn, d_ln, dp, ds;
  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& o = layers_[l];
    const auto& c = act.layers[l];

    // MLP branch: x_out = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
    mmat(G, o.w_2, f, d).noalias() += c.h_act.transpose() * dx;
    mvec(G, o.b_2, d) += dx.colwise().sum();
    dh.noalias() = dx * cmat(P, o.w_2, f, d).transpose();
    dh.array() *= c.h_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    mmat(G, o.w_1, d, f).noalias() += c.ln2_out.transpose() * dh;
    mvec(G, o.b_1, f) += dh.colwise().sum();
    d_ln.noalias() = dh * cmat(P, o.w_1, d, f).transpose();
    layer_norm_backward(d_ln, c.ln2_xhat, c.ln2_rstd, cvec(P, o.ln2_g, d), mvec(G, o.ln2_g, d),
                        mvec(G, o.ln2_b, d), dx);

    // Attention branch: x_mid = x_in + attn W_o + b_o
    mmat(G, o.w_o, d, d).noalias() += c.attn.transpose() * dx;
    mvec(G, o.b_o, d) += dx.colwise().sum();
    d_attn.noalias() = dx * cmat(P, o.w_o, d, d).transpose();
    for (int h = 0; h < H; ++h) {
      const auto q = c.qkv.middleCols(h * hd, hd);
      const auto k = c.qkv.middleCols(d + h * hd, hd);
      const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
      const auto& p = c.probs[h];
      const auto d_o = d_attn.middleCols(h * hd, hd);
      dp.noalias() = d_o * v.transpose();
      dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * d_o;
      const Eigen::VectorXd row_dot = (p.array() * dp.array()).rowwise().sum();
      ds = p.array() * (dp.colwise() - row_dot).array();
      dqkv.middleCols(h * hd, hd).noalias() = ds * k;
      dqkv.middleCols(h * hd, hd) *= scale;
      dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
      dqkv.middleCols(d + h * hd, hd) *= scale;
    }
    mmat(G, o.w_qkv, d, 3 * d).noalias() += c.ln1_out.transpose() * dqkv;
    mvec(G, o.b_qkv, 3 * d) += dqkv.colwise().sum();
    d_ln.noalias() = dqkv * cmat(P, o.w_qkv, d, 3 * d).transpose();
    layer_norm_backward(d_ln, c.ln1_xhat, c.ln1_rstd, cvec(P, o.ln1_g, d), mvec(G, o.ln1_g, d),
                        mvec(G, o.ln1_b, d), dx);
  }

  auto d_tok = mmat(G, tok_emb_, cfg_.vocab_size, d);
  auto d_pos = mmat(G, pos_emb_, cfg_.context_len, d);
  for (int t = 0; t < T; ++t) {
    d_tok.row(ids[t]) += dx.row(t);
    d_pos.row(t) += dx.row(t);
  }
}

LossSum Transformer::lm_loss(std::span<const TokenId> window, Activations& act,
                             std::span<double> grads, double grad_scale) const {
  std::size_t T = window.size();
  while (T > 0 && window[T - 1] == kPad) --T;
  LossSum sum;
  if (T < 2) return sum;
  const auto ids = window.first(T);
  forward(ids, act);

  const int d = cfg_.d_model, V = cfg_.vocab_size;
  const auto emb = cmat(params_, tok_emb_, V, d);
  const auto n = static_cast<Eigen::Index>(T - 1);
  RowMatrix logits = act.out.topRows(n) * emb.transpose();
  const bool want_grad = !grads.empty();
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId target = ids[i + 1];
    auto row = logits.row(i);
    if (target == kPad) {
      row.setZero();
      continue;
    }
    const double mx = row.maxCoeff();
    row.array() = (row.array() - mx).exp();
    const double z = row.sum();
    sum.nats += std::log(z) - std::log(row(target));
    ++sum.tokens;
    if (want_grad) {
      row *= grad_scale / z;
      row(target) -= grad_scale;
    }
  }
  if (!std::isfinite(sum.nats)) throw NumericalError("non-finite loss");
  if (want_grad) {
    mmat(grads, tok_emb_, V, d).noalias() += logits.transpose() * act.out.topRows(n);
    RowMatrix d_out = RowMatrix::Zero(static_cast<Eigen::Index>(T), d);
    d_out.topRows(n).noalias() = logits * emb;
    backward(ids, act, d_out, grads);
  }
  return sum;
}

RowVector Transformer::logits_row(const Activations& act, int row) const {
  return act.out.row(row) * cmat(params_, tok_emb_, cfg_.vocab_size, cfg_.d_model).transpose();
}

RowVector Transformer::tap(const Activations& act, int layer, int row) const {
  if (layer < 0 || layer > cfg_.n_layers) {
    throw Error(fmt::format("tap layer {} outside [0, {}]", layer, cfg_.n_layers));
  }
  if (layer == cfg_.n_layers) return act.out.row(row);
  return act.layers[layer].x_in.row(row);
}

// ---------------------------------------------------------------------------

DecodeSession::DecodeSession(const Transformer& model, int capacity)
    : model_(&model), capacity_(std::min(capacity, model.config().context_len)) {
  const int d = model.config().d_model;
  keys_.assign(model.config().n_layers, RowMatrix(capacity_, d));
  values_.assign(model.config().n_layers, RowMatrix(capacity_, d));
}

const RowVector& DecodeSession::feed(TokenId tok) {
  const auto& m = *model_;
  const auto& cfg = m.cfg_;
  if (pos_ >= capacity_) throw Error("decode session capacity exceeded");
  if (tok >= static_cast<TokenId>(cfg.vocab_size)) {
    throw Error(fmt::format("token id {} outside vocabulary of {}", tok, cfg.vocab_size));
  }
  const int d = cfg.d_model, H = cfg.n_heads, hd = d / H, f = cfg.d_ff;
  const std::span<const double> P = m.params_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  RowMatrix x = cmat(P, m.tok_emb_, cfg.vocab_size, d).row(tok) +
                cmat(P, m.pos_emb_, cfg.context_len, d).row(pos_);
  RowMatrix xhat, a, qkv, attn(1, d), h;
  Eigen::VectorXd rstd;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& o = m.layers_[l];
    layer_norm(x, cvec(P, o.ln1_g, d), cvec(P, o.ln1_b, d), xhat, rstd, a);
    qkv.noalias() = a * cmat(P, o.w_qkv, d, 3 * d);
    qkv += cvec(P, o.b_qkv, 3 * d);
    keys_[l].row(pos_) = qkv.middleCols(d, d);
    values_[l].row(pos_) = qkv.middleCols(2 * d, d);
    for (int hh = 0; hh < H; ++hh) {
      const auto q = qkv.middleCols(hh * hd, hd);
      const auto k = keys_[l].block(0, hh * hd, pos_ + 1, hd);
      const auto v = values_[l].block(0, hh * hd, pos_ + 1, hd);
      RowVector s = (q * k.transpose()) * scale;
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      attn.middleCols(hh * hd, hd).noalias() = s * v;
    }
    x.noalias() += attn * cmat(P, o.w_o, d, d);
    x += cvec(P, o.b_o, d);
    layer_norm(x, cvec(P, o.ln2_g, d), cvec(P, o.ln2_b, d), xhat, rstd, a);
    h.noalias() = a * cmat(P, o.w_1, d, f);
    h += cvec(P, o.b_1, f);
    h = h.unaryExpr([](double v) { return gelu(v); });
    x.noalias() += h * cmat(P, o.w_2, f, d);
    x += cvec(P, o.b_2, d);
  }
  layer_norm(x, cvec(P, m.lnf_g_, d), cvec(P, m.lnf_b_, d), xhat, rstd, a);
  logits_ = a * cmat(P, m.tok_emb_, cfg.vocab_size, d).transpose();
  ++pos_;
  return logits_;
}

}  // namespace hallu
