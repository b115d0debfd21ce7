// Copyright 2026 The mofrl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mofrl/error.hpp"
#include "mofrl/mofid.hpp"

namespace mofrl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Rng = std::mt19937_64;

enum class Pooling { kMean, kLast };

NLOHMANN_JSON_SERIALIZE_ENUM(Pooling, {{Pooling::kMean, "mean"}, {Pooling::kLast, "last"}})

/// Decoder-only transformer shape. Reference-scale values are
/// 12 layers / 768 wide / 12 heads / 3072 ff / 512 positions / 4023 tokens;
/// the defaults here are desk-scale.
struct ModelConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 128;
  int vocab_size = 0;
  double dropout_rate = 0.1;
  double ln_eps = 1e-5;
  int n_properties = 1;
  Pooling pooling = Pooling::kMean;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    const auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfigError, msg); };
    if (n_layers < 1) fail("n_layers must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      fail("d_model must be divisible by n_heads");
    }
    if (d_ff < 1) fail("d_ff must be >= 1");
    if (max_len < 2) fail("max_len must be >= 2");
    if (vocab_size < Vocabulary::kNumSpecial) fail("vocab_size too small");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0,1)");
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
    if (n_properties < 1) fail("n_properties must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, n_layers, d_model, n_heads, d_ff,
                                                max_len, vocab_size, dropout_rate, ln_eps,
                                                n_properties, pooling)

struct LayerParams {
  Matrix ln1_g, ln1_b;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_g, ln2_b;
  Matrix w1, b1, w2, b2;
};

/// All trainable tensors. Weights are stored input-major so y = x * W.
struct ModelParams {
  Matrix tok_emb;  // vocab x d
  Matrix pos_emb;  // max_len x d
  std::vector<LayerParams> layers;
  Matrix lnf_g, lnf_b;
  Matrix lm_head;  // d x vocab
  Matrix reg_w1, reg_b1, reg_w2, reg_b2;

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  static ModelParams zeros(const ModelConfig& c) {
    ModelParams p;
    const auto z = [](int r, int k) { return Matrix::Zero(r, k); };
    const int d = c.d_model;
    p.tok_emb = z(c.vocab_size, d);
    p.pos_emb = z(c.max_len, d);
    p.layers.resize(static_cast<std::size_t>(c.n_layers));
    for (auto& l : p.layers) {
      l.ln1_g = z(1, d);
      l.ln1_b = z(1, d);
      l.wq = z(d, d);
      l.bq = z(1, d);
      l.wk = z(d, d);
      l.bk = z(1, d);
      l.wv = z(d, d);
      l.bv = z(1, d);
      l.wo = z(d, d);
      l.bo = z(1, d);
      l.ln2_g = z(1, d);
      l.ln2_b = z(1, d);
      l.w1 = z(d, c.d_ff);
      l.b1 = z(1, c.d_ff);
      l.w2 = z(c.d_ff, d);
      l.b2 = z(1, d);
    }
    p.lnf_g = z(1, d);
    p.lnf_b = z(1, d);
    p.lm_head = z(d, c.vocab_size);
    p.reg_w1 = z(d, d);
    p.reg_b1 = z(1, d);
    p.reg_w2 = z(d, c.n_properties);
    p.reg_b2 = z(1, c.n_properties);
    return p;
  }

  /// Normal(0, std) weights, zero biases, unit layer-norm gains.
  static ModelParams init(const ModelConfig& c, Rng& rng, double std = 0.02) {
    ModelParams p = zeros(c);
    std::normal_distribution<double> normal(0.0, std);
    p.visit([&](const std::string& name, Matrix& m) {
      if (is_gain(name)) {
        m.setOnes();
      } else if (is_weight(name)) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
      }
    });
    return p;
  }

  void set_zero() {
    visit([](const std::string&, Matrix& m) { m.setZero(); });
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  /// Layer-norm gain tensors.
  static bool is_gain(const std::string& name) {
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
  }

  /// Tensors that get random init and weight decay: projections, embeddings, heads.
  static bool is_weight(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return leaf.front() == 'w' || leaf == "tok_emb" || leaf == "pos_emb" || leaf == "lm_head";
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    f(std::string("tok_emb"), s.tok_emb);
    f(std::string("pos_emb"), s.pos_emb);
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      auto& l = s.layers[i];
      const std::string p = "h" + std::to_string(i) + ".";
      f(p + "ln1.g", l.ln1_g);
      f(p + "ln1.b", l.ln1_b);
      f(p + "attn.wq", l.wq);
      f(p + "attn.bq", l.bq);
      f(p + "attn.wk", l.wk);
      f(p + "attn.bk", l.bk);
      f(p + "attn.wv", l.wv);
      f(p + "attn.bv", l.bv);
      f(p + "attn.wo", l.wo);
      f(p + "attn.bo", l.bo);
      f(p + "ln2.g", l.ln2_g);
      f(p + "ln2.b", l.ln2_b);
      f(p + "mlp.w1", l.w1);
      f(p + "mlp.b1", l.b1);
      f(p + "mlp.w2", l.w2);
      f(p + "mlp.b2", l.b2);
    }
    f(std::string("ln_f.g"), s.lnf_g);
    f(std::string("ln_f.b"), s.lnf_b);
    f(std::string("lm_head"), s.lm_head);
    f(std::string("reg.w1"), s.reg_w1);
    f(std::string("reg.b1"), s.reg_b1);
    f(std::string("reg.w2"), s.reg_w2);
    f(std::string("reg.b2"), s.reg_b2);
  }
};

/// Pairs the tensors of two parameter sets with identical shapes.
template <class F>
void zip_params(ModelParams& a, const ModelParams& b, F&& f) {
  std::vector<const Matrix*> rhs;
  b.visit([&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
  std::size_t i = 0;
  a.visit([&](const std::string& name, Matrix& m) { f(name, m, *rhs[i++]); });
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                         LayerNormCache* cache = nullptr) {
  const Eigen::Index n = x.cols();
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(n);
    inv(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv(r);
  }
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const Matrix& gain,
                                  Matrix& d_gain, Matrix& d_bias) {
  d_gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  const double n = static_cast<double>(dy.cols());
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double sum_d = dxhat.row(r).sum();
    const double sum_dx = dxhat.row(r).dot(c.xhat.row(r));
    dx.row(r) = (c.inv_std(r) / n) *
                (n * dxhat.row(r).array() - sum_d - c.xhat.row(r).array() * sum_dx);
  }
  return dx;
}

/// Row-wise softmax over the causal prefix: entries j > i are exactly 0.
inline Matrix causal_softmax(const Matrix& scores) {
  Matrix p = Matrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Eigen::Index n = std::min<Eigen::Index>(i + 1, scores.cols());
    const double mx = scores.row(i).head(n).maxCoeff();
    p.row(i).head(n) = (scores.row(i).head(n).array() - mx).exp();
    p.row(i).head(n) /= p.row(i).head(n).sum();
  }
  return p;
}

/// softmax(Q K^T / sqrt(d_k) + M) V with M the causal mask.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.rows() != k.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "attention operands do not conform");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Matrix scores = (q * k.transpose()) * scale;
  return causal_softmax(scores) * v;
}

inline Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

struct LayerCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix a;
  Matrix q, k, v;
  std::vector<Matrix> probs;       // per head, before dropout
  std::vector<Matrix> probs_used;  // per head, after dropout
  std::vector<Matrix> drop_masks;  // empty when dropout is off
  Matrix ctx;
  Matrix x_mid;
  LayerNormCache ln2;
  Matrix m;
  Matrix h_pre;
  Matrix h_act;
  Matrix ff_mask;  // empty when dropout is off
};

struct ForwardCache {
  std::vector<int> ids;
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
  Matrix hidden;  // final layer-norm output, T x d
};

/// Incremental-decoding key/value cache for one sequence.
struct DecodeState {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
  int pos = 0;
};

class Transformer {
 public:
  Transformer() = default;

  Transformer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    params_ = ModelParams::init(config_, rng);
  }

  Transformer(const ModelConfig& config, ModelParams params)
      : config_(config), params_(std::move(params)) {
    config_.validate();
  }

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Full forward pass. Dropout is active only when `dropout_rng` is given.
  ForwardCache forward(std::span<const int> ids, Rng* dropout_rng = nullptr) const {
    const auto T = static_cast<Eigen::Index>(ids.size());
    if (T == 0) throw Error(ErrorCode::kInvalidArgument, "empty input sequence");
    if (T > config_.max_len) {
      throw Error(ErrorCode::kSequenceTooLong,
                  std::to_string(T) + " tokens exceeds max_len " + std::to_string(config_.max_len));
    }
    const int d = config_.d_model;
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double rate = dropout_rng ? config_.dropout_rate : 0.0;
    std::bernoulli_distribution keep(1.0 - rate);
    const double keep_scale = rate > 0.0 ? 1.0 / (1.0 - rate) : 1.0;
    const auto make_mask = [&](Eigen::Index r, Eigen::Index c) {
      Matrix mask(r, c);
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = keep(*dropout_rng) ? keep_scale : 0.0;
      }
      return mask;
    };

    ForwardCache fc;
    fc.ids.assign(ids.begin(), ids.end());
    Matrix x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      const int id = ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= config_.vocab_size) {
        throw Error(ErrorCode::kInvalidArgument, "token id out of range: " + std::to_string(id));
      }
      x.row(t) = params_.tok_emb.row(id) + params_.pos_emb.row(t);
    }

    fc.layers.resize(params_.layers.size());
    for (std::size_t li = 0; li < params_.layers.size(); ++li) {
      const LayerParams& P = params_.layers[li];
      LayerCache& c = fc.layers[li];
      c.x_in = x;
      c.a = layer_norm(x, P.ln1_g, P.ln1_b, config_.ln_eps, &c.ln1);
      c.q = (c.a * P.wq).rowwise() + P.bq.row(0);
      c.k = (c.a * P.wk).rowwise() + P.bk.row(0);
      c.v = (c.a * P.wv).rowwise() + P.bv.row(0);
      c.ctx.resize(T, d);
      c.probs.resize(static_cast<std::size_t>(config_.n_heads));
      c.probs_used.resize(static_cast<std::size_t>(config_.n_heads));
      if (rate > 0.0) c.drop_masks.resize(static_cast<std::size_t>(config_.n_heads));
      for (int h = 0; h < config_.n_heads; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        const Matrix scores =
            (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
        c.probs[hs] = causal_softmax(scores);
        if (rate > 0.0) {
          c.drop_masks[hs] = make_mask(T, T);
          c.probs_used[hs] = c.probs[hs].cwiseProduct(c.drop_masks[hs]);
        } else {
          c.probs_used[hs] = c.probs[hs];
        }
        c.ctx.middleCols(h * dh, dh) = c.probs_used[hs] * c.v.middleCols(h * dh, dh);
      }
      x = x + ((c.ctx * P.wo).rowwise() + P.bo.row(0));
      c.x_mid = x;
      c.m = layer_norm(x, P.ln2_g, P.ln2_b, config_.ln_eps, &c.ln2);
      c.h_pre = (c.m * P.w1).rowwise() + P.b1.row(0);
      c.h_act = c.h_pre.unaryExpr([](double v) { return silu(v); });
      Matrix f = (c.h_act * P.w2).rowwise() + P.b2.row(0);
      if (rate > 0.0) {
        c.ff_mask = make_mask(T, d);
        f = f.cwiseProduct(c.ff_mask);
      }
      x = x + f;
    }
    fc.hidden = layer_norm(x, params_.lnf_g, params_.lnf_b, config_.ln_eps, &fc.lnf);
    return fc;
  }

  Matrix logits(const ForwardCache& fc) const { return fc.hidden * params_.lm_head; }

  /// Next-token logits for every position, dropout disabled.
  Matrix forward_lm(std::span<const int> ids) const { return logits(forward(ids)); }

  /// Pooled representation fed to the regression head.
  RowVector pool(const ForwardCache& fc) const {
    if (config_.pooling == Pooling::kLast) return fc.hidden.row(fc.hidden.rows() - 1);
    return fc.hidden.colwise().mean();
  }

  struct RegressionTrace {
    RowVector pooled;
    RowVector pre;
    RowVector act;
    RowVector out;
  };

  RegressionTrace regress(const ForwardCache& fc) const {
    RegressionTrace r;
    r.pooled = pool(fc);
    r.pre = r.pooled * params_.reg_w1 + params_.reg_b1;
    r.act = r.pre.unaryExpr([](double v) { return silu(v); });
    r.out = r.act * params_.reg_w2 + params_.reg_b2;
    return r;
  }

  /// Accumulates head gradients; returns d(loss)/d(hidden).
  Matrix regress_backward(const ForwardCache& fc, const RegressionTrace& r, const RowVector& d_out,
                          ModelParams& g) const {
    g.reg_w2 += r.act.transpose() * d_out;
    g.reg_b2 += d_out;
    const RowVector d_act = d_out * params_.reg_w2.transpose();
    const RowVector d_pre =
        d_act.array() * r.pre.unaryExpr([](double v) { return silu_grad(v); }).array();
    g.reg_w1 += r.pooled.transpose() * d_pre;
    g.reg_b1 += d_pre;
    const RowVector d_pooled = d_pre * params_.reg_w1.transpose();
    Matrix d_hidden = Matrix::Zero(fc.hidden.rows(), fc.hidden.cols());
    if (config_.pooling == Pooling::kLast) {
      d_hidden.row(d_hidden.rows() - 1) = d_pooled;
    } else {
      d_hidden = d_pooled.replicate(fc.hidden.rows(), 1) / static_cast<double>(fc.hidden.rows());
    }
    return d_hidden;
  }

  /// Accumulates LM-head gradients; returns d(loss)/d(hidden).
  Matrix lm_backward(const ForwardCache& fc, const Matrix& d_logits, ModelParams& g) const {
    g.lm_head += fc.hidden.transpose() * d_logits;
    return d_logits * params_.lm_head.transpose();
  }

  /// Backpropagates d(loss)/d(hidden) through the backbone into `g`.
  void backward(const ForwardCache& fc, const Matrix& d_hidden, ModelParams& g) const {
    const auto T = static_cast<Eigen::Index>(fc.ids.size());
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix dx = layer_norm_backward(d_hidden, fc.lnf, params_.lnf_g, g.lnf_g, g.lnf_b);

    for (std::size_t li = params_.layers.size(); li-- > 0;) {
      const LayerParams& P = params_.layers[li];
      const LayerCache& c = fc.layers[li];
      LayerParams& G = g.layers[li];

      // Feed-forward block.
      Matrix df = dx;
      if (c.ff_mask.size() > 0) df = df.cwiseProduct(c.ff_mask);
      G.w2 += c.h_act.transpose() * df;
      G.b2 += df.colwise().sum();
      const Matrix d_act = df * P.w2.transpose();
      const Matrix d_pre =
          d_act.cwiseProduct(c.h_pre.unaryExpr([](double v) { return silu_grad(v); }));
      G.w1 += c.m.transpose() * d_pre;
      G.b1 += d_pre.colwise().sum();
      const Matrix dm = d_pre * P.w1.transpose();
      dx += layer_norm_backward(dm, c.ln2, P.ln2_g, G.ln2_g, G.ln2_b);

      // Attention block.
      G.wo += c.ctx.transpose() * dx;
      G.bo += dx.colwise().sum();
      const Matrix d_ctx = dx * P.wo.transpose();
      Matrix dq(T, config_.d_model), dk(T, config_.d_model), dv(T, config_.d_model);
      for (int h = 0; h < config_.n_heads; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        const auto dc = d_ctx.middleCols(h * dh, dh);
        Matrix dp = dc * c.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = c.probs_used[hs].transpose() * dc;
        if (!c.drop_masks.empty()) dp = dp.cwiseProduct(c.drop_masks[hs]);
        const Matrix& p = c.probs[hs];
        const Eigen::VectorXd row_dot = (dp.cwiseProduct(p)).rowwise().sum();
        const Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
        dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
      }
      G.wq += c.a.transpose() * dq;
      G.bq += dq.colwise().sum();
      G.wk += c.a.transpose() * dk;
      G.bk += dk.colwise().sum();
      G.wv += c.a.transpose() * dv;
      G.bv += dv.colwise().sum();
      const Matrix da = dq * P.wq.transpose() + dk * P.wk.transpose() + dv * P.wv.transpose();
      dx += layer_norm_backward(da, c.ln1, P.ln1_g, G.ln1_g, G.ln1_b);
    }

    for (Eigen::Index t = 0; t < T; ++t) {
      g.tok_emb.row(fc.ids[static_cast<std::size_t>(t)]) += dx.row(t);
      g.pos_emb.row(t) += dx.row(t);
    }
  }

  DecodeState start_decoding() const {
    DecodeState s;
    s.keys.assign(params_.layers.size(), Matrix(config_.max_len, config_.d_model));
    s.values.assign(params_.layers.size(), Matrix(config_.max_len, config_.d_model));
    return s;
  }

  /// Feeds one token and returns the next-token logits. Equivalent to the
  /// last row of forward_lm on the full prefix.
  RowVector step(DecodeState& s, int token) const {
    if (s.pos >= config_.max_len) {
      throw Error(ErrorCode::kSequenceTooLong, "decoding past max_len");
    }
    if (token < 0 || token >= config_.vocab_size) {
      throw Error(ErrorCode::kInvalidArgument, "token id out of range: " + std::to_string(token));
    }
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int n = s.pos + 1;
    Matrix x = params_.tok_emb.row(token) + params_.pos_emb.row(s.pos);
    for (std::size_t li = 0; li < params_.layers.size(); ++li) {
      const LayerParams& P = params_.layers[li];
      const Matrix a = layer_norm(x, P.ln1_g, P.ln1_b, config_.ln_eps);
      const Matrix q = a * P.wq + P.bq;
      s.keys[li].row(s.pos) = a * P.wk + P.bk;
      s.values[li].row(s.pos) = a * P.wv + P.bv;
      Matrix ctx(1, config_.d_model);
      for (int h = 0; h < config_.n_heads; ++h) {
        RowVector sc = (q.middleCols(h * dh, dh) *
                        s.keys[li].block(0, h * dh, n, dh).transpose()) * scale;
        const double mx = sc.maxCoeff();
        sc = (sc.array() - mx).exp();
        sc /= sc.sum();
        ctx.middleCols(h * dh, dh) = sc * s.values[li].block(0, h * dh, n, dh);
      }
      x = x + ctx * P.wo + P.bo;
      const Matrix m = layer_norm(x, P.ln2_g, P.ln2_b, config_.ln_eps);
      const Matrix h = (m * P.w1 + P.b1).unaryExpr([](double v) { return silu(v); });
      x = x + h * P.w2 + P.b2;
    }
    ++s.pos;
    return layer_norm(x, params_.lnf_g, params_.lnf_b, config_.ln_eps) * params_.lm_head;
  }

 private:
  ModelConfig config_;
  ModelParams params_;
};

/// Mean next-token negative log-likelihood over every non-PAD target
/// position in the batch. Adds d(loss)/d(params) into `grads` when given.
inline double loss_pretrain(const Transformer& model, std::span<const TokenSeq> batch,
                            ModelParams* grads = nullptr, Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  std::size_t count = 0;
  for (const auto& s : batch) count += s.length > 1 ? static_cast<std::size_t>(s.length - 1) : 0;
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);

  double total = 0.0;
  for (const auto& s : batch) {
    if (s.length < 2) continue;
    const auto active = s.active();
    const auto inputs = active.first(active.size() - 1);
    const ForwardCache fc = model.forward(inputs, dropout_rng);
    const Matrix logp = log_softmax_rows(model.logits(fc));
    for (Eigen::Index t = 0; t < logp.rows(); ++t) {
      total -= logp(t, active[static_cast<std::size_t>(t) + 1]);
    }
    if (grads) {
      Matrix d_logits = logp.array().exp();
      for (Eigen::Index t = 0; t < logp.rows(); ++t) {
        d_logits(t, active[static_cast<std::size_t>(t) + 1]) -= 1.0;
      }
      d_logits *= inv;
      model.backward(fc, model.lm_backward(fc, d_logits, *grads), *grads);
    }
  }
  return total * inv;
}

/// Property prediction for one sequence (non-PAD prefix only).
inline std::vector<double> forward_regress(const Transformer& model, const TokenSeq& seq) {
  const auto r = model.regress(model.forward(seq.active()));
  return std::vector<double>(r.out.data(), r.out.data() + r.out.size());
}

/// Mean squared error over every (example, property) entry.
inline double loss_finetune(const Transformer& model, std::span<const TokenSeq> batch,
                            std::span<const std::vector<double>> targets,
                            ModelParams* grads = nullptr, Rng* dropout_rng = nullptr) {
  if (batch.size() != targets.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(batch.size()) + " sequences vs " +
                                                std::to_string(targets.size()) + " targets");
  }
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  const int k = model.config().n_properties;
  const double inv = 1.0 / (static_cast<double>(batch.size()) * k);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (static_cast<int>(targets[i].size()) != k) {
      throw Error(ErrorCode::kLengthMismatch, "target arity differs from n_properties");
    }
    const ForwardCache fc = model.forward(batch[i].active(), dropout_rng);
    const auto r = model.regress(fc);
    RowVector diff(k);
    for (int j = 0; j < k; ++j) diff(j) = r.out(j) - targets[i][static_cast<std::size_t>(j)];
    total += diff.squaredNorm();
    if (grads) {
      const RowVector d_out = 2.0 * inv * diff;
      model.backward(fc, model.regress_backward(fc, r, d_out, *grads), *grads);
    }
  }
  return total * inv;
}

}  // namespace mofrl
