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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mofrl/error.hpp"
#include "mofrl/mofid.hpp"
#include "mofrl/predictor.hpp"
#include "mofrl/reward.hpp"
#include "mofrl/sampler.hpp"
#include "mofrl/transformer.hpp"
#include "mofrl/validator.hpp"

namespace mofrl {

enum class Stage { kPretrain, kFinetune, kRl };
enum class Scheduler { kCosine, kNone };
/// Per-token discount exponent: T_i - t (default) or t - 1.
enum class ExponentConvention { kRemaining, kElapsed };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::kPretrain, "pretrain"},
                                     {Stage::kFinetune, "finetune"},
                                     {Stage::kRl, "rl"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Scheduler, {{Scheduler::kCosine, "cosine"}, {Scheduler::kNone, "none"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ExponentConvention, {{ExponentConvention::kRemaining, "remaining"},
                                                  {ExponentConvention::kElapsed, "elapsed"}})

struct TrainConfig {
  Stage stage = Stage::kPretrain;
  double lr = 1e-3;
  int batch_size = 128;
  double warmup_ratio = 0.03;
  Scheduler scheduler = Scheduler::kCosine;
  double weight_decay = 1e-3;
  int epochs = 30;
  double grad_clip = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  int eval_interval = 5;
  double gamma = 0.99;
  double kl_beta = 0.01;
  int target_ramp_epochs = 10;
  ExponentConvention exponent_convention = ExponentConvention::kRemaining;
  int max_steps = 0;  // 0 means run every epoch
  int patience = 5;
  bool dropout = true;
  bool temperature_schedule = false;
  int updates_per_epoch = 1;
  int curriculum_prefix_tokens = 0;  // 0 disables memory-seeded prompts

  static TrainConfig for_stage(Stage s) {
    TrainConfig c;
    c.stage = s;
    switch (s) {
      case Stage::kPretrain:
        break;
      case Stage::kFinetune:
        c.lr = 1e-4;
        c.batch_size = 8;
        c.scheduler = Scheduler::kNone;
        break;
      case Stage::kRl:
        c.lr = 1e-5;
        c.batch_size = 32;
        c.weight_decay = 1e-4;
        c.epochs = 60;
        c.dropout = false;
        break;
    }
    return c;
  }

  void validate() const {
    const auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigError, m); };
    if (!(lr >= 0.0)) fail("lr must be >= 0");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail("warmup_ratio must be in [0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must be in (0,1]");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (epochs < 0 || max_steps < 0) fail("epochs and max_steps must be >= 0");
    if (eval_interval < 1) fail("eval_interval must be >= 1");
    if (kl_beta < 0.0 || weight_decay < 0.0) fail("kl_beta and weight_decay must be >= 0");
    if (updates_per_epoch < 1) fail("updates_per_epoch must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, stage, lr, batch_size, warmup_ratio,
                                                scheduler, weight_decay, epochs, grad_clip, seed,
                                                eval_interval, gamma, kl_beta, target_ramp_epochs,
                                                exponent_convention, max_steps, patience, dropout,
                                                temperature_schedule, updates_per_epoch,
                                                curriculum_prefix_tokens)

// ---------------------------------------------------------------------------
// Schedule and optimiser

inline int warmup_steps(int total_steps, double warmup_ratio) {
  if (warmup_ratio <= 0.0 || total_steps <= 0) return 0;
  return std::max(1, static_cast<int>(std::llround(warmup_ratio * total_steps)));
}

/// Linear warmup to `lr`, then cosine decay to zero (or flat for kNone).
inline double lr_schedule(int step, int total_steps, double lr, double warmup_ratio,
                          Scheduler scheduler) {
  const int warm = warmup_steps(total_steps, warmup_ratio);
  if (step < warm) return lr * static_cast<double>(step) / static_cast<double>(warm);
  if (scheduler == Scheduler::kNone) return lr;
  const double span = static_cast<double>(std::max(1, total_steps - warm));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

inline double lr_schedule(int step, int total_steps, const TrainConfig& cfg) {
  return lr_schedule(step, total_steps, cfg.lr, cfg.warmup_ratio, cfg.scheduler);
}

inline double grad_norm(const ModelParams& g) {
  double ss = 0.0;
  g.visit([&](const std::string&, const Matrix& m) { ss += m.squaredNorm(); });
  return std::sqrt(ss);
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
inline double clip_grad_norm(ModelParams& g, double max_norm) {
  const double n = grad_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const double s = max_norm / n;
    g.visit([&](const std::string&, Matrix& m) { m *= s; });
  }
  return n;
}

/// Adam with decoupled weight decay on weight tensors only.
class AdamW {
 public:
  explicit AdamW(const ModelConfig& cfg, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(ModelParams::zeros(cfg)), v_(ModelParams::zeros(cfg)), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay) {
    ++t_;
    std::vector<const Matrix*> g;
    grads.visit([&](const std::string&, const Matrix& m) { g.push_back(&m); });
    std::vector<Matrix*> m, v;
    m_.visit([&](const std::string&, Matrix& x) { m.push_back(&x); });
    v_.visit([&](const std::string&, Matrix& x) { v.push_back(&x); });
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    std::size_t i = 0;
    params.visit([&](const std::string& name, Matrix& p) {
      Matrix& mi = *m[i];
      Matrix& vi = *v[i];
      const Matrix& gi = *g[i];
      ++i;
      mi = b1_ * mi + (1.0 - b1_) * gi;
      vi = b2_ * vi + (1.0 - b2_) * gi.cwiseProduct(gi);
      if (weight_decay > 0.0 && ModelParams::is_weight(name)) p *= 1.0 - lr * weight_decay;
      p.array() -= lr * (mi.array() / c1) / ((vi.array() / c2).sqrt() + eps_);
    });
  }

  int steps() const { return t_; }

 private:
  ModelParams m_, v_;
  double b1_, b2_, eps_;
  int t_ = 0;
};

/// Called at every epoch that is a multiple of eval_interval.
using CheckpointFn = std::function<void(int epoch, const Transformer& model, double metric)>;

namespace detail {

inline void check_finite_grads(const ModelParams& g, int step) {
  if (!g.all_finite()) {
    throw Error(ErrorCode::kNonFiniteGradient, "non-finite gradient at step " + std::to_string(step));
  }
}

template <class T>
void shuffle_indices(std::vector<T>& idx, Rng& rng) {
  // Fisher-Yates with our own draws so the order is portable across stdlibs.
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int steps = 0;
};

/// Next-token training. The model ends holding the parameters of the epoch
/// with the lowest mean training loss.
inline PretrainResult run_pretrain(Transformer& model, std::span<const TokenSeq> corpus,
                                   const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "pretraining corpus is empty");
  const auto n = corpus.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const int per_epoch = static_cast<int>((n + bs - 1) / bs);
  const int total = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * per_epoch;

  Rng rng(cfg.seed);
  Rng dropout_rng(mix_seed(cfg.seed, 1));
  AdamW opt(model.config());
  ModelParams grads = ModelParams::zeros(model.config());
  ModelParams best = model.params();
  PretrainResult res;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; res.steps < total; ++epoch) {
    detail::shuffle_indices(order, rng);
    double sum = 0.0;
    int count = 0;
    for (std::size_t start = 0; start < n && res.steps < total; start += bs) {
      std::vector<TokenSeq> batch;
      for (std::size_t k = start; k < std::min(n, start + bs); ++k) batch.push_back(corpus[order[k]]);
      grads.set_zero();
      const double loss =
          loss_pretrain(model, batch, &grads, cfg.dropout ? &dropout_rng : nullptr);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kNonFiniteLoss, "loss is " + std::to_string(loss) + " at step " +
                                                   std::to_string(res.steps));
      }
      detail::check_finite_grads(grads, res.steps);
      clip_grad_norm(grads, cfg.grad_clip);
      opt.step(model.params(), grads, lr_schedule(res.steps, total, cfg), cfg.weight_decay);
      res.step_losses.push_back(loss);
      sum += loss;
      ++count;
      ++res.steps;
    }
    const double epoch_loss = sum / std::max(1, count);
    res.epoch_losses.push_back(epoch_loss);
    if (epoch_loss < res.best_loss) {
      res.best_loss = epoch_loss;
      res.best_epoch = epoch;
      best = model.params();
    }
    if (on_checkpoint && epoch % cfg.eval_interval == 0) on_checkpoint(epoch, model, epoch_loss);
  }
  model.params() = std::move(best);
  return res;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle, then train = round(ratio_train * n), val = round(ratio_val * n),
/// test = the rest.
inline Split split_indices(std::size_t n, std::uint64_t seed, double ratio_train = 0.8,
                           double ratio_val = 0.05) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  detail::shuffle_indices(idx, rng);
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(ratio_train * n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratio_val * n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

struct FinetuneResult {
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  double test_mse = 0.0;
  int epochs_run = 0;
  Split split;
};

inline double mse_on(const Transformer& model, std::span<const TokenSeq> seqs,
                     std::span<const std::vector<double>> targets,
                     const std::vector<std::size_t>& idx) {
  std::vector<TokenSeq> b;
  std::vector<std::vector<double>> t;
  for (auto i : idx) {
    b.push_back(seqs[i]);
    t.push_back(targets[i]);
  }
  return loss_finetune(model, b, t);
}

/// MSE training of the regression head (and backbone) with early stopping on
/// validation loss. The regression output bias starts at the training mean.
inline FinetuneResult run_finetune(Transformer& model, std::span<const TokenSeq> seqs,
                                   std::span<const std::vector<double>> targets,
                                   const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  if (seqs.size() != targets.size()) {
    throw Error(ErrorCode::kLengthMismatch, "sequence and target counts differ");
  }
  FinetuneResult res;
  res.split = split_indices(seqs.size(), cfg.seed);
  const Split& sp = res.split;
  if (sp.train.empty() || sp.val.empty() || sp.test.empty()) {
    throw Error(ErrorCode::kEmptySplit, "split of " + std::to_string(seqs.size()) + " records leaves " +
                                            std::to_string(sp.train.size()) + "/" +
                                            std::to_string(sp.val.size()) + "/" +
                                            std::to_string(sp.test.size()));
  }
  const int k = model.config().n_properties;
  for (int j = 0; j < k; ++j) {
    double mean = 0.0;
    for (auto i : sp.train) mean += targets[i].at(static_cast<std::size_t>(j));
    model.params().reg_b2(0, j) = mean / static_cast<double>(sp.train.size());
  }

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const int per_epoch = static_cast<int>((sp.train.size() + bs - 1) / bs);
  const int total = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * per_epoch;
  Rng rng(mix_seed(cfg.seed, 2));
  Rng dropout_rng(mix_seed(cfg.seed, 3));
  AdamW opt(model.config());
  ModelParams grads = ModelParams::zeros(model.config());
  ModelParams best = model.params();
  res.best_val = mse_on(model, seqs, targets, sp.val);
  std::vector<std::size_t> order = sp.train;
  int step = 0, stale = 0;

  for (int epoch = 1; step < total; ++epoch) {
    detail::shuffle_indices(order, rng);
    double sum = 0.0;
    int count = 0;
    for (std::size_t start = 0; start < order.size() && step < total; start += bs) {
      std::vector<TokenSeq> b;
      std::vector<std::vector<double>> t;
      for (std::size_t q = start; q < std::min(order.size(), start + bs); ++q) {
        b.push_back(seqs[order[q]]);
        t.push_back(targets[order[q]]);
      }
      grads.set_zero();
      const double loss = loss_finetune(model, b, t, &grads, cfg.dropout ? &dropout_rng : nullptr);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kNonFiniteLoss, "loss is " + std::to_string(loss) + " at step " +
                                                   std::to_string(step));
      }
      detail::check_finite_grads(grads, step);
      clip_grad_norm(grads, cfg.grad_clip);
      opt.step(model.params(), grads, lr_schedule(step, total, cfg), cfg.weight_decay);
      sum += loss;
      ++count;
      ++step;
    }
    res.train_losses.push_back(sum / std::max(1, count));
    const double val = mse_on(model, seqs, targets, sp.val);
    res.val_losses.push_back(val);
    res.epochs_run = epoch;
    if (val < res.best_val) {
      res.best_val = val;
      res.best_epoch = epoch;
      best = model.params();
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      break;
    }
    if (on_checkpoint && epoch % cfg.eval_interval == 0) on_checkpoint(epoch, model, val);
  }
  model.params() = std::move(best);
  res.test_mse = mse_on(model, seqs, targets, sp.test);
  return res;
}

// ---------------------------------------------------------------------------
// Policy gradient

struct PgLoss {
  double loss = 0.0;
  double pg = 0.0;
  double kl = 0.0;  // mean per-position KL(policy || ref)
  int positions = 0;
};

/// Discount weight for action t (1-based) of a sequence with T actions.
inline double discount_weight(int t, int T, double gamma, ExponentConvention c) {
  return std::pow(gamma, c == ExponentConvention::kRemaining ? T - t : t - 1);
}

/// REINFORCE with a batch-mean baseline plus a KL penalty to `ref`.
/// Actions before `action_start[i]` (a prompt prefix) get no policy-gradient
/// credit. Adds the gradient into `grads` when given.
inline PgLoss policy_gradient_loss(const Transformer& policy, const Transformer& ref,
                                   std::span<const TokenSeq> seqs, std::span<const double> rewards,
                                   const TrainConfig& cfg, ModelParams* grads = nullptr,
                                   std::span<const int> action_start = {}) {
  if (seqs.size() != rewards.size()) {
    throw Error(ErrorCode::kLengthMismatch, "sequence and reward counts differ");
  }
  PgLoss out;
  if (seqs.empty()) return out;
  const double B = static_cast<double>(seqs.size());
  const double baseline = mean_of(rewards);
  for (const auto& s : seqs) out.positions += std::max(0, s.length - 1);
  if (out.positions == 0) return out;
  const double inv_pos = 1.0 / out.positions;

  double kl_sum = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto ids = seqs[i].active();
    if (ids.size() < 2) continue;
    const auto inputs = ids.first(ids.size() - 1);
    const int T = static_cast<int>(inputs.size());
    const int start = action_start.empty() ? 1 : std::max(1, action_start[i]);
    const double adv = rewards[i] - baseline;

    const ForwardCache fc = policy.forward(inputs);
    const Matrix logp = log_softmax_rows(policy.logits(fc));
    const Matrix logq = log_softmax_rows(ref.forward_lm(inputs));
    const Matrix p = logp.array().exp();
    Matrix d_logits = Matrix::Zero(logp.rows(), logp.cols());
    for (int r = 0; r < T; ++r) {
      const int t = r + 1;
      const int a = ids[static_cast<std::size_t>(t)];
      const double kl = (p.row(r).array() * (logp.row(r) - logq.row(r)).array()).sum();
      kl_sum += kl;
      if (grads) {
        d_logits.row(r) = (cfg.kl_beta * inv_pos) *
                          (p.row(r).array() * ((logp.row(r) - logq.row(r)).array() - kl)).matrix();
      }
      if (t < start) continue;
      const double w = discount_weight(t, T, cfg.gamma, cfg.exponent_convention);
      out.pg -= logp(r, a) * adv * w / B;
      if (grads && adv != 0.0) {
        const double c = -adv * w / B;
        d_logits.row(r) -= c * p.row(r);
        d_logits(r, a) += c;
      }
    }
    if (grads) policy.backward(fc, policy.lm_backward(fc, d_logits, *grads), *grads);
  }
  out.kl = kl_sum * inv_pos;
  out.loss = out.pg + cfg.kl_beta * out.kl;
  return out;
}

/// Mean per-position KL(policy || ref) over the given sequences.
inline double sequence_kl(const Transformer& policy, const Transformer& ref,
                          std::span<const TokenSeq> seqs) {
  const std::vector<double> zeros(seqs.size(), 0.0);
  TrainConfig cfg;
  cfg.kl_beta = 1.0;
  return policy_gradient_loss(policy, ref, seqs, zeros, cfg).kl;
}

/// One clipped AdamW update on the policy-gradient loss.
inline PgLoss policy_gradient_step(Transformer& policy, const Transformer& ref,
                                   std::span<const TokenSeq> seqs, std::span<const double> rewards,
                                   const TrainConfig& cfg, AdamW& opt, double lr,
                                   std::span<const int> action_start = {}) {
  ModelParams grads = ModelParams::zeros(policy.config());
  const PgLoss l = policy_gradient_loss(policy, ref, seqs, rewards, cfg, &grads, action_start);
  detail::check_finite_grads(grads, opt.steps());
  clip_grad_norm(grads, cfg.grad_clip);
  opt.step(policy.params(), grads, lr, cfg.weight_decay);
  return l;
}

// ---------------------------------------------------------------------------
// RL loop

struct RlStepLog {
  int epoch = 0;
  double mean_reward = 0.0;
  double mean_target_reward = 0.0;
  double validity_rate = 0.0;  // percent
  double novelty_rate = 0.0;   // percent of valid structures
  double diversity = 0.0;
  double kl_value = 0.0;
  int topk_count = 0;
  double loss = 0.0;
  double mean_property = 0.0;
  double temperature = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RlStepLog, epoch, mean_reward, mean_target_reward, validity_rate,
                                   novelty_rate, diversity, kl_value, topk_count, loss,
                                   mean_property, temperature)

struct RlContext {
  const Vocabulary* vocab = nullptr;
  const PropertyPredictor* predictor = nullptr;
  std::vector<PropertyTarget> targets;
  RewardConfig reward;
  SamplingConfig sampling = SamplingConfig::rl();
  ValidatorConfig validator;
  const NoveltyIndex* novelty = nullptr;  // training set; null means everything is novel
};

struct RlCallbacks {
  CheckpointFn on_checkpoint;  // metric = mean target reward
  std::function<void(const RlStepLog&)> on_epoch;
  /// Replaces the engine's rewards, e.g. with a constant for ablations.
  std::function<std::vector<double>(const BatchRewards&)> reward_hook;
};

struct RlResult {
  std::vector<RlStepLog> logs;
  GlobalMemory memory;
  std::vector<int> checkpoint_epochs;
  int best_epoch = 0;
  double best_target_reward = -std::numeric_limits<double>::infinity();
};

/// One generated batch after decoding, checking and prediction.
struct RlBatch {
  std::vector<TokenSeq> seqs;
  std::vector<int> action_start;
  std::vector<ScoredCandidate> candidates;
};

inline RlBatch rl_generate_batch(const Transformer& policy, const RlContext& ctx,
                                 const SamplingConfig& scfg, int n, const GlobalMemory& memory,
                                 int prefix_tokens, std::uint64_t seed) {
  const Vocabulary& vocab = *ctx.vocab;
  RlBatch b;
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<int> prefix;
    // Every other sequence starts from a prompt cut from a remembered structure.
    if (prefix_tokens > 0 && memory.size() > 0 && i % 2 == 1) {
      const auto& e = memory.entries()[rng() % memory.size()];
      const auto ids = encode_unpadded(parse_mofid(e.mofid), vocab).ids;
      const auto keep = std::min(ids.size() - 1, static_cast<std::size_t>(prefix_tokens) + 1);
      prefix.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    b.action_start.push_back(prefix.empty() ? 1 : static_cast<int>(prefix.size()));
    b.seqs.push_back(make_token_seq(generate_one(policy, vocab, scfg, rng, prefix), 0, vocab.pad()));
    const auto text = decode(b.seqs.back(), vocab).text;
    ScoredCandidate c;
    c.mofid = text;
    c.predicted = ctx.predictor->predict(b.seqs.back(), text);
    c.valid = check_validity(text, ctx.validator).is_valid;
    c.novel = ctx.novelty == nullptr || !ctx.novelty->contains(text);
    b.candidates.push_back(std::move(c));
  }
  return b;
}

/// Generate, predict, score, update memory, take a policy-gradient step;
/// repeated once per epoch. The policy at entry is the frozen reference.
inline RlResult run_rl(Transformer& policy, const RlContext& ctx, const TrainConfig& cfg,
                       const RlCallbacks& cb = {}) {
  cfg.validate();
  ctx.reward.validate();
  ctx.sampling.validate();
  if (ctx.vocab == nullptr || ctx.predictor == nullptr) {
    throw Error(ErrorCode::kInvalidArgument, "RL needs a vocabulary and a predictor");
  }
  if (ctx.targets.empty()) throw Error(ErrorCode::kInvalidArgument, "RL needs at least one target");

  const Transformer ref = policy;
  AdamW opt(policy.config());
  GenerationHistory history(ctx.reward.history_size);
  RlResult res{{}, GlobalMemory(ctx.reward.memory_size), {}, 0,
               -std::numeric_limits<double>::infinity()};
  const int total_steps = cfg.epochs * cfg.updates_per_epoch;
  int step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    SamplingConfig scfg = ctx.sampling;
    if (cfg.temperature_schedule) {
      const int quarter = std::max(1, cfg.epochs / 4);
      const double f = std::min(1.0, static_cast<double>(epoch - 1) / quarter);
      scfg.temperature = 1.0 + f * (ctx.sampling.temperature - 1.0);
    }
    const RlBatch batch = rl_generate_batch(policy, ctx, scfg, cfg.batch_size, res.memory,
                                            cfg.curriculum_prefix_tokens,
                                            mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));

    const double ramp = cfg.target_ramp_epochs > 0
                            ? std::min(1.0, static_cast<double>(epoch) / cfg.target_ramp_epochs)
                            : 1.0;
    const BatchRewards br = score_batch(batch.candidates, ctx.targets, epoch, history, ctx.reward, ramp);
    const std::vector<double> rewards = cb.reward_hook ? cb.reward_hook(br) : br.final_rewards;

    std::vector<MemoryCandidate> mem;
    for (std::size_t i = 0; i < batch.candidates.size(); ++i) {
      const auto& c = batch.candidates[i];
      if (c.valid) mem.push_back({c.mofid, c.predicted, rewards[i]});
      history.add(c.mofid);
    }
    res.memory.update(mem, ctx.targets, ctx.reward);

    PgLoss l;
    for (int u = 0; u < cfg.updates_per_epoch; ++u, ++step) {
      l = policy_gradient_step(policy, ref, batch.seqs, rewards, cfg, opt,
                               lr_schedule(step, total_steps, cfg), batch.action_start);
    }

    RlStepLog log;
    log.epoch = epoch;
    log.mean_reward = mean_of(rewards);
    log.mean_target_reward = mean_of(br.target_rewards);
    int valid = 0, novel = 0;
    double div = 0.0, prop = 0.0;
    for (std::size_t i = 0; i < batch.candidates.size(); ++i) {
      const auto& c = batch.candidates[i];
      valid += c.valid;
      novel += c.valid && c.novel;
      div += br.diversity[i].total;
      prop += c.predicted.empty() ? 0.0 : c.predicted[0];
    }
    const double n = static_cast<double>(batch.candidates.size());
    log.validity_rate = 100.0 * valid / n;
    log.novelty_rate = valid == 0 ? 0.0 : 100.0 * novel / valid;
    log.diversity = div / n;
    log.kl_value = l.kl;
    log.topk_count = br.topk;
    log.loss = l.loss;
    log.mean_property = prop / n;
    log.temperature = scfg.temperature;
    res.logs.push_back(log);
    if (cb.on_epoch) cb.on_epoch(log);

    if (epoch % cfg.eval_interval == 0) {
      res.checkpoint_epochs.push_back(epoch);
      if (log.mean_target_reward > res.best_target_reward) {
        res.best_target_reward = log.mean_target_reward;
        res.best_epoch = epoch;
      }
      if (cb.on_checkpoint) cb.on_checkpoint(epoch, policy, log.mean_target_reward);
    }
  }
  return res;
}

}  // namespace mofrl
