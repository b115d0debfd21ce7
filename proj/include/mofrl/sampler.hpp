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
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "mofrl/error.hpp"
#include "mofrl/mofid.hpp"
#include "mofrl/transformer.hpp"

namespace mofrl {

struct SamplingConfig {
  double temperature = 0.7;
  int top_k = 400;
  double top_p = 0.9;
  int max_len = kDefaultMaxLen;
  int batch_size = 20;
  int n_return = 32;
  std::uint64_t seed = 0;
  double relaxed_threshold = 0.8;
  bool greedy = false;
  int attempt_cap_factor = 50;
  double novelty_similarity = 0.85;

  static SamplingConfig finetuned() { return {}; }

  static SamplingConfig rl() {
    SamplingConfig c;
    c.top_k = 100;
    c.batch_size = 50;
    return c;
  }

  void validate() const {
    if (!(temperature > 0.0)) throw Error(ErrorCode::kConfigError, "temperature must be > 0");
    if (top_k < 1) throw Error(ErrorCode::kConfigError, "top_k must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::kConfigError, "top_p must be in (0,1]");
    if (max_len < 2) throw Error(ErrorCode::kConfigError, "max_len must be >= 2");
    if (batch_size < 1) throw Error(ErrorCode::kConfigError, "batch_size must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SamplingConfig, temperature, top_k, top_p, max_len,
                                                batch_size, n_return, seed, relaxed_threshold,
                                                greedy, attempt_cap_factor, novelty_similarity)

/// SplitMix64 finaliser; derives independent per-sequence seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Temperature, then top-k, then nucleus filtering. Returns a full-length
/// distribution with zeros outside the kept set. Ids in `banned` are never
/// kept unless nothing else is available.
inline std::vector<double> filtered_distribution(std::span<const double> logits,
                                                 const SamplingConfig& cfg,
                                                 std::span<const int> banned = {}) {
  const std::size_t V = logits.size();
  if (V == 0) throw Error(ErrorCode::kInvalidArgument, "empty logits");
  std::vector<bool> allowed(V, true);
  std::size_t n_allowed = V;
  for (int b : banned) {
    if (b >= 0 && static_cast<std::size_t>(b) < V && allowed[static_cast<std::size_t>(b)]) {
      allowed[static_cast<std::size_t>(b)] = false;
      --n_allowed;
    }
  }
  if (n_allowed == 0) std::fill(allowed.begin(), allowed.end(), true);

  std::vector<std::size_t> order;
  order.reserve(V);
  for (std::size_t i = 0; i < V; ++i) {
    if (allowed[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });

  std::vector<double> probs(V, 0.0);
  if (cfg.greedy) {
    probs[order.front()] = 1.0;
    return probs;
  }
  const std::size_t k = std::min(order.size(), static_cast<std::size_t>(std::max(1, cfg.top_k)));
  order.resize(k);
  const double top = logits[order.front()] / cfg.temperature;
  double z = 0.0;
  std::vector<double> p(k);
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(logits[order[i]] / cfg.temperature - top);
    z += p[i];
  }
  std::size_t keep = 0;
  double cum = 0.0, kept_mass = 0.0;
  while (keep < k) {
    cum += p[keep] / z;
    kept_mass += p[keep];
    ++keep;
    if (cum >= cfg.top_p) break;
  }
  for (std::size_t i = 0; i < keep; ++i) probs[order[i]] = p[i] / kept_mass;
  return probs;
}

inline int sample_from(std::span<const double> probs, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  return last;
}

inline int sample_token(std::span<const double> logits, const SamplingConfig& cfg, Rng& rng,
                        std::span<const int> banned = {}) {
  const auto probs = filtered_distribution(logits, cfg, banned);
  return sample_from(probs, rng);
}

/// Tokens never emitted during generation.
inline std::vector<int> generation_banned_ids(const Vocabulary& vocab) {
  return {vocab.bos(), vocab.pad(), vocab.mask(), vocab.unk()};
}

/// One autoregressive sample starting from `prefix` (which must begin with
/// BOS). Stops at EOS or the length limit.
inline std::vector<int> generate_one(const Transformer& model, const Vocabulary& vocab,
                                     const SamplingConfig& cfg, Rng& rng,
                                     std::span<const int> prefix = {}) {
  const int limit = std::min(cfg.max_len, model.config().max_len);
  std::vector<int> ids;
  if (prefix.empty()) {
    ids.push_back(vocab.bos());
  } else {
    ids.assign(prefix.begin(), prefix.end());
  }
  if (static_cast<int>(ids.size()) >= limit) {
    ids.resize(static_cast<std::size_t>(limit));
    return ids;
  }
  const auto banned = generation_banned_ids(vocab);
  DecodeState state = model.start_decoding();
  RowVector logits;
  for (int id : ids) logits = model.step(state, id);
  while (static_cast<int>(ids.size()) < limit) {
    const int next = sample_token(std::span<const double>(logits.data(), logits.size()), cfg, rng, banned);
    ids.push_back(next);
    if (next == vocab.eos() || static_cast<int>(ids.size()) >= limit) break;
    logits = model.step(state, next);
  }
  return ids;
}

/// `n` sequences; sequence i uses its own RNG stream derived from
/// (cfg.seed, first_stream + i), so results do not depend on batching.
inline std::vector<TokenSeq> generate(const Transformer& model, const Vocabulary& vocab,
                                      const SamplingConfig& cfg, int n,
                                      std::uint64_t first_stream = 0) {
  cfg.validate();
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n)));
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(cfg.seed, first_stream + static_cast<std::uint64_t>(i)));
    out.push_back(make_token_seq(generate_one(model, vocab, cfg, rng), 0, vocab.pad()));
  }
  return out;
}

}  // namespace mofrl
