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
#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mofrl/error.hpp"
#include "mofrl/mofid.hpp"
#include "mofrl/validator.hpp"

namespace mofrl {

enum class OptimizationMode { kHigher, kLower };

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizationMode,
                             {{OptimizationMode::kHigher, "higher"},
                              {OptimizationMode::kLower, "lower"}})

/// How top-K structures combine target reward and bonuses.
enum class RewardFormula {
  kTwoTier,      // multiplicative validity/novelty boosts plus scaled bonuses
  kWeightedSum,  // plain weighted sum of the four components (ablation)
};

NLOHMANN_JSON_SERIALIZE_ENUM(RewardFormula, {{RewardFormula::kTwoTier, "two_tier"},
                                             {RewardFormula::kWeightedSum, "weighted_sum"}})

struct PropertyTarget {
  std::string name;
  double value = 0.0;
  OptimizationMode mode = OptimizationMode::kHigher;
  double weight = 3.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PropertyTarget, name, value, mode, weight)

struct RewardConfig {
  RewardFormula formula = RewardFormula::kTwoTier;
  double beta_base = 3.0;
  double alpha_reduced = 0.3;
  double bonus_scale = 0.1;
  double valid_mult = 1.1;
  double novel_mult = 1.1;
  double novelty_factor = 1.5;
  double validity_factor = 2.5;
  double diversity_factor = 2.0;

  // Proximity tiers: reward i applies when delta_rel <= breakpoint i.
  std::array<double, 4> tier_rewards = {15.0, 12.0, 8.0, 4.0};
  std::array<double, 4> tier_breakpoints = {0.05, 0.1, 0.2, 0.5};
  double tail_scale = 4.0;
  double tail_min = 1.0;
  double direction_achieved = 1.3;
  double direction_close = 1.1;
  double direction_wrong = 0.95;
  double close_buffer = 0.2;
  double eps = 1e-6;

  double w_batch = 0.30;
  double w_ngram = 0.25;
  double w_history = 0.35;
  double w_composition = 0.10;
  int ngram_n = 4;
  int history_size = 500;
  double dup_penalty = 0.1;

  int memory_size = 200;
  std::array<double, 3> topk_ratios = {0.5, 0.4, 0.3};
  std::array<int, 2> topk_epoch_thresholds = {100, 200};
  int min_topk = 3;

  double norm_mean_threshold = 100.0;
  double norm_std_threshold = 50.0;
  double norm_target_mean = 20.0;
  double norm_target_std = 10.0;
  double reward_floor = 0.1;

  void validate() const {
    const auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigError, m); };
    for (double f : {beta_base, alpha_reduced, bonus_scale, valid_mult, novel_mult, novelty_factor,
                     validity_factor, diversity_factor, direction_achieved, direction_close,
                     direction_wrong, reward_floor, eps}) {
      if (!(f > 0.0)) fail("reward factors must be positive");
    }
    for (std::size_t i = 1; i < tier_breakpoints.size(); ++i) {
      if (!(tier_breakpoints[i] > tier_breakpoints[i - 1])) fail("tier breakpoints must increase");
    }
    if (std::abs(w_batch + w_ngram + w_history + w_composition - 1.0) > 1e-9) {
      fail("diversity weights must sum to 1");
    }
    if (ngram_n < 1 || history_size < 1 || memory_size < 1 || min_topk < 1) {
      fail("sizes must be positive");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    RewardConfig, formula, beta_base, alpha_reduced, bonus_scale, valid_mult, novel_mult,
    novelty_factor, validity_factor, diversity_factor, tier_rewards, tier_breakpoints, tail_scale,
    tail_min, direction_achieved, direction_close, direction_wrong, close_buffer, eps, w_batch,
    w_ngram, w_history, w_composition, ngram_n, history_size, dup_penalty, memory_size,
    topk_ratios, topk_epoch_thresholds, min_topk, norm_mean_threshold, norm_std_threshold,
    norm_target_mean, norm_target_std, reward_floor)

// ---------------------------------------------------------------------------
// Target proximity

inline double relative_distance(double predicted, double target, const RewardConfig& cfg) {
  return std::abs(predicted - target) / (std::abs(target) + cfg.eps);
}

/// Tiered base reward, non-increasing in delta_rel.
inline double base_reward(double delta_rel, const RewardConfig& cfg) {
  for (std::size_t i = 0; i < cfg.tier_breakpoints.size(); ++i) {
    if (delta_rel <= cfg.tier_breakpoints[i]) return cfg.tier_rewards[i];
  }
  return std::max(cfg.tail_min, cfg.tail_scale * (1.0 - delta_rel));
}

inline double direction_factor(double predicted, double target, OptimizationMode mode,
                               const RewardConfig& cfg) {
  const bool achieved = mode == OptimizationMode::kHigher ? predicted >= target : predicted <= target;
  if (achieved) return cfg.direction_achieved;
  if (relative_distance(predicted, target, cfg) <= cfg.close_buffer) return cfg.direction_close;
  return cfg.direction_wrong;
}

inline double proximity_reward(double predicted, double target, OptimizationMode mode, double weight,
                               const RewardConfig& cfg) {
  return base_reward(relative_distance(predicted, target, cfg), cfg) *
         direction_factor(predicted, target, mode, cfg) * weight;
}

/// Weighted proximity summed over properties; each target carries its weight.
inline double target_reward(std::span<const double> predicted, std::span<const PropertyTarget> targets,
                            const RewardConfig& cfg) {
  if (predicted.size() < targets.size()) {
    throw Error(ErrorCode::kLengthMismatch, "fewer predictions than targets");
  }
  double r = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    r += proximity_reward(predicted[i], targets[i].value, targets[i].mode, targets[i].weight, cfg);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Progress score used to rank the global memory

inline double progress(double p, double target, OptimizationMode mode, const RewardConfig& cfg) {
  const double abs_t = target == 0.0 ? cfg.eps : std::abs(target);
  if (mode == OptimizationMode::kHigher) {
    if (p >= target) return 1.0 + (p - target) / abs_t;
    const double denom = target == 0.0 ? cfg.eps : target;
    return std::max(0.1, p / denom);
  }
  if (p <= target) return 1.0 + (target - p) / abs_t;
  if (p == 0.0) return 0.1;
  return std::max(0.1, target / p);
}

inline double target_score(std::span<const double> predicted, std::span<const PropertyTarget> targets,
                           const RewardConfig& cfg) {
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size() && i < predicted.size(); ++i) {
    s += targets[i].weight * progress(predicted[i], targets[i].value, targets[i].mode, cfg);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Diversity

/// Bucketed length, element set and topology; similar structures share it.
inline std::string structure_signature(std::string_view mofid) {
  const std::string norm = normalize_mofid(mofid);
  std::string sig = std::to_string(norm.size() / 10) + "|";
  try {
    const MofId m = parse_mofid(norm);
    for (const auto& e : extract_composition(m).elements) sig += e + ",";
    sig += "|" + m.topology;
  } catch (const Error&) {
    sig += "|";
  }
  return sig;
}

/// Ring buffer of recent generations with duplicate and signature counts.
class GenerationHistory {
 public:
  explicit GenerationHistory(int capacity = 500) : capacity_(static_cast<std::size_t>(capacity)) {}

  void add(std::string_view mofid) {
    Item item{normalize_mofid(mofid), structure_signature(mofid)};
    ++exact_[item.text];
    ++signatures_[item.signature];
    items_.push_back(std::move(item));
    while (items_.size() > capacity_) {
      const Item& old = items_.front();
      if (--exact_[old.text] == 0) exact_.erase(old.text);
      if (--signatures_[old.signature] == 0) signatures_.erase(old.signature);
      items_.pop_front();
    }
  }

  bool contains(std::string_view mofid) const { return exact_.count(normalize_mofid(mofid)) > 0; }

  int signature_count(std::string_view mofid) const {
    const auto it = signatures_.find(structure_signature(mofid));
    return it == signatures_.end() ? 0 : it->second;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::string& oldest() const { return items_.front().text; }

 private:
  struct Item {
    std::string text;
    std::string signature;
  };
  std::size_t capacity_;
  std::deque<Item> items_;
  std::unordered_map<std::string, int> exact_;
  std::unordered_map<std::string, int> signatures_;
};

/// Length difference plus positional character mismatch, both in [0,1].
inline double approx_distance(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  const std::size_t shortest = std::min(a.size(), b.size());
  if (longest == 0) return 0.0;
  const double len_term =
      static_cast<double>(longest - shortest) / static_cast<double>(longest);
  double char_term = 1.0;
  if (shortest > 0) {
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < shortest; ++i) mismatches += a[i] != b[i];
    char_term = static_cast<double>(mismatches) / static_cast<double>(shortest);
  }
  return 0.5 * len_term + 0.5 * char_term;
}

struct DiversityBreakdown {
  double batch = 0.0;
  double ngram = 0.0;
  double history = 0.0;
  double composition = 0.0;
  double total = 0.0;
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline double composition_score(std::string_view mofid) {
  try {
    const auto c = extract_composition(parse_mofid(mofid));
    return std::min(1.0, 0.5 * static_cast<double>(c.elements.size()) / 10.0 +
                             0.5 * static_cast<double>(c.functional_groups) / 5.0);
  } catch (const Error&) {
    return 0.0;
  }
}

/// Diversity score of every batch member against the batch and history.
inline std::vector<DiversityBreakdown> diversity_scores(std::span<const std::string> batch,
                                                        const GenerationHistory& history,
                                                        const RewardConfig& cfg) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "diversity needs a non-empty batch");
  const auto n = static_cast<std::size_t>(cfg.ngram_n);
  std::unordered_map<std::string_view, int> gram_counts;
  for (const auto& s : batch) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++gram_counts[std::string_view(s).substr(i, n)];
  }
  const double batch_size = static_cast<double>(batch.size());

  std::vector<DiversityBreakdown> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    DiversityBreakdown& d = out[i];
    const std::string& s = batch[i];

    if (batch.size() == 1) {
      d.batch = 1.0;
    } else {
      double sum = 0.0;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        if (j != i) sum += approx_distance(s, batch[j]);
      }
      d.batch = clamp01(2.0 / (batch_size - 1.0) * sum);
    }

    if (s.size() < n) {
      d.ngram = 1.0;
    } else {
      double freq = 0.0;
      std::size_t grams = 0;
      for (std::size_t k = 0; k + n <= s.size(); ++k, ++grams) {
        freq += gram_counts[std::string_view(s).substr(k, n)];
      }
      const double avg = freq / static_cast<double>(grams);
      d.ngram = clamp01(std::min(1.0, 1.0 / (avg / batch_size + cfg.eps)));
    }

    if (history.contains(s)) {
      d.history = cfg.dup_penalty;
    } else {
      d.history = clamp01(1.0 / std::max(1, history.signature_count(s)));
    }

    d.composition = clamp01(composition_score(s));
    d.total = cfg.w_batch * d.batch + cfg.w_ngram * d.ngram + cfg.w_history * d.history +
              cfg.w_composition * d.composition;
  }
  return out;
}

inline DiversityBreakdown diversity_score(std::size_t index, std::span<const std::string> batch,
                                          const GenerationHistory& history, const RewardConfig& cfg) {
  return diversity_scores(batch, history, cfg).at(index);
}

// ---------------------------------------------------------------------------
// Total reward

struct RewardBreakdown {
  double target = 0.0;
  double novelty_bonus = 0.0;
  double validity_bonus = 0.0;
  double diversity_bonus = 0.0;
  bool is_valid = false;
  bool is_novel = false;
  bool in_topk = false;
  double total = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RewardBreakdown, target, novelty_bonus, validity_bonus,
                                   diversity_bonus, is_valid, is_novel, in_topk, total)

inline RewardBreakdown total_reward(double r_target, bool valid, bool novel, double diversity,
                                    bool in_topk, const RewardConfig& cfg) {
  RewardBreakdown b;
  b.target = r_target;
  b.is_valid = valid;
  b.is_novel = novel;
  b.in_topk = in_topk;
  if (!in_topk) {
    b.total = std::max(cfg.reward_floor, cfg.alpha_reduced * r_target);
    return b;
  }
  double total = 0.0;
  if (cfg.formula == RewardFormula::kTwoTier) {
    b.novelty_bonus = cfg.novelty_factor * (novel ? 1.0 : 0.0) * cfg.bonus_scale;
    b.validity_bonus = cfg.validity_factor * (valid ? 1.0 : 0.0) * cfg.bonus_scale;
    b.diversity_bonus = cfg.diversity_factor * diversity * cfg.bonus_scale;
    total = r_target * cfg.beta_base * (valid ? cfg.valid_mult : 1.0) *
                (novel ? cfg.novel_mult : 1.0) +
            b.novelty_bonus + b.validity_bonus + b.diversity_bonus;
  } else {
    b.novelty_bonus = cfg.novelty_factor * (novel ? 1.0 : 0.0);
    b.validity_bonus = cfg.validity_factor * (valid ? 1.0 : 0.0);
    b.diversity_bonus = cfg.diversity_factor * diversity;
    total = cfg.beta_base * r_target + b.novelty_bonus + b.validity_bonus + b.diversity_bonus;
  }
  b.total = std::max(cfg.reward_floor, total);
  return b;
}

inline int topk_count(int batch_size, int epoch, const RewardConfig& cfg) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  double ratio = cfg.topk_ratios[2];
  if (epoch < cfg.topk_epoch_thresholds[0]) {
    ratio = cfg.topk_ratios[0];
  } else if (epoch < cfg.topk_epoch_thresholds[1]) {
    ratio = cfg.topk_ratios[1];
  }
  const int k = static_cast<int>(std::floor(batch_size * ratio + 1e-9));
  return std::min(batch_size, std::max(cfg.min_topk, k));
}

inline double mean_of(std::span<const double> xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population standard deviation.
inline double stddev_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double mu = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

/// Rescales only when the batch mean or spread is out of bounds, then floors.
inline std::vector<double> normalize_rewards(std::span<const double> rewards, const RewardConfig& cfg) {
  if (rewards.empty()) throw Error(ErrorCode::kInvalidArgument, "no rewards to normalise");
  const double mu = mean_of(rewards);
  const double sigma = stddev_of(rewards);
  std::vector<double> out(rewards.begin(), rewards.end());
  if (mu > cfg.norm_mean_threshold || sigma > cfg.norm_std_threshold) {
    const double s = std::max(sigma, cfg.eps);
    for (double& r : out) r = cfg.norm_target_mean + (r - mu) / s * cfg.norm_target_std;
  }
  for (double& r : out) r = std::max(cfg.reward_floor, r);
  return out;
}

// ---------------------------------------------------------------------------
// Global memory

struct MemoryEntry {
  std::string mofid;
  std::vector<double> properties;
  double score = 0.0;
  double reward = 0.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MemoryEntry, mofid, properties, score, reward)

struct MemoryCandidate {
  std::string mofid;
  std::vector<double> properties;
  double reward = 0.0;
};

/// Best structures seen so far, sorted by target score, unique by MOFid.
class GlobalMemory {
 public:
  explicit GlobalMemory(int capacity = 200) : capacity_(static_cast<std::size_t>(capacity)) {}

  void update(std::span<const MemoryCandidate> candidates, std::span<const PropertyTarget> targets,
              const RewardConfig& cfg) {
    std::unordered_map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < entries_.size(); ++i) where.emplace(entries_[i].mofid, i);
    for (const auto& c : candidates) {
      MemoryEntry e{normalize_mofid(c.mofid), c.properties, target_score(c.properties, targets, cfg),
                    c.reward};
      const auto it = where.find(e.mofid);
      if (it == where.end()) {
        where.emplace(e.mofid, entries_.size());
        entries_.push_back(std::move(e));
      } else if (e.score > entries_[it->second].score) {
        entries_[it->second] = std::move(e);
      }
    }
    std::stable_sort(entries_.begin(), entries_.end(), [](const MemoryEntry& a, const MemoryEntry& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.mofid < b.mofid;
    });
    if (entries_.size() > capacity_) entries_.resize(capacity_);
  }

  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// One line per entry: rank, score, reward, MOFid (tab separated).
  void dump(std::ostream& os) const {
    os << "rank\tscore\treward\tmofid\n";
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      os << i + 1 << '\t' << entries_[i].score << '\t' << entries_[i].reward << '\t'
         << entries_[i].mofid << '\n';
    }
  }

 private:
  std::size_t capacity_;
  std::vector<MemoryEntry> entries_;
};

// ---------------------------------------------------------------------------
// Batch scoring

struct ScoredCandidate {
  std::string mofid;
  std::vector<double> predicted;
  bool valid = false;
  bool novel = false;
};

struct BatchRewards {
  std::vector<double> target_rewards;  // before ramping
  std::vector<DiversityBreakdown> diversity;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> final_rewards;  // normalised and floored
  int topk = 0;                       // may fall below topk_count() on exact ties
};

/// Target reward, diversity, top-K split by target reward, total reward,
/// then conditional normalisation. `target_scale` ramps the target term.
inline BatchRewards score_batch(std::span<const ScoredCandidate> batch,
                                std::span<const PropertyTarget> targets, int epoch,
                                const GenerationHistory& history, const RewardConfig& cfg,
                                double target_scale = 1.0) {
  BatchRewards out;
  if (batch.empty()) return out;
  std::vector<std::string> texts;
  texts.reserve(batch.size());
  for (const auto& c : batch) {
    texts.push_back(normalize_mofid(c.mofid));
    out.target_rewards.push_back(target_reward(c.predicted, targets, cfg));
  }
  out.diversity = diversity_scores(texts, history, cfg);

  // Ties in target reward (common in the flat tail tier) go to the
  // candidate whose predictions sit closer to the targets.
  std::vector<double> gap(batch.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < targets.size(); ++j) {
      gap[i] += relative_distance(batch[i].predicted[j], targets[j].value, cfg);
    }
  }
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (out.target_rewards[a] != out.target_rewards[b]) {
      return out.target_rewards[a] > out.target_rewards[b];
    }
    return gap[a] < gap[b];
  });
  out.topk = topk_count(static_cast<int>(batch.size()), epoch, cfg);
  // A group of exact ties straddling the cut is left out entirely: top-K
  // only holds candidates strictly better than everything excluded.
  const auto same = [&](std::size_t a, std::size_t b) {
    return out.target_rewards[a] == out.target_rewards[b] && gap[a] == gap[b];
  };
  if (static_cast<std::size_t>(out.topk) < batch.size()) {
    const std::size_t cut = static_cast<std::size_t>(out.topk);
    while (out.topk > 0 && same(order[static_cast<std::size_t>(out.topk) - 1], order[cut])) --out.topk;
  }
  std::vector<bool> in_topk(batch.size(), false);
  for (int i = 0; i < out.topk; ++i) in_topk[order[static_cast<std::size_t>(i)]] = true;

  std::vector<double> totals;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.breakdowns.push_back(total_reward(out.target_rewards[i] * target_scale, batch[i].valid,
                                          batch[i].novel, out.diversity[i].total, in_topk[i], cfg));
    totals.push_back(out.breakdowns.back().total);
  }
  out.final_rewards = normalize_rewards(totals, cfg);
  return out;
}

}  // namespace mofrl
