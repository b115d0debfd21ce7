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
#include <string>
#include <vector>

#include "json.hpp"
#include "mofrl/mofid.hpp"
#include "mofrl/predictor.hpp"
#include "mofrl/reward.hpp"
#include "mofrl/sampler.hpp"
#include "mofrl/validator.hpp"

namespace mofrl {

enum class FilterPath { kStrict, kRelaxed };

NLOHMANN_JSON_SERIALIZE_ENUM(FilterPath, {{FilterPath::kStrict, "strict"}, {FilterPath::kRelaxed, "relaxed"}})

struct GeneratedRecord {
  std::string mofid;
  std::vector<double> predicted;
  ValidityReport report;
  bool novel = false;
  FilterPath path = FilterPath::kStrict;
  bool accepted = false;
  RewardBreakdown reward;
};

inline void to_json(nlohmann::json& j, const GeneratedRecord& r) {
  j = {{"mofid", r.mofid},
       {"predicted", r.predicted},
       {"valid", r.report.is_valid},
       {"checks", r.report.checks()},
       {"novel", r.novel},
       {"path", r.path},
       {"accepted", r.accepted},
       {"reward", r.reward}};
}

struct PipelineResult {
  std::vector<GeneratedRecord> accepted;   // RL: sorted by total reward, descending
  std::vector<GeneratedRecord> generated;  // every attempt, in order
  int attempts = 0;
  bool cap_exceeded = false;
};

inline int attempt_cap(const SamplingConfig& cfg, int n_target, int cap) {
  return cap >= 0 ? cap : cfg.attempt_cap_factor * n_target;
}

/// Generates until `n_target` structures are strictly valid and absent from
/// the training set, or the attempt cap runs out (cap < 0: factor x n_target).
inline PipelineResult pipeline_finetuned(const Transformer& model, const PropertyPredictor& predictor,
                                         const Vocabulary& vocab, const SamplingConfig& cfg,
                                         const NoveltyIndex& novelty, const ValidatorConfig& vcfg,
                                         int n_target, int cap = -1) {
  PipelineResult res;
  const int limit = attempt_cap(cfg, n_target, cap);
  while (static_cast<int>(res.accepted.size()) < n_target && res.attempts < limit) {
    const int n = std::min(cfg.batch_size, limit - res.attempts);
    const auto seqs = generate(model, vocab, cfg, n, static_cast<std::uint64_t>(res.attempts));
    for (const auto& s : seqs) {
      ++res.attempts;
      GeneratedRecord r;
      r.mofid = decode(s, vocab).text;
      r.predicted = predictor.predict(s, r.mofid);
      r.report = check_validity(r.mofid, vcfg);
      r.novel = is_novel(r.mofid, novelty);
      r.accepted = r.report.is_valid && r.novel && static_cast<int>(res.accepted.size()) < n_target;
      if (r.accepted) res.accepted.push_back(r);
      res.generated.push_back(std::move(r));
    }
  }
  res.cap_exceeded = static_cast<int>(res.accepted.size()) < n_target;
  return res;
}

/// Relaxed filters apply when every prediction is within the threshold
/// factor of its target (from below for higher, from above for lower).
inline FilterPath rl_filter_path(const std::vector<double>& predicted,
                                 const std::vector<PropertyTarget>& targets, double theta) {
  if (targets.empty()) return FilterPath::kStrict;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double y = predicted.at(i);
    const double t = targets[i].value;
    const bool near = targets[i].mode == OptimizationMode::kHigher ? y >= theta * t : y <= t / theta;
    if (!near) return FilterPath::kStrict;
  }
  return FilterPath::kRelaxed;
}

/// Strict: valid, absent from training and at most `max_sim` similar to any
/// training structure. Relaxed: valid under relaxed grammar and not an exact
/// training duplicate.
inline bool passes_filter(const std::string& mofid, FilterPath path, const NoveltyIndex& novelty,
                          const ValidatorConfig& vcfg, double max_sim, ValidityReport* report = nullptr,
                          bool* novel = nullptr) {
  const bool relaxed = path == FilterPath::kRelaxed;
  const ValidityReport r = check_validity(mofid, vcfg, relaxed);
  bool n = is_novel(mofid, novelty);
  if (n && !relaxed) n = max_similarity(mofid, novelty) <= max_sim;
  if (report) *report = r;
  if (novel) *novel = n;
  return r.is_valid && n;
}

/// Filtered RL generation; survivors are scored as one batch and returned
/// in descending order of total reward.
inline PipelineResult pipeline_rl(const Transformer& policy, const PropertyPredictor& predictor,
                                  const Vocabulary& vocab, const SamplingConfig& cfg,
                                  const RewardConfig& rcfg, const std::vector<PropertyTarget>& targets,
                                  const NoveltyIndex& novelty, const ValidatorConfig& vcfg,
                                  int n_target, int cap = -1) {
  PipelineResult res;
  const int limit = attempt_cap(cfg, n_target, cap);
  while (static_cast<int>(res.accepted.size()) < n_target && res.attempts < limit) {
    const int n = std::min(cfg.batch_size, limit - res.attempts);
    const auto seqs = generate(policy, vocab, cfg, n, static_cast<std::uint64_t>(res.attempts));
    for (const auto& s : seqs) {
      ++res.attempts;
      GeneratedRecord r;
      r.mofid = decode(s, vocab).text;
      r.predicted = predictor.predict(s, r.mofid);
      r.path = rl_filter_path(r.predicted, targets, cfg.relaxed_threshold);
      r.accepted = passes_filter(r.mofid, r.path, novelty, vcfg, cfg.novelty_similarity, &r.report, &r.novel) &&
                   static_cast<int>(res.accepted.size()) < n_target;
      if (r.accepted) res.accepted.push_back(r);
      res.generated.push_back(std::move(r));
    }
  }
  res.cap_exceeded = static_cast<int>(res.accepted.size()) < n_target;
  if (!res.accepted.empty()) {
    std::vector<ScoredCandidate> cands;
    for (const auto& r : res.accepted) cands.push_back({r.mofid, r.predicted, r.report.is_valid, r.novel});
    const GenerationHistory empty(rcfg.history_size);
    const auto br = score_batch(cands, targets, 0, empty, rcfg);
    for (std::size_t i = 0; i < res.accepted.size(); ++i) res.accepted[i].reward = br.breakdowns[i];
    std::stable_sort(res.accepted.begin(), res.accepted.end(),
                     [](const GeneratedRecord& a, const GeneratedRecord& b) {
                       return a.reward.total > b.reward.total;
                     });
  }
  return res;
}

}  // namespace mofrl
