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


#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "mofrl/reward.hpp"
#include "test_util.hpp"

namespace mofrl {
namespace {

constexpr double kTol = 1e-9;
constexpr auto kHigher = OptimizationMode::kHigher;
constexpr auto kLower = OptimizationMode::kLower;

TEST(RewardConfig, DefaultsValidate) {
  RewardConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.w_batch = 0.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = RewardConfig{};
  cfg.tier_breakpoints = {0.05, 0.05, 0.2, 0.5};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(RewardConfig, JsonRoundTrip) {
  RewardConfig cfg;
  cfg.formula = RewardFormula::kWeightedSum;
  cfg.memory_size = 17;
  const nlohmann::json j = cfg;
  EXPECT_EQ(j["formula"], "weighted_sum");
  const auto back = j.get<RewardConfig>();
  EXPECT_EQ(back.memory_size, 17);
  EXPECT_EQ(back.formula, RewardFormula::kWeightedSum);
  // Partial objects keep defaults for missing keys.
  const auto partial = nlohmann::json::parse(R"({"beta_base": 2.0})").get<RewardConfig>();
  EXPECT_EQ(partial.beta_base, 2.0);
  EXPECT_EQ(partial.alpha_reduced, 0.3);
}

TEST(Proximity, Examples) {
  const RewardConfig cfg;
  EXPECT_NEAR(proximity_reward(2.0, 2.0, kHigher, 1.0, cfg), 19.5, kTol);
  EXPECT_NEAR(proximity_reward(0.85 * 2.0, 2.0, kHigher, 1.0, cfg), 8.8, kTol);
  EXPECT_NEAR(proximity_reward(0.0, 1.0, kHigher, 1.0, cfg), 0.95, kTol);
}

TEST(Proximity, WeightScalesLinearly) {
  const RewardConfig cfg;
  EXPECT_NEAR(proximity_reward(2.0, 2.0, kHigher, 3.0, cfg), 58.5, kTol);
}

TEST(Proximity, LowerMode) {
  const RewardConfig cfg;
  // Below target is achieved for lower mode.
  EXPECT_NEAR(proximity_reward(0.97, 1.0, kLower, 1.0, cfg), 15.0 * 1.3, kTol);
  EXPECT_NEAR(proximity_reward(1.15, 1.0, kLower, 1.0, cfg), 8.0 * 1.1, kTol);
  EXPECT_NEAR(proximity_reward(1.4, 1.0, kLower, 1.0, cfg), 4.0 * 0.95, kTol);
}

TEST(Proximity, TierBoundaries) {
  const RewardConfig cfg;
  EXPECT_EQ(base_reward(0.0, cfg), 15.0);
  EXPECT_EQ(base_reward(0.05, cfg), 15.0);
  EXPECT_EQ(base_reward(0.0500001, cfg), 12.0);
  EXPECT_EQ(base_reward(0.1, cfg), 12.0);
  EXPECT_EQ(base_reward(0.2, cfg), 8.0);
  EXPECT_EQ(base_reward(0.5, cfg), 4.0);
  EXPECT_NEAR(base_reward(0.6, cfg), 1.6, kTol);
  EXPECT_EQ(base_reward(0.9, cfg), 1.0);
  EXPECT_EQ(base_reward(50.0, cfg), 1.0);
}

TEST(ProximityProperty, TierMonotone) {
  const RewardConfig cfg;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 20000; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    ASSERT_GE(base_reward(a, cfg), base_reward(b, cfg)) << a << " " << b;
  }
  // Each breakpoint and its neighbours.
  for (double bp : cfg.tier_breakpoints) {
    const double lo = std::nextafter(bp, 0.0), hi = std::nextafter(bp, 1.0);
    EXPECT_GE(base_reward(lo, cfg), base_reward(bp, cfg));
    EXPECT_GE(base_reward(bp, cfg), base_reward(hi, cfg));
  }
}

TEST(ProximityProperty, DirectionConsistency) {
  const RewardConfig cfg;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> target(0.1, 10.0);
  std::uniform_real_distribution<double> rel(0.0, 2.0);
  for (int i = 0; i < 20000; ++i) {
    const double t = target(rng), d = rel(rng);
    const double above = proximity_reward(t * (1 + d), t, kHigher, 1.0, cfg);
    const double below = proximity_reward(t * (1 - d), t, kHigher, 1.0, cfg);
    ASSERT_GE(above + kTol, below) << t << " " << d;
  }
}

TEST(TotalReward, Examples) {
  const RewardConfig cfg;
  const auto top = total_reward(10.0, true, true, 0.5, true, cfg);
  EXPECT_NEAR(top.total, 36.8, kTol);
  EXPECT_NEAR(top.novelty_bonus, 0.15, kTol);
  EXPECT_NEAR(top.validity_bonus, 0.25, kTol);
  EXPECT_NEAR(top.diversity_bonus, 0.10, kTol);

  const auto rest = total_reward(10.0, true, true, 0.5, false, cfg);
  EXPECT_NEAR(rest.total, 3.0, kTol);
  EXPECT_EQ(rest.novelty_bonus, 0.0);
  EXPECT_EQ(rest.validity_bonus, 0.0);
  EXPECT_EQ(rest.diversity_bonus, 0.0);

  EXPECT_NEAR(total_reward(0.0, false, false, 0.0, false, cfg).total, 0.1, kTol);
}

TEST(TotalReward, WeightedSumMode) {
  RewardConfig cfg;
  cfg.formula = RewardFormula::kWeightedSum;
  // 3*10 + 1.5 + 2.5 + 2*0.5
  EXPECT_NEAR(total_reward(10.0, true, true, 0.5, true, cfg).total, 35.0, kTol);
}

TEST(TotalRewardProperty, FloorAndTierOrder) {
  const RewardConfig cfg;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> r(0.0, 200.0);
  std::uniform_real_distribution<double> dv(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 20000; ++i) {
    const double rt = i % 10 == 0 ? 0.0 : r(rng);
    const double d = dv(rng);
    const bool v = coin(rng), n = coin(rng);
    const auto top = total_reward(rt, v, n, d, true, cfg);
    const auto rest = total_reward(rt, v, n, d, false, cfg);
    ASSERT_GE(top.total, cfg.reward_floor);
    ASSERT_GE(rest.total, cfg.reward_floor);
    ASSERT_LE(rest.total, top.total);
    ASSERT_EQ(rest.total, std::max(cfg.reward_floor, cfg.alpha_reduced * rt));
  }
}

TEST(Progress, Examples) {
  const RewardConfig cfg;
  EXPECT_NEAR(progress(2.0, 2.0, kHigher, cfg), 1.0, kTol);
  EXPECT_NEAR(progress(4.0, 2.0, kHigher, cfg), 2.0, kTol);
  EXPECT_NEAR(progress(1.0, 2.0, kHigher, cfg), 0.5, kTol);
  EXPECT_NEAR(progress(0.1, 2.0, kHigher, cfg), 0.1, kTol);
}

TEST(Progress, LowerModeAndGuards) {
  const RewardConfig cfg;
  EXPECT_NEAR(progress(1.0, 2.0, kLower, cfg), 1.5, kTol);
  EXPECT_NEAR(progress(4.0, 2.0, kLower, cfg), 0.5, kTol);
  EXPECT_NEAR(progress(0.0, -1.0, kLower, cfg), 0.1, kTol);
  EXPECT_TRUE(std::isfinite(progress(1.0, 0.0, kHigher, cfg)));
  EXPECT_NEAR(progress(-1.0, 0.0, kHigher, cfg), 0.1, kTol);
}

TEST(TopK, Examples) {
  const RewardConfig cfg;
  EXPECT_EQ(topk_count(32, 50, cfg), 16);
  EXPECT_EQ(topk_count(32, 150, cfg), 12);
  EXPECT_EQ(topk_count(4, 250, cfg), 3);
  EXPECT_EQ(topk_count(2, 0, cfg), 2);
  EXPECT_EQ(topk_count(30, 300, cfg), 9);
  EXPECT_THROW(topk_count(0, 0, cfg), Error);
}

TEST(Normalize, Examples) {
  const RewardConfig cfg;
  const std::vector<double> a = {150, 250};
  const auto na = normalize_rewards(a, cfg);
  EXPECT_NEAR(na[0], 10.0, kTol);
  EXPECT_NEAR(na[1], 30.0, kTol);
  const std::vector<double> b = {10, 20, 30};
  EXPECT_EQ(normalize_rewards(b, cfg), b);
  const std::vector<double> c = {0.05};
  EXPECT_EQ(normalize_rewards(c, cfg), std::vector<double>{0.1});
}

TEST(NormalizeProperty, RankPreservedAndFloored) {
  const RewardConfig cfg;
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> len(1, 40);
  std::uniform_real_distribution<double> r(0.0, 400.0);
  int triggered = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> xs(static_cast<std::size_t>(len(rng)));
    for (auto& x : xs) x = r(rng);
    const auto ys = normalize_rewards(xs, cfg);
    triggered += mean_of(xs) > 100 || stddev_of(xs) > 50;
    for (std::size_t a = 0; a < xs.size(); ++a) {
      ASSERT_GE(ys[a], cfg.reward_floor);
      for (std::size_t b = 0; b < xs.size(); ++b) {
        if (xs[a] < xs[b]) ASSERT_LE(ys[a], ys[b]);
      }
    }
  }
  EXPECT_GT(triggered, 1000);
}

TEST(Diversity, IdenticalBatchHasZeroBatchScore) {
  const RewardConfig cfg;
  const GenerationHistory h(cfg.history_size);
  const std::vector<std::string> batch(5, "C1=CC=CC=C1.Cu && pcu");
  for (const auto& d : diversity_scores(batch, h, cfg)) EXPECT_EQ(d.batch, 0.0);
}

TEST(Diversity, SingletonBatch) {
  const RewardConfig cfg;
  const GenerationHistory h(cfg.history_size);
  const std::vector<std::string> batch = {"CCO.Cu && pcu"};
  EXPECT_EQ(diversity_scores(batch, h, cfg)[0].batch, 1.0);
  EXPECT_THROW(diversity_scores(std::span<const std::string>{}, h, cfg), Error);
}

TEST(Diversity, UniqueNgrams) {
  const RewardConfig cfg;
  const GenerationHistory h(cfg.history_size);
  // Distinct characters everywhere, so every 4-gram occurs once.
  std::vector<std::string> batch;
  for (int i = 0; i < 10; ++i) {
    std::string s;
    for (int k = 0; k < 6; ++k) s += static_cast<char>('A' + i * 6 + k);
    batch.push_back(s);
  }
  for (const auto& d : diversity_scores(batch, h, cfg)) EXPECT_NEAR(d.ngram, 1.0, kTol);
}

TEST(Diversity, HistoryDuplicate) {
  const RewardConfig cfg;
  GenerationHistory h(cfg.history_size);
  h.add("CCO.Cu && pcu");
  const std::vector<std::string> batch = {"CCO.Cu && pcu", "CCN.Zn && dia"};
  const auto d = diversity_scores(batch, h, cfg);
  EXPECT_NEAR(d[0].history, 0.1, kTol);
  EXPECT_NEAR(d[1].history, 1.0, kTol);
}

TEST(Diversity, SignatureCount) {
  const RewardConfig cfg;
  GenerationHistory h(cfg.history_size);
  h.add("CCO.Cu && pcu");
  h.add("OCC.Cu && pcu");
  const std::vector<std::string> batch = {"COC.Cu && pcu"};
  EXPECT_NEAR(diversity_scores(batch, h, cfg)[0].history, 0.5, kTol);
}

TEST(Diversity, Composition) {
  EXPECT_NEAR(composition_score("CSNP.[Zn] && pcu"), 0.25, kTol);
  EXPECT_EQ(composition_score(""), 0.0);
}

TEST(Diversity, ApproxDistance) {
  EXPECT_EQ(approx_distance("abcd", "abcd"), 0.0);
  EXPECT_NEAR(approx_distance("abcd", "abxy"), 0.25, kTol);
  EXPECT_NEAR(approx_distance("ab", "abcd"), 0.25, kTol);
  EXPECT_EQ(approx_distance("", ""), 0.0);
  EXPECT_EQ(approx_distance("", "ab"), 1.0);
}

// Straightforward recomputation of the diversity score for one member.
double brute_diversity(std::size_t i, const std::vector<std::string>& batch,
                       const std::vector<std::string>& past, const RewardConfig& cfg) {
  const std::string& m = batch[i];
  double sb = 1.0;
  if (batch.size() > 1) {
    double sum = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      if (j == i) continue;
      const auto& o = batch[j];
      const double mx = static_cast<double>(std::max(m.size(), o.size()));
      const double mn = static_cast<double>(std::min(m.size(), o.size()));
      double mism = 0;
      for (std::size_t k = 0; k < std::min(m.size(), o.size()); ++k) mism += m[k] != o[k];
      sum += mx == 0 ? 0.0 : 0.5 * (mx - mn) / mx + 0.5 * (mn == 0 ? 1.0 : mism / mn);
    }
    sb = std::min(1.0, 2.0 * sum / static_cast<double>(batch.size() - 1));
  }
  double sn = 1.0;
  if (m.size() >= 4) {
    double tot = 0;
    int cnt = 0;
    for (std::size_t k = 0; k + 4 <= m.size(); ++k, ++cnt) {
      const std::string g = m.substr(k, 4);
      for (const auto& o : batch) {
        for (std::size_t q = 0; q + 4 <= o.size(); ++q) tot += o.compare(q, 4, g) == 0;
      }
    }
    sn = std::min(1.0, 1.0 / (tot / cnt / static_cast<double>(batch.size()) + cfg.eps));
  }
  double sh;
  if (std::find(past.begin(), past.end(), m) != past.end()) {
    sh = cfg.dup_penalty;
  } else {
    int c = 0;
    for (const auto& p : past) c += structure_signature(p) == structure_signature(m);
    sh = 1.0 / std::max(1, c);
  }
  const double sc = composition_score(m);
  return 0.30 * sb + 0.25 * sn + 0.35 * sh + 0.10 * sc;
}

TEST(DiversityProperty, MatchesBruteForceAndBounded) {
  const RewardConfig cfg;
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<int> bsize(1, 8);
  std::uniform_int_distribution<int> hsize(0, 6);
  std::bernoulli_distribution dup(0.3);
  int checked = 0;
  while (checked < 10000) {
    std::vector<std::string> past;
    GenerationHistory h(cfg.history_size);
    for (int k = hsize(rng); k > 0; --k) {
      past.push_back(normalize_mofid(testing::random_mofid(rng)));
      h.add(past.back());
    }
    std::vector<std::string> batch;
    for (int k = bsize(rng); k > 0; --k) {
      if (!batch.empty() && dup(rng)) {
        batch.push_back(batch.front());
      } else if (!past.empty() && dup(rng)) {
        batch.push_back(past.back());
      } else {
        batch.push_back(normalize_mofid(testing::random_mofid(rng)));
      }
    }
    const auto d = diversity_scores(batch, h, cfg);
    for (std::size_t i = 0; i < batch.size(); ++i, ++checked) {
      ASSERT_GE(d[i].total, 0.0);
      ASSERT_LE(d[i].total, 1.0);
      ASSERT_NEAR(d[i].total, brute_diversity(i, batch, past, cfg), 1e-12) << batch[i];
    }
  }
}

TEST(DiversityProperty, IdenticalBatchWithDuplicateHistory) {
  const RewardConfig cfg;
  std::mt19937_64 rng(16);
  for (int i = 0; i < 200; ++i) {
    const std::string s = normalize_mofid(testing::random_mofid(rng));
    GenerationHistory h(cfg.history_size);
    h.add(s);
    const std::vector<std::string> batch(6, s);
    for (const auto& d : diversity_scores(batch, h, cfg)) {
      EXPECT_EQ(d.batch, 0.0);
      EXPECT_NEAR(d.history, 0.1, kTol);
      EXPECT_LE(d.total, cfg.w_history * 0.1 + cfg.w_ngram * 1.0 + cfg.w_composition * 1.0 + kTol);
    }
  }
}

TEST(History, EvictsOldestFirst) {
  GenerationHistory h(3);
  for (const char* s : {"A && x", "B && x", "C && x", "D && x"}) h.add(s);
  EXPECT_EQ(h.size(), 3u);
  EXPECT_FALSE(h.contains("A && x"));
  EXPECT_TRUE(h.contains("B && x"));
  EXPECT_EQ(h.oldest(), "B && x");
}

std::vector<PropertyTarget> one_target(double t = 1.0) {
  return {PropertyTarget{"p", t, kHigher, 3.0}};
}

TEST(Memory, Examples) {
  const RewardConfig cfg;
  const auto targets = one_target();
  GlobalMemory mem(200);
  const std::vector<MemoryCandidate> one = {{"CCO.Cu && pcu", {0.5}, 1.0}};
  mem.update(one, targets, cfg);
  EXPECT_EQ(mem.size(), 1u);

  // Same MOFid with a lower score is ignored.
  const std::vector<MemoryCandidate> worse = {{"CCO.Cu  &&  pcu", {0.2}, 9.0}};
  mem.update(worse, targets, cfg);
  ASSERT_EQ(mem.size(), 1u);
  EXPECT_EQ(mem.entries()[0].properties, std::vector<double>{0.5});

  const std::vector<MemoryCandidate> better = {{"CCO.Cu && pcu", {0.9}, 2.0}};
  mem.update(better, targets, cfg);
  EXPECT_EQ(mem.entries()[0].properties, std::vector<double>{0.9});
}

TEST(Memory, KeepsTopByScore) {
  const RewardConfig cfg;
  const auto targets = one_target();
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<MemoryCandidate> cands;
  for (int i = 0; i < 250; ++i) cands.push_back({"C" + std::to_string(i) + " && pcu", {u(rng)}, 0.0});
  GlobalMemory mem(200);
  mem.update(cands, targets, cfg);
  ASSERT_EQ(mem.size(), 200u);
  std::vector<double> scores;
  for (const auto& c : cands) scores.push_back(target_score(c.properties, targets, cfg));
  std::sort(scores.rbegin(), scores.rend());
  for (std::size_t i = 0; i < 200; ++i) EXPECT_DOUBLE_EQ(mem.entries()[i].score, scores[i]);
}

TEST(Memory, Dump) {
  const RewardConfig cfg;
  GlobalMemory mem(5);
  const std::vector<MemoryCandidate> c = {{"CCO.Cu && pcu", {1.0}, 4.5}};
  mem.update(c, one_target(), cfg);
  std::ostringstream os;
  mem.dump(os);
  EXPECT_EQ(os.str(), "rank\tscore\treward\tmofid\n1\t3\t4.5\tCCO.Cu && pcu\n");
}

TEST(MemoryProperty, CapacityUniqueSortedMonotoneMin) {
  const RewardConfig cfg;
  const auto targets = one_target(2.0);
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<int> id(0, 400);
  std::uniform_int_distribution<int> n(1, 30);
  std::uniform_real_distribution<double> u(-1.0, 5.0);
  // Properties are a function of the id, as they would be for a fixed predictor.
  std::vector<double> prop(401);
  for (auto& p : prop) p = u(rng);
  int steps = 0;
  for (int trial = 0; trial < 40; ++trial) {
    GlobalMemory mem(50);
    double last_min = -1e300;
    for (int round = 0; round < 300; ++round, ++steps) {
      std::vector<MemoryCandidate> cands;
      for (int k = n(rng); k > 0; --k) {
        const int i = id(rng);
        cands.push_back({"C" + std::to_string(i) + " && pcu", {prop[static_cast<std::size_t>(i)]}, 0.0});
      }
      const bool was_full = mem.size() == mem.capacity();
      mem.update(cands, targets, cfg);
      const auto& e = mem.entries();
      ASSERT_LE(e.size(), 50u);
      std::set<std::string> seen;
      for (std::size_t k = 0; k < e.size(); ++k) {
        ASSERT_TRUE(seen.insert(e[k].mofid).second);
        if (k > 0) ASSERT_GE(e[k - 1].score, e[k].score);
      }
      if (was_full) ASSERT_GE(e.back().score, last_min);
      last_min = e.back().score;
    }
  }
  EXPECT_GE(steps, 10000);
}

TEST(ScoreBatch, TopKByTargetReward) {
  const RewardConfig cfg;
  const auto targets = one_target(1.0);
  GenerationHistory h(cfg.history_size);
  std::vector<ScoredCandidate> batch;
  for (int i = 0; i < 6; ++i) {
    batch.push_back({"CC" + std::string(static_cast<std::size_t>(i), 'O') + ".Cu && pcu",
                     {0.2 * i}, true, true});
  }
  const auto r = score_batch(batch, targets, 0, h, cfg);
  EXPECT_EQ(r.topk, 3);
  int in = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    in += r.breakdowns[i].in_topk;
    EXPECT_EQ(r.breakdowns[i].in_topk, i >= 3) << i;
    EXPECT_GE(r.final_rewards[i], 0.1);
  }
  EXPECT_EQ(in, 3);
}

TEST(ScoreBatch, TiesBreakByGapThenDropAtCut) {
  const RewardConfig cfg;
  const auto targets = one_target(1.0);
  GenerationHistory h(cfg.history_size);
  std::vector<ScoredCandidate> batch;
  // All in the flat tail tier, so target rewards tie; gaps differ for two.
  for (int i = 0; i < 8; ++i) batch.push_back({"C" + std::to_string(i) + " && pcu", {0.0}, true, true});
  batch[5].predicted = {0.1};
  batch[6].predicted = {0.15};
  const auto r = score_batch(batch, targets, 0, h, cfg);
  EXPECT_EQ(r.target_rewards[0], r.target_rewards[5]);
  // K = 4, but positions 3..8 are exact ties, so only the two closer ones get in.
  EXPECT_EQ(r.topk, 2);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(r.breakdowns[static_cast<std::size_t>(i)].in_topk, i == 5 || i == 6) << i;
}

TEST(ScoreBatchProperty, RewardsAboveFloor) {
  const RewardConfig cfg;
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<PropertyTarget> targets = {{"a", 1.5, kHigher, 3.0}, {"b", -2.0, kLower, 1.0}};
  GenerationHistory h(cfg.history_size);
  int n = 0;
  for (int round = 0; round < 400; ++round) {
    std::vector<ScoredCandidate> batch;
    for (int k = 0; k < 32; ++k) {
      batch.push_back({testing::random_mofid(rng), {u(rng), u(rng)}, coin(rng), coin(rng)});
    }
    const auto r = score_batch(batch, targets, round, h, cfg, coin(rng) ? 1.0 : 0.3);
    for (double x : r.final_rewards) {
      ASSERT_GE(x, cfg.reward_floor);
      ++n;
    }
    for (const auto& c : batch) h.add(c.mofid);
  }
  EXPECT_GE(n, 10000);
}

}  // namespace
}  // namespace mofrl
