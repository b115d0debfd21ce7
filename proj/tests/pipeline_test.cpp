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

#include "mofrl/dataset.hpp"
#include "mofrl/pipeline.hpp"

namespace mofrl {
namespace {

class ConstantPredictor final : public PropertyPredictor {
 public:
  explicit ConstantPredictor(double v) : v_(v) {}
  std::vector<double> predict(const TokenSeq&, std::string_view) const override { return {v_}; }
  int n_properties() const override { return 1; }

 private:
  double v_;
};

const std::vector<PropertyTarget> kHigh = {{"p", 2.0, OptimizationMode::kHigher, 3.0}};
const std::vector<PropertyTarget> kLow = {{"p", 2.0, OptimizationMode::kLower, 3.0}};

TEST(FilterPath, ThresholdBoundary) {
  EXPECT_EQ(rl_filter_path({0.79 * 2.0}, kHigh, 0.8), FilterPath::kStrict);
  EXPECT_EQ(rl_filter_path({0.80 * 2.0}, kHigh, 0.8), FilterPath::kRelaxed);
  EXPECT_EQ(rl_filter_path({3.0}, kHigh, 0.8), FilterPath::kRelaxed);
  EXPECT_EQ(rl_filter_path({2.0 / 0.8}, kLow, 0.8), FilterPath::kRelaxed);
  EXPECT_EQ(rl_filter_path({2.6}, kLow, 0.8), FilterPath::kStrict);
  EXPECT_EQ(rl_filter_path({1.0}, kLow, 0.8), FilterPath::kRelaxed);
}

TEST(PassesFilter, DuplicatesRejectedOnBothPaths) {
  const NoveltyIndex idx(std::vector<std::string>{"C1=CC(=CC=C1C(=O)O)C(=O)O.Cu && pcu"});
  const ValidatorConfig v;
  for (auto path : {FilterPath::kStrict, FilterPath::kRelaxed}) {
    EXPECT_FALSE(passes_filter("C1=CC(=CC=C1C(=O)O)C(=O)O.Cu  &&  pcu", path, idx, v, 0.85)) << int(path);
  }
}

TEST(PassesFilter, SimilarityOnlyBlocksStrict) {
  const NoveltyIndex idx(std::vector<std::string>{"C1=CC(=CC=C1C(=O)O)C(=O)O.Cu && pcu"});
  const ValidatorConfig v;
  const std::string near = "C1=CC(=CC=C1C(=O)O)C(=O)O.Zn && pcu";
  ASSERT_GT(max_similarity(near, idx), 0.85);
  bool novel = true;
  EXPECT_FALSE(passes_filter(near, FilterPath::kStrict, idx, v, 0.85, nullptr, &novel));
  EXPECT_FALSE(novel);
  EXPECT_TRUE(passes_filter(near, FilterPath::kRelaxed, idx, v, 0.85, nullptr, &novel));
  EXPECT_TRUE(novel);
  const std::string far = "c1cnccn1.Zn && dia";
  EXPECT_TRUE(passes_filter(far, FilterPath::kStrict, idx, v, 0.85));
}

TEST(PassesFilter, RelaxedGrammar) {
  const NoveltyIndex idx;
  const ValidatorConfig v;
  EXPECT_FALSE(passes_filter("C1CC.Cu && pcu", FilterPath::kStrict, idx, v, 0.85));
  EXPECT_TRUE(passes_filter("C1CC.Cu && pcu", FilterPath::kRelaxed, idx, v, 0.85));
}

struct Setup {
  std::vector<std::string> corpus;
  Vocabulary vocab;
  Transformer model;
};

Setup setup() {
  Setup s;
  s.corpus = synth_corpus(80, 3);
  s.vocab = build_vocab(s.corpus);
  ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 32;
  mc.n_heads = 2;
  mc.d_ff = 64;
  mc.max_len = 80;
  mc.vocab_size = static_cast<int>(s.vocab.size());
  s.model = Transformer(mc, 4);
  std::vector<TokenSeq> seqs;
  for (const auto& t : s.corpus) seqs.push_back(encode_unpadded(parse_mofid(t), s.vocab, 80));
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_steps = 120;
  tc.lr = 5e-3;
  run_pretrain(s.model, seqs, tc);
  return s;
}

// Emits EOS straight after BOS, so every sample decodes to "".
Transformer eos_model(const ModelConfig& mc) {
  ModelParams p = ModelParams::zeros(mc);
  p.lnf_b.setOnes();
  p.lm_head.col(1).setConstant(10.0);
  return Transformer(mc, std::move(p));
}

TEST(PipelineFinetuned, CapZeroAndInvalidModel) {
  const auto s = setup();
  const NoveltyIndex idx(s.corpus);
  const ConstantPredictor pred(1.0);
  SamplingConfig cfg;
  cfg.max_len = 80;
  auto r = pipeline_finetuned(s.model, pred, s.vocab, cfg, idx, ValidatorConfig{}, 5, 0);
  EXPECT_TRUE(r.accepted.empty());
  EXPECT_EQ(r.attempts, 0);
  EXPECT_TRUE(r.cap_exceeded);

  r = pipeline_finetuned(eos_model(s.model.config()), pred, s.vocab, cfg, idx, ValidatorConfig{}, 3);
  EXPECT_TRUE(r.accepted.empty());
  EXPECT_EQ(r.attempts, 150);
  EXPECT_TRUE(r.cap_exceeded);
  for (const auto& g : r.generated) EXPECT_EQ(g.mofid, "");
}

TEST(PipelineFinetuned, SurvivorsAreValidAndNovel) {
  const auto s = setup();
  const NoveltyIndex idx(s.corpus);
  const ConstantPredictor pred(1.0);
  SamplingConfig cfg;
  cfg.max_len = 80;
  cfg.seed = 5;
  const auto r = pipeline_finetuned(s.model, pred, s.vocab, cfg, idx, ValidatorConfig{}, 5);
  EXPECT_FALSE(r.accepted.empty());
  for (const auto& a : r.accepted) {
    EXPECT_TRUE(a.report.is_valid) << a.mofid;
    EXPECT_TRUE(is_novel(a.mofid, idx)) << a.mofid;
    EXPECT_EQ(a.predicted, std::vector<double>{1.0});
  }
  EXPECT_EQ(r.generated.size(), static_cast<std::size_t>(r.attempts));
  const auto again = pipeline_finetuned(s.model, pred, s.vocab, cfg, idx, ValidatorConfig{}, 5);
  ASSERT_EQ(again.accepted.size(), r.accepted.size());
  for (std::size_t i = 0; i < r.accepted.size(); ++i) EXPECT_EQ(again.accepted[i].mofid, r.accepted[i].mofid);
}

TEST(PipelineRl, SortedAndFilterConsistent) {
  const auto s = setup();
  const NoveltyIndex idx(s.corpus);
  const ElementFractionPredictor pred(s.vocab, "Cu");
  SamplingConfig cfg = SamplingConfig::rl();
  cfg.max_len = 80;
  const std::vector<PropertyTarget> targets = {{"cu", 0.05, OptimizationMode::kHigher, 3.0}};
  const auto r = pipeline_rl(s.model, pred, s.vocab, cfg, RewardConfig{}, targets, idx, ValidatorConfig{}, 8);
  ASSERT_FALSE(r.accepted.empty());
  for (std::size_t i = 0; i < r.accepted.size(); ++i) {
    const auto& a = r.accepted[i];
    if (i > 0) EXPECT_GE(r.accepted[i - 1].reward.total, a.reward.total);
    EXPECT_EQ(a.path, rl_filter_path(a.predicted, targets, 0.8));
    EXPECT_TRUE(passes_filter(a.mofid, a.path, idx, ValidatorConfig{}, 0.85));
    EXPECT_GE(a.reward.total, 0.1);
  }
  for (const auto& g : r.generated) {
    if (!g.accepted) continue;
    EXPECT_FALSE(idx.contains(g.mofid));
  }
  const nlohmann::json j = r.accepted.front();
  EXPECT_TRUE(j.contains("reward"));
  EXPECT_TRUE(j["checks"].contains("smiles_syntax"));
}

}  // namespace
}  // namespace mofrl
