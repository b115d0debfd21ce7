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

#include <random>

#include "mofrl/validator.hpp"
#include "test_util.hpp"

namespace mofrl {
namespace {

const char* kExample1 = "C1=CC(=CC=C1C(=O)O)C(=O)O.Cu && pcu";
const char* kExample2 = "c1cc(cc(c1)C(=O)O)N(=O)=O.c1cc(cc(c1)C(=O)O)C(=O)O.Cu && nbo-d";
const char* kExample3 = "C1=CC=C(C=C1)C#N.Zn && dia-c";

TEST(CheckValidity, TableExamplesPass) {
  const ValidatorConfig cfg;
  for (const auto* s : {kExample1, kExample2, kExample3}) {
    const auto r = check_validity(parse_mofid(s), cfg);
    EXPECT_TRUE(r.is_valid) << s;
    for (const auto& [name, ok] : r.checks()) EXPECT_TRUE(ok) << s << " " << name;
  }
}

TEST(CheckValidity, NoMetal) {
  const auto r = check_validity(parse_mofid("CCO"), ValidatorConfig{});
  EXPECT_FALSE(r.metal_present);
  EXPECT_FALSE(r.is_valid);
}

TEST(CheckValidity, UnclosedRingStrictVersusRelaxed) {
  const ValidatorConfig cfg;
  const MofId m = parse_mofid("C1CC.Cu && pcu");
  EXPECT_FALSE(check_validity(m, cfg, false).smiles_syntax);
  const auto relaxed = check_validity(m, cfg, true);
  EXPECT_TRUE(relaxed.smiles_syntax);
  EXPECT_TRUE(relaxed.relaxed);
  EXPECT_TRUE(relaxed.is_valid);
}

TEST(CheckValidity, TopologyDatabase) {
  ValidatorConfig cfg;
  EXPECT_FALSE(check_validity(parse_mofid("CC(=O)O.[Cu][Cu] && xyz"), cfg).topology_known);
  EXPECT_TRUE(check_validity(parse_mofid("CC(=O)O.[Cu][Cu] && fcu,pcu"), cfg).topology_known);
  EXPECT_TRUE(check_validity(parse_mofid("CC(=O)O.[Cu][Cu]"), cfg).topology_known);
  cfg.topology_db.clear();
  EXPECT_TRUE(check_validity(parse_mofid("CC(=O)O.[Cu][Cu] && xyz"), cfg).topology_known);
}

TEST(CheckValidity, CoordinationWindow) {
  const ValidatorConfig cfg;
  // Five metal components exceed the cap of four.
  EXPECT_FALSE(check_validity(parse_mofid("CC(=O)O.CC(=O)O.Cu.Zn.Co.Ni.Fe && pcu"), cfg)
                   .coordination_plausible);
  // Nine organics per metal is above the 8:1 ratio.
  std::string many;
  for (int i = 0; i < 9; ++i) many += "CC(=O)O.";
  EXPECT_FALSE(check_validity(parse_mofid(many + "Cu && pcu"), cfg).coordination_plausible);
  EXPECT_TRUE(check_validity(parse_mofid("CC(=O)O.[Zn]O[Zn] && pcu"), cfg).coordination_plausible);
}

TEST(CheckValidity, GrammarRejections) {
  EXPECT_FALSE(smiles_grammar_ok("C(C", false));
  EXPECT_FALSE(smiles_grammar_ok("C)C", false));
  EXPECT_FALSE(smiles_grammar_ok("C()C", false));
  EXPECT_FALSE(smiles_grammar_ok("C==C", false));
  EXPECT_FALSE(smiles_grammar_ok("C=", false));
  EXPECT_TRUE(smiles_grammar_ok("C=", true));
  EXPECT_FALSE(smiles_grammar_ok("[Xx]C", true));
  EXPECT_FALSE(smiles_grammar_ok("Cu", true));
  EXPECT_TRUE(smiles_grammar_ok("[NH4+]", false));
  EXPECT_TRUE(smiles_grammar_ok("[13CH3:2]C", false));
  EXPECT_TRUE(smiles_grammar_ok("c1ccccc1", false));
  EXPECT_FALSE(smiles_grammar_ok("", true));
}

TEST(CheckValidity, SubstitutesMetalsBeforeGrammar) {
  const ValidatorConfig cfg;
  EXPECT_EQ(substitute_metals("[Cu+2]", cfg.metals), "[C]");
  EXPECT_EQ(substitute_metals("Zn", cfg.metals), "C");
  EXPECT_EQ(substitute_metals("[O-]C(=O)[Zn]", cfg.metals), "[O-]C(=O)[C]");
}

TEST(CheckValidity, PluggableHook) {
  ValidatorConfig cfg;
  cfg.smiles_hook = [](std::string_view, bool) { return false; };
  EXPECT_FALSE(check_validity(parse_mofid(kExample1), cfg).smiles_syntax);
}

TEST(CheckValidity, RelaxationIsMonotone) {
  const ValidatorConfig cfg;
  std::mt19937_64 rng(3);
  int strict_valid = 0;
  for (int i = 0; i < 3000; ++i) {
    const MofId m = parse_mofid(testing::random_mofid(rng));
    const auto strict = check_validity(m, cfg, false);
    const auto relaxed = check_validity(m, cfg, true);
    strict_valid += strict.is_valid;
    if (strict.is_valid) EXPECT_TRUE(relaxed.is_valid) << m.raw;
    EXPECT_EQ(strict.metal_present, relaxed.metal_present);
    EXPECT_EQ(strict.structural_balance, relaxed.structural_balance);
    const auto again = check_validity(m, cfg, false);
    EXPECT_EQ(again.checks(), strict.checks());
  }
  EXPECT_GT(strict_valid, 0);
}

TEST(Novelty, NormalisedMembership) {
  NoveltyIndex idx(std::vector<std::string>{kExample1});
  EXPECT_FALSE(is_novel(kExample1, idx));
  EXPECT_FALSE(is_novel("C1=CC(=CC=C1C(=O)O)C(=O)O.Cu  &&  pcu", idx));
  EXPECT_TRUE(is_novel(kExample3, idx));
  idx.add(kExample3);
  EXPECT_FALSE(is_novel(kExample3, idx));
  EXPECT_TRUE(is_novel(kExample2, idx));
}

TEST(Similarity, Examples) {
  EXPECT_DOUBLE_EQ(similarity("abc", "abc"), 1.0);
  EXPECT_DOUBLE_EQ(similarity("abcd", "abce"), 0.75);
  EXPECT_DOUBLE_EQ(similarity("a", ""), 0.0);
  EXPECT_DOUBLE_EQ(similarity("", ""), 1.0);
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
}

TEST(Similarity, SymmetricIdentityAndTriangle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(0, 12);
  std::uniform_int_distribution<int> ch(0, 3);
  const auto rand_str = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += static_cast<char>('a' + ch(rng));
    return s;
  };
  for (int i = 0; i < 5000; ++i) {
    const std::string a = rand_str(len(rng)), b = rand_str(len(rng));
    EXPECT_DOUBLE_EQ(similarity(a, b), similarity(b, a));
    EXPECT_EQ(similarity(a, b) == 1.0, a == b);
    const int n = len(rng);
    const std::string x = rand_str(n), y = rand_str(n), z = rand_str(n);
    EXPECT_LE(1.0 - similarity(x, z), (1.0 - similarity(x, y)) + (1.0 - similarity(y, z)) + 1e-12);
  }
}

TEST(Similarity, MaxOverIndex) {
  const NoveltyIndex idx(std::vector<std::string>{"abcd && pcu", "xyz && dia"});
  EXPECT_DOUBLE_EQ(max_similarity("abcd && pcu", idx), 1.0);
  EXPECT_NEAR(max_similarity("abce && pcu", idx), 1.0 - 1.0 / 11.0, 1e-12);
  EXPECT_DOUBLE_EQ(max_similarity("abc", NoveltyIndex{}), 0.0);
}

TEST(Composition, Examples) {
  const auto c1 = extract_composition(parse_mofid(kExample1));
  EXPECT_EQ(c1.elements, (std::set<std::string>{"C", "O", "Cu"}));
  EXPECT_EQ(c1.functional_groups, 2);

  const auto cu = extract_composition(parse_mofid("Cu"));
  EXPECT_EQ(cu.elements, (std::set<std::string>{"Cu"}));
  EXPECT_EQ(cu.functional_groups, 0);

  const auto c3 = extract_composition(parse_mofid(kExample3));
  EXPECT_EQ(c3.elements, (std::set<std::string>{"C", "N", "Zn"}));
  EXPECT_EQ(c3.functional_groups, 1);

  const auto fe = extract_composition(parse_mofid("FC(F)F.[Fe] && pcu"));
  EXPECT_EQ(fe.functional_groups, 3);
  EXPECT_EQ(fe.elements, (std::set<std::string>{"C", "F", "Fe"}));
}

}  // namespace
}  // namespace mofrl
