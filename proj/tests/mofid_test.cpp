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
#include <sstream>

#include "mofrl/mofid.hpp"
#include "test_util.hpp"

namespace mofrl {
namespace {

const char* kExample1 = "C1=CC(=CC=C1C(=O)O)C(=O)O.Cu && pcu";
const char* kExample2 = "c1cc(cc(c1)C(=O)O)N(=O)=O.c1cc(cc(c1)C(=O)O)C(=O)O.Cu && nbo-d";
const char* kExample3 = "C1=CC=C(C=C1)C#N.Zn && dia-c";

using Tokens = std::vector<std::string>;

TEST(ParseMofid, SplitsComponentsAndTopology) {
  const MofId m = parse_mofid(kExample1);
  EXPECT_EQ(m.smiles_components, (Tokens{"C1=CC(=CC=C1C(=O)O)C(=O)O", "Cu"}));
  EXPECT_EQ(m.topology, "pcu");
  EXPECT_FALSE(m.catenation.has_value());

  const MofId z = parse_mofid(kExample3);
  EXPECT_EQ(z.smiles_components, (Tokens{"C1=CC=C(C=C1)C#N", "Zn"}));
  EXPECT_EQ(z.topology, "dia-c");
}

TEST(ParseMofid, CatenationAfterFirstPeriod) {
  const MofId m = parse_mofid("[Zn][Zn].C&&nbo.cat0");
  EXPECT_EQ(m.topology, "nbo");
  ASSERT_TRUE(m.catenation.has_value());
  EXPECT_EQ(*m.catenation, "cat0");
  EXPECT_EQ(m.canonical(), "[Zn][Zn].C && nbo.cat0");
}

TEST(ParseMofid, Errors) {
  try {
    parse_mofid("");
    FAIL() << "expected EmptyInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
  try {
    parse_mofid("   && pcu");
    FAIL() << "expected NoComponents";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoComponents);
  }
}

TEST(TokenizeSmiles, GreedyPatternOrder) {
  EXPECT_EQ(tokenize_smiles("C1=CC"), (Tokens{"C", "1", "=", "C", "C"}));
  EXPECT_EQ(tokenize_smiles("Cl"), (Tokens{"Cl"}));
  EXPECT_EQ(tokenize_smiles("[Zn]"), (Tokens{"[Zn]"}));
  EXPECT_EQ(tokenize_smiles("C%12CC%12"), (Tokens{"C", "%12", "C", "C", "%12"}));
  EXPECT_EQ(tokenize_smiles("[C@@H]Br"), (Tokens{"[C@@H]", "Br"}));
}

TEST(TokenizeSmiles, BareElementSegment) {
  EXPECT_EQ(tokenize_smiles("C.Cu"), (Tokens{"C", ".", "Cu"}));
  // Inside an organic segment "Co" is carbon followed by aromatic oxygen.
  EXPECT_EQ(tokenize_smiles("Coc"), (Tokens{"C", "o", "c"}));
  EXPECT_EQ(tokenize_smiles("Co"), (Tokens{"Co"}));
}

TEST(TokenizeSmiles, UnknownCharactersBecomeSingleTokens) {
  EXPECT_EQ(tokenize_smiles("CuC"), (Tokens{"C", "u", "C"}));
  EXPECT_EQ(tokenize_smiles("C[Zn"), (Tokens{"C", "[", "Z", "n"}));
}

TEST(TokenizeSmiles, NoTokenIsPrefixOfALongerMatch) {
  const Tokens longer = {"Cl", "Br", "@@"};
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const MofId m = parse_mofid(testing::random_mofid(rng));
    for (const auto& comp : m.smiles_components) {
      const auto toks = tokenize_smiles(comp);
      std::size_t pos = 0;
      for (const auto& t : toks) {
        ASSERT_EQ(comp.compare(pos, t.size(), t), 0);
        for (const auto& l : longer) {
          if (l.size() > t.size() && l.compare(0, t.size(), t) == 0) {
            EXPECT_NE(comp.compare(pos, l.size(), l), 0) << comp << " at " << pos;
          }
        }
        if (t == "[") EXPECT_EQ(comp.find(']', pos), std::string::npos);
        pos += t.size();
      }
      EXPECT_EQ(pos, comp.size());
    }
  }
}

TEST(TokenizeTopology, CodesAndCatenation) {
  EXPECT_EQ(tokenize_topology("pcu"), (Tokens{"pcu"}));
  EXPECT_EQ(tokenize_topology("nbo-d"), (Tokens{"nbo-d"}));
  EXPECT_EQ(tokenize_topology("pcu", "cat0"), (Tokens{"pcu", "cat0"}));
  EXPECT_EQ(tokenize_topology("fcu,pcu"), (Tokens{"fcu", "pcu"}));
}

TEST(BuildVocab, SpecialsThenSeparatorThenSorted) {
  const std::vector<std::string> corpus = {"C.Cu && pcu"};
  const Vocabulary v = build_vocab(corpus);
  EXPECT_EQ(v.size(), 10u);
  for (const auto* t : {"[BOS]", "[EOS]", "[PAD]", "[MASK]", "[UNK]", "&&", "C", ".", "Cu", "pcu"}) {
    EXPECT_TRUE(v.contains(t)) << t;
  }
  EXPECT_EQ(v.token(5), "&&");
  EXPECT_EQ(build_vocab(corpus), v);
  EXPECT_TRUE(v.is_special(v.pad()));
}

TEST(BuildVocab, EmptyCorpus) {
  const std::vector<std::string> corpus;
  try {
    build_vocab(corpus);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyCorpus);
  }
}

TEST(BuildVocab, SaveLoadRoundTrip) {
  const std::vector<std::string> corpus = {kExample1, kExample2, kExample3};
  const Vocabulary v = build_vocab(corpus, {"[Cu]"});
  std::stringstream ss;
  v.save(ss);
  EXPECT_EQ(Vocabulary::load(ss), v);
  std::stringstream bad("0\t[BOS]\n");
  EXPECT_THROW(Vocabulary::load(bad), Error);
}

TEST(Encode, PaddingArithmetic) {
  const Vocabulary v = build_vocab(std::vector<std::string>{"C.Cu && pcu"});
  const Tokens stream = {"C", "C", "C", ".", "Cu", "&&", "pcu"};
  const TokenSeq s = encode_tokens(stream, v, 12);
  ASSERT_EQ(s.ids.size(), 12u);
  EXPECT_EQ(s.length, 9);
  int mask_sum = 0;
  for (auto m : s.attention_mask) mask_sum += m;
  EXPECT_EQ(mask_sum, 9);
  for (int i = 9; i < 12; ++i) EXPECT_EQ(s.ids[i], v.pad());
}

TEST(Encode, TruncationEndsWithEos) {
  const Vocabulary v = build_vocab(std::vector<std::string>{"C.Cu && pcu"});
  const Tokens stream(598, "C");
  const TokenSeq s = encode_tokens(stream, v, 512);
  ASSERT_EQ(s.ids.size(), 512u);
  EXPECT_EQ(s.ids[0], v.bos());
  EXPECT_EQ(s.ids[511], v.eos());
  EXPECT_EQ(s.length, 512);
}

TEST(Encode, TableExamplesRoundTrip) {
  const std::vector<std::string> corpus = {kExample1, kExample2, kExample3};
  const Vocabulary v = build_vocab(corpus);
  for (const auto& s : corpus) {
    const Decoded d = decode(encode(parse_mofid(s), v), v);
    EXPECT_EQ(d.text, s);
    EXPECT_FALSE(d.interior_pad);
    EXPECT_FALSE(d.has_unknown);
  }
}

TEST(Encode, DynamicBatchPadding) {
  const std::vector<std::string> corpus = {kExample1, kExample3};
  const Vocabulary v = build_vocab(corpus);
  const std::vector<MofId> batch = {parse_mofid(kExample1), parse_mofid(kExample3)};
  const auto seqs = encode_batch(batch, v);
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].ids.size(), seqs[1].ids.size());
  EXPECT_EQ(seqs[0].ids.size(), static_cast<std::size_t>(std::max(seqs[0].length, seqs[1].length)));
}

TEST(Decode, EdgeCases) {
  const Vocabulary v = build_vocab(std::vector<std::string>{"C.Cu && pcu"});
  EXPECT_EQ(decode_ids(std::vector<int>{v.bos(), v.eos()}, v).text, "");
  const int c = v.id("C");
  const Decoded d = decode_ids(std::vector<int>{v.bos(), c, v.pad(), c, v.eos()}, v);
  EXPECT_EQ(d.text, "CC");
  EXPECT_TRUE(d.interior_pad);
  const Decoded u = decode_ids(std::vector<int>{v.bos(), c, v.unk(), v.eos()}, v);
  EXPECT_TRUE(u.has_unknown);
}

TEST(Encode, PropertyRoundTripAndFraming) {
  std::mt19937_64 rng(42);
  std::vector<std::string> corpus;
  for (int i = 0; i < 500; ++i) corpus.push_back(testing::random_mofid(rng));
  const Vocabulary v = build_vocab(corpus);
  for (const auto& s : corpus) {
    const MofId m = parse_mofid(s);
    const TokenSeq seq = encode(m, v, 128);
    EXPECT_EQ(decode(seq, v).text, m.canonical());
    EXPECT_EQ(decode(seq, v).text, normalize_mofid(s));

    int bos = 0, eos = 0;
    bool in_pad = false;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      const bool is_pad = seq.ids[i] == v.pad();
      EXPECT_EQ(seq.attention_mask[i], is_pad ? 0 : 1);
      if (is_pad) in_pad = true;
      EXPECT_FALSE(in_pad && !is_pad) << "padding must be a suffix";
      bos += seq.ids[i] == v.bos();
      eos += seq.ids[i] == v.eos();
    }
    EXPECT_EQ(seq.ids[0], v.bos());
    EXPECT_EQ(seq.ids[static_cast<std::size_t>(seq.length) - 1], v.eos());
    EXPECT_EQ(bos, 1);
    EXPECT_EQ(eos, 1);
  }
}

TEST(NormalizeMofid, SeparatorSpacing) {
  EXPECT_EQ(normalize_mofid("  C.Cu&&pcu "), "C.Cu && pcu");
  EXPECT_EQ(normalize_mofid("C.Cu   &&   pcu"), "C.Cu && pcu");
  EXPECT_EQ(normalize_mofid("C.Cu"), "C.Cu");
}

}  // namespace
}  // namespace mofrl
