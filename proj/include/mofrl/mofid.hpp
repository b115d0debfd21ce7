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
#include <cctype>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <ranges>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mofrl/elements.hpp"
#include "mofrl/error.hpp"

namespace mofrl {

inline constexpr std::string_view kSeparator = "&&";

/// Default maximum encoded length, in tokens, including BOS and EOS.
inline constexpr int kDefaultMaxLen = 512;

inline std::string_view trim_view(std::string_view s) {
  const auto is_space = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

/// Parsed MOFid: `smiles.smiles... && topology[.catenation]`.
struct MofId {
  std::vector<std::string> smiles_components;
  std::string topology;
  std::optional<std::string> catenation;
  std::string raw;

  /// Canonical text form with exactly one space on each side of `&&`.
  std::string canonical() const {
    std::string out;
    for (std::size_t i = 0; i < smiles_components.size(); ++i) {
      if (i > 0) out += '.';
      out += smiles_components[i];
    }
    out += " && ";
    out += topology;
    if (catenation) {
      out += '.';
      out += *catenation;
    }
    return trim(out);
  }
};

/// Whitespace normalisation used for novelty lookups: trims the string and
/// sets the separator padding to a single space.
inline std::string normalize_mofid(std::string_view raw) {
  const std::string_view s = trim_view(raw);
  const auto sep = s.find(kSeparator);
  if (sep == std::string_view::npos) return std::string(s);
  std::string out(trim_view(s.substr(0, sep)));
  out += " && ";
  out += trim_view(s.substr(sep + kSeparator.size()));
  return trim(out);
}

inline std::vector<std::string_view> split_view(std::string_view s, char delim) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      break;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

inline MofId parse_mofid(std::string_view raw) {
  const std::string_view s = trim_view(raw);
  if (s.empty()) throw Error(ErrorCode::kEmptyInput, "empty MOFid string");

  MofId m;
  m.raw = std::string(raw);
  const auto sep = s.find(kSeparator);
  const std::string_view left = trim_view(s.substr(0, sep));
  const std::string_view right =
      sep == std::string_view::npos
          ? std::string_view{}
          : trim_view(s.substr(sep + kSeparator.size()));

  for (auto part : split_view(left, '.')) {
    part = trim_view(part);
    if (!part.empty()) m.smiles_components.emplace_back(part);
  }
  if (m.smiles_components.empty()) {
    throw Error(ErrorCode::kNoComponents,
                "no SMILES components before separator in '" + std::string(s) + "'");
  }

  const auto dot = right.find('.');
  if (dot == std::string_view::npos) {
    m.topology = std::string(right);
  } else {
    m.topology = std::string(trim_view(right.substr(0, dot)));
    m.catenation = std::string(trim_view(right.substr(dot + 1)));
  }
  return m;
}

namespace detail {

inline bool is_organic_atom_char(char c) {
  constexpr std::string_view kAtoms = "BCNOSPFIbcnosp";
  return kAtoms.find(c) != std::string_view::npos;
}

inline bool is_bond_or_branch_char(char c) {
  constexpr std::string_view kSymbols = "=#-+\\/().:@~*$";
  return kSymbols.find(c) != std::string_view::npos;
}

// Length of the token starting at `i` inside a dot-free SMILES segment.
inline std::size_t smiles_token_length(std::string_view s, std::size_t i) {
  const char c = s[i];
  const std::size_t rest = s.size() - i;
  if (c == '[') {
    const auto close = s.find(']', i + 1);
    return close == std::string_view::npos ? 1 : close - i + 1;
  }
  if (c == '%') {
    if (rest >= 3 && std::isdigit(static_cast<unsigned char>(s[i + 1])) &&
        std::isdigit(static_cast<unsigned char>(s[i + 2]))) {
      return 3;
    }
    return 1;
  }
  if (rest >= 2) {
    const auto two = s.substr(i, 2);
    if (two == "Cl" || two == "Br" || two == "@@") return 2;
  }
  return 1;
}

}  // namespace detail

/// Regex-style SMILES tokenizer: bracket atoms, Cl/Br, organic-subset atoms,
/// ring-closure digits and `%NN`, bond and branch symbols. A dot-delimited
/// segment that is a bare element symbol (e.g. the `Cu` node in
/// `...C(=O)O.Cu`) is one token. Anything else becomes a one-character token
/// that maps to UNK at encoding time.
inline std::vector<std::string> tokenize_smiles(std::string_view s) {
  std::vector<std::string> tokens;
  const auto segments = split_view(s, '.');
  for (std::size_t k = 0; k < segments.size(); ++k) {
    if (k > 0) tokens.emplace_back(".");
    const std::string_view seg = segments[k];
    if (seg.size() > 1 && is_element_symbol(seg)) {
      tokens.emplace_back(seg);
      continue;
    }
    std::size_t i = 0;
    while (i < seg.size()) {
      const std::size_t len = detail::smiles_token_length(seg, i);
      tokens.emplace_back(seg.substr(i, len));
      i += len;
    }
  }
  return tokens;
}

/// Topology codes split on commas; the catenation tag, if any, is appended.
inline std::vector<std::string> tokenize_topology(
    std::string_view topology, std::optional<std::string_view> catenation = std::nullopt) {
  std::vector<std::string> tokens;
  for (auto code : split_view(topology, ',')) {
    code = trim_view(code);
    if (!code.empty()) tokens.emplace_back(code);
  }
  if (catenation && !trim_view(*catenation).empty()) {
    tokens.emplace_back(trim_view(*catenation));
  }
  return tokens;
}

/// Full token stream of a MOFid without BOS/EOS. Unlike tokenize_topology,
/// the topology part keeps its `,` and `.` delimiters as tokens so that
/// decoding can rebuild the text.
inline std::vector<std::string> mofid_tokens(const MofId& m) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < m.smiles_components.size(); ++i) {
    if (i > 0) out.emplace_back(".");
    auto toks = tokenize_smiles(m.smiles_components[i]);
    out.insert(out.end(), std::make_move_iterator(toks.begin()),
               std::make_move_iterator(toks.end()));
  }
  out.emplace_back(kSeparator);
  bool first = true;
  for (auto code : split_view(m.topology, ',')) {
    code = trim_view(code);
    if (code.empty()) continue;
    if (!first) out.emplace_back(",");
    out.emplace_back(code);
    first = false;
  }
  if (m.catenation && !m.catenation->empty()) {
    out.emplace_back(".");
    out.push_back(*m.catenation);
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr std::string_view kBos = "[BOS]";
  static constexpr std::string_view kEos = "[EOS]";
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr int kNumSpecial = 5;
  static constexpr std::string_view kFileHeader = "#mofrl-vocab\tv1";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Builds from an ordered token list. Special tokens are always placed
  /// first; duplicates in `tokens` are ignored.
  explicit Vocabulary(const std::vector<std::string>& tokens) {
    for (auto sp : {kBos, kEos, kPad, kMask, kUnk}) add(std::string(sp));
    for (const auto& t : tokens) add(t);
  }

  std::size_t size() const { return id_to_token_.size(); }
  int bos() const { return 0; }
  int eos() const { return 1; }
  int pad() const { return 2; }
  int mask() const { return 3; }
  int unk() const { return 4; }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }

  bool contains(std::string_view token) const {
    return token_to_id_.find(std::string(token)) != token_to_id_.end();
  }

  /// Id of `token`, or the UNK id when absent.
  int id(std::string_view token) const {
    const auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? unk() : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
      throw Error(ErrorCode::kInvalidArgument, "token id out of range: " + std::to_string(id));
    }
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  void save(std::ostream& os) const {
    os << kFileHeader << '\n';
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
      os << i << '\t' << id_to_token_[i] << '\n';
    }
  }

  static Vocabulary load(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kFileHeader) {
      throw Error(ErrorCode::kFormatError, "missing vocabulary header");
    }
    std::vector<std::string> tokens;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw Error(ErrorCode::kFormatError, "malformed vocabulary line: " + line);
      }
      const auto id = std::stoul(line.substr(0, tab));
      if (id != tokens.size()) {
        throw Error(ErrorCode::kFormatError, "non-contiguous vocabulary id " + std::to_string(id));
      }
      tokens.push_back(line.substr(tab + 1));
    }
    if (tokens.size() < kNumSpecial || tokens[0] != kBos || tokens[1] != kEos ||
        tokens[2] != kPad || tokens[3] != kMask || tokens[4] != kUnk) {
      throw Error(ErrorCode::kFormatError, "vocabulary does not start with special tokens");
    }
    return Vocabulary(tokens);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  void add(const std::string& t) {
    if (token_to_id_.count(t)) return;
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// Vocabulary = specials, `&&`, reserved extras, then every distinct corpus
/// token in lexicographic order. Blank corpus lines are skipped.
template <std::ranges::input_range Corpus>
Vocabulary build_vocab(const Corpus& corpus, const std::vector<std::string>& reserved = {}) {
  std::set<std::string> seen;
  bool any = false;
  for (const auto& line : corpus) {
    const std::string_view text(line);
    if (trim_view(text).empty()) continue;
    any = true;
    for (auto& t : mofid_tokens(parse_mofid(text))) seen.insert(std::move(t));
  }
  if (!any) throw Error(ErrorCode::kEmptyCorpus, "cannot build a vocabulary from an empty corpus");

  std::vector<std::string> ordered;
  ordered.emplace_back(kSeparator);
  ordered.insert(ordered.end(), reserved.begin(), reserved.end());
  ordered.insert(ordered.end(), seen.begin(), seen.end());
  return Vocabulary(ordered);
}

/// Token ids plus attention mask. Padding, if any, is a suffix.
struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::uint8_t> attention_mask;
  int length = 0;  // non-PAD tokens

  /// The non-PAD prefix of ids.
  std::span<const int> active() const {
    return std::span<const int>(ids).first(static_cast<std::size_t>(length));
  }
};

/// Pads `ids` with PAD up to `pad_to` and fills in the mask.
inline TokenSeq make_token_seq(std::vector<int> ids, std::size_t pad_to, int pad_id) {
  TokenSeq seq;
  seq.length = static_cast<int>(ids.size());
  seq.attention_mask.assign(ids.size(), 1);
  if (pad_to > ids.size()) {
    seq.attention_mask.resize(pad_to, 0);
    ids.resize(pad_to, pad_id);
  }
  seq.ids = std::move(ids);
  return seq;
}

namespace detail {

inline std::vector<int> framed_ids(std::span<const std::string> tokens, const Vocabulary& vocab,
                                   int max_len) {
  if (max_len < 2) throw Error(ErrorCode::kInvalidArgument, "max_len must be at least 2");
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(vocab.bos());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(vocab.eos());
  if (ids.size() > static_cast<std::size_t>(max_len)) {
    ids.resize(static_cast<std::size_t>(max_len));
    ids.back() = vocab.eos();
  }
  return ids;
}

}  // namespace detail

/// BOS + tokens + EOS, truncated (last slot forced to EOS) or padded to max_len.
inline TokenSeq encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab,
                              int max_len = kDefaultMaxLen) {
  return make_token_seq(detail::framed_ids(tokens, vocab, max_len),
                        static_cast<std::size_t>(max_len), vocab.pad());
}

inline TokenSeq encode(const MofId& m, const Vocabulary& vocab, int max_len = kDefaultMaxLen) {
  const auto tokens = mofid_tokens(m);
  return encode_tokens(tokens, vocab, max_len);
}

/// Same framing as encode() but without padding.
inline TokenSeq encode_unpadded(const MofId& m, const Vocabulary& vocab,
                                int max_len = kDefaultMaxLen) {
  const auto tokens = mofid_tokens(m);
  return make_token_seq(detail::framed_ids(tokens, vocab, max_len), 0, vocab.pad());
}

/// Dynamic padding: every sequence padded to the longest one in the batch.
inline std::vector<TokenSeq> encode_batch(std::span<const MofId> batch, const Vocabulary& vocab,
                                          int max_len = kDefaultMaxLen) {
  std::vector<std::vector<int>> framed;
  std::size_t longest = 0;
  for (const auto& m : batch) {
    const auto tokens = mofid_tokens(m);
    framed.push_back(detail::framed_ids(tokens, vocab, max_len));
    longest = std::max(longest, framed.back().size());
  }
  std::vector<TokenSeq> out;
  out.reserve(framed.size());
  for (auto& ids : framed) out.push_back(make_token_seq(std::move(ids), longest, vocab.pad()));
  return out;
}

struct Decoded {
  std::string text;
  bool interior_pad = false;  // a PAD was followed by a real token
  bool has_unknown = false;   // at least one UNK was dropped
};

/// Concatenates non-special tokens up to the first EOS, with ` && ` around
/// the separator.
inline Decoded decode_ids(std::span<const int> ids, const Vocabulary& vocab) {
  Decoded out;
  bool saw_pad = false;
  for (const int id : ids) {
    if (id == vocab.eos()) break;
    if (id == vocab.pad()) {
      saw_pad = true;
      continue;
    }
    if (saw_pad) out.interior_pad = true;
    if (id == vocab.unk()) {
      out.has_unknown = true;
      continue;
    }
    if (vocab.is_special(id)) continue;
    const auto& tok = vocab.token(id);
    if (tok == kSeparator) {
      out.text += " && ";
    } else {
      out.text += tok;
    }
  }
  out.text = trim(out.text);
  return out;
}

inline Decoded decode(const TokenSeq& seq, const Vocabulary& vocab) {
  return decode_ids(seq.ids, vocab);
}

}  // namespace mofrl
