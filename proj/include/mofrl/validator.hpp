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
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mofrl/elements.hpp"
#include "mofrl/error.hpp"
#include "mofrl/mofid.hpp"

namespace mofrl {

/// Small bundled subset of RCSR net codes seen in MOF databases.
inline std::set<std::string> default_topology_db() {
  return {"acs", "bcu", "bnn", "bor", "bto",   "cds",   "cdz",   "crs", "csq", "dia",
          "dia-c", "fcu", "flu", "fof", "fsc", "ftw",   "gar",   "hcb", "hms", "hxl",
          "kgd", "kgm", "lcs", "lon", "lvt", "mtn",   "nbo",   "nbo-d", "nia", "ocu",
          "pcu", "pcu-c", "pto", "pts", "pyr", "qtz", "rht",   "rtl",   "scu", "soc",
          "sod", "sql", "sra", "srs", "ssa", "ssb",   "stp",   "tbo",   "tfz-d", "the",
          "ths", "ums", "unc"};
}

/// One entry per non-blank, non-comment line.
inline std::set<std::string> load_symbol_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (!t.empty() && t.front() != '#') out.insert(t);
  }
  return out;
}

struct ValidatorConfig {
  std::set<std::string> metals = default_metal_symbols();
  std::set<std::string> topology_db = default_topology_db();
  int max_metal_components = 4;
  double min_organic_metal_ratio = 0.25;
  double max_organic_metal_ratio = 8.0;
  // Optional replacement for the built-in SMILES grammar check. Receives a
  // component with metals already substituted and the relaxed flag.
  std::function<bool(std::string_view, bool)> smiles_hook;
};

struct ValidityReport {
  bool is_valid = false;
  bool smiles_syntax = false;
  bool metal_present = false;
  bool structural_balance = false;
  bool topology_known = false;
  bool coordination_plausible = false;
  bool relaxed = false;

  std::map<std::string, bool> checks() const {
    return {{"smiles_syntax", smiles_syntax},
            {"metal_present", metal_present},
            {"structural_balance", structural_balance},
            {"topology_known", topology_known},
            {"coordination_plausible", coordination_plausible}};
  }
};

namespace detail {

struct BracketAtom {
  std::string element;  // as written, e.g. "Cu", "c", "se"
  bool ok = false;
};

// [isotope] symbol [chirality] [hcount] [charge] [:class]
inline BracketAtom parse_bracket_atom(std::string_view tok) {
  BracketAtom atom;
  if (tok.size() < 3 || tok.front() != '[' || tok.back() != ']') return atom;
  const std::string_view body = tok.substr(1, tok.size() - 2);
  std::size_t i = 0;
  const auto digit = [&](std::size_t k) {
    return k < body.size() && std::isdigit(static_cast<unsigned char>(body[k]));
  };
  while (digit(i)) ++i;
  if (i >= body.size()) return atom;

  if (body[i] == '*') {
    atom.element = "*";
    ++i;
  } else if (std::isupper(static_cast<unsigned char>(body[i]))) {
    // Prefer the two-letter symbol when it exists.
    if (i + 1 < body.size() && std::islower(static_cast<unsigned char>(body[i + 1])) &&
        is_element_symbol(body.substr(i, 2))) {
      atom.element = std::string(body.substr(i, 2));
      i += 2;
    } else if (is_element_symbol(body.substr(i, 1))) {
      atom.element = std::string(body.substr(i, 1));
      i += 1;
    } else {
      return atom;
    }
  } else if (std::islower(static_cast<unsigned char>(body[i]))) {
    if (i + 1 < body.size() && is_aromatic_symbol(body.substr(i, 2))) {
      atom.element = std::string(body.substr(i, 2));
      i += 2;
    } else if (is_aromatic_symbol(body.substr(i, 1))) {
      atom.element = std::string(body.substr(i, 1));
      i += 1;
    } else {
      return atom;
    }
  } else {
    return atom;
  }

  if (i < body.size() && body[i] == '@') {
    ++i;
    if (i < body.size() && body[i] == '@') ++i;
  }
  if (i < body.size() && body[i] == 'H') {
    ++i;
    while (digit(i)) ++i;
  }
  if (i < body.size() && (body[i] == '+' || body[i] == '-')) {
    const char sign = body[i];
    ++i;
    if (digit(i)) {
      while (digit(i)) ++i;
    } else {
      while (i < body.size() && body[i] == sign) ++i;
    }
  }
  if (i < body.size() && body[i] == ':') {
    ++i;
    if (!digit(i)) return atom;
    while (digit(i)) ++i;
  }
  atom.ok = i == body.size();
  return atom;
}

// Element symbol in canonical capitalisation ("c" -> "C", "se" -> "Se").
inline std::string element_of_symbol(std::string_view sym) {
  std::string e(sym);
  if (!e.empty()) e[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(e[0])));
  return e;
}

inline bool is_ring_token(std::string_view tok) {
  return (tok.size() == 1 && std::isdigit(static_cast<unsigned char>(tok[0]))) ||
         (tok.size() == 3 && tok[0] == '%');
}

inline bool is_bond_token(std::string_view tok) {
  return tok == "-" || tok == "=" || tok == "#" || tok == "$" || tok == ":" || tok == "/" ||
         tok == "\\" || tok == "~";
}

inline bool is_plain_atom_token(std::string_view tok) {
  return tok == "Cl" || tok == "Br" || tok == "*" ||
         (tok.size() == 1 && is_organic_atom_char(tok[0]));
}

}  // namespace detail

/// Elements of every atom in a single SMILES component (no dots).
inline std::vector<std::string> component_atoms(std::string_view component) {
  std::vector<std::string> atoms;
  for (const auto& tok : tokenize_smiles(component)) {
    if (tok.front() == '[') {
      const auto b = detail::parse_bracket_atom(tok);
      if (b.ok && b.element != "*") atoms.push_back(detail::element_of_symbol(b.element));
    } else if (tok != "*" && (detail::is_plain_atom_token(tok) || is_element_symbol(tok))) {
      atoms.push_back(detail::element_of_symbol(tok));
    }
  }
  return atoms;
}

/// Replaces every metal atom (bare segment or bracketed) with a carbon
/// placeholder so that the organic grammar applies.
inline std::string substitute_metals(std::string_view component, const std::set<std::string>& metals) {
  if (metals.count(std::string(component))) return "C";
  std::string out;
  for (const auto& tok : tokenize_smiles(component)) {
    if (tok.front() == '[') {
      const auto b = detail::parse_bracket_atom(tok);
      if (b.ok && metals.count(detail::element_of_symbol(b.element))) {
        out += "[C]";
        continue;
      }
    }
    out += tok;
  }
  return out;
}

/// Grammar check for one dot-free SMILES string. Relaxed mode skips ring
/// pairing and dangling-bond checks.
inline bool smiles_grammar_ok(std::string_view smiles, bool relaxed) {
  enum class Prev { kNone, kAtom, kBond, kOpen, kClose, kRing };
  Prev prev = Prev::kNone;
  int depth = 0;
  int atoms = 0;
  std::set<std::string> open_rings;

  for (const auto& tok : tokenize_smiles(smiles)) {
    if (tok.front() == '[') {
      if (!detail::parse_bracket_atom(tok).ok) return false;
      prev = Prev::kAtom;
      ++atoms;
    } else if (detail::is_plain_atom_token(tok)) {
      prev = Prev::kAtom;
      ++atoms;
    } else if (detail::is_bond_token(tok)) {
      if (prev == Prev::kNone || prev == Prev::kBond) return false;
      prev = Prev::kBond;
    } else if (tok == "(") {
      if (prev != Prev::kAtom && prev != Prev::kRing && prev != Prev::kClose) return false;
      ++depth;
      prev = Prev::kOpen;
    } else if (tok == ")") {
      if (depth == 0 || prev == Prev::kOpen) return false;
      if (prev == Prev::kBond && !relaxed) return false;
      --depth;
      prev = Prev::kClose;
    } else if (detail::is_ring_token(tok)) {
      if (prev != Prev::kAtom && prev != Prev::kRing && prev != Prev::kBond) return false;
      if (!open_rings.erase(tok)) open_rings.insert(tok);
      prev = Prev::kRing;
    } else {
      return false;
    }
  }
  if (atoms == 0 || depth != 0) return false;
  if (!relaxed) {
    if (prev == Prev::kBond) return false;
    if (!open_rings.empty()) return false;
  }
  return true;
}

inline bool is_metal_component(std::string_view component, const std::set<std::string>& metals) {
  for (const auto& e : component_atoms(component)) {
    if (metals.count(e)) return true;
  }
  return false;
}

inline bool is_organic_component(std::string_view component, const std::set<std::string>& metals) {
  bool carbon = false;
  for (const auto& e : component_atoms(component)) {
    if (metals.count(e)) return false;
    if (e == "C") carbon = true;
  }
  return carbon;
}

inline ValidityReport check_validity(const MofId& m, const ValidatorConfig& cfg, bool relaxed = false) {
  ValidityReport r;
  r.relaxed = relaxed;

  r.smiles_syntax = !m.smiles_components.empty();
  int metal_components = 0;
  int organic_components = 0;
  for (const auto& comp : m.smiles_components) {
    const std::string substituted = substitute_metals(comp, cfg.metals);
    const bool ok = cfg.smiles_hook ? cfg.smiles_hook(substituted, relaxed)
                                    : smiles_grammar_ok(substituted, relaxed);
    r.smiles_syntax = r.smiles_syntax && ok;
    if (is_metal_component(comp, cfg.metals)) {
      ++metal_components;
    } else if (is_organic_component(comp, cfg.metals)) {
      ++organic_components;
    }
  }
  r.metal_present = metal_components > 0;
  r.structural_balance = metal_components > 0 && organic_components > 0;

  r.topology_known = true;
  if (!cfg.topology_db.empty()) {
    for (const auto& code : tokenize_topology(m.topology)) {
      if (!cfg.topology_db.count(code)) r.topology_known = false;
    }
  }

  if (metal_components == 0) {
    r.coordination_plausible = false;
  } else {
    const double ratio = static_cast<double>(organic_components) / metal_components;
    r.coordination_plausible = metal_components <= cfg.max_metal_components &&
                               ratio >= cfg.min_organic_metal_ratio &&
                               ratio <= cfg.max_organic_metal_ratio;
  }

  r.is_valid = r.smiles_syntax && r.metal_present && r.structural_balance && r.topology_known &&
               r.coordination_plausible;
  return r;
}

/// Parses then validates; unparseable strings get an all-false report.
inline ValidityReport check_validity(std::string_view raw, const ValidatorConfig& cfg,
                                     bool relaxed = false) {
  try {
    return check_validity(parse_mofid(raw), cfg, relaxed);
  } catch (const Error&) {
    ValidityReport r;
    r.relaxed = relaxed;
    return r;
  }
}

/// Training-set membership after whitespace normalisation.
class NoveltyIndex {
 public:
  NoveltyIndex() = default;

  template <std::ranges::input_range R>
  explicit NoveltyIndex(const R& strings) {
    for (const auto& s : strings) add(std::string_view(s));
  }

  void add(std::string_view raw) {
    auto n = normalize_mofid(raw);
    if (known_.insert(n).second) ordered_.push_back(std::move(n));
  }

  bool contains(std::string_view raw) const { return known_.count(normalize_mofid(raw)) > 0; }
  std::size_t size() const { return known_.size(); }

  /// Entries in insertion order.
  const std::vector<std::string>& entries() const { return ordered_; }

 private:
  std::unordered_set<std::string> known_;
  std::vector<std::string> ordered_;
};

inline bool is_novel(std::string_view raw, const NoveltyIndex& idx) { return !idx.contains(raw); }

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

/// 1 - levenshtein / max length; 1 for two empty strings.
inline double similarity(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

/// Highest similarity between `raw` and any index entry (0 for an empty index).
inline double max_similarity(std::string_view raw, const NoveltyIndex& idx) {
  const std::string n = normalize_mofid(raw);
  double best = 0.0;
  for (const auto& e : idx.entries()) {
    // Length difference bounds the similarity from above.
    const std::size_t longest = std::max(n.size(), e.size());
    const std::size_t diff = n.size() > e.size() ? n.size() - e.size() : e.size() - n.size();
    if (longest > 0 && 1.0 - static_cast<double>(diff) / longest <= best) continue;
    best = std::max(best, similarity(n, e));
    if (best >= 1.0) break;
  }
  return best;
}

inline const std::vector<std::string>& functional_group_patterns() {
  static const std::vector<std::string> kPatterns = {
      "C(=O)O", "C(=O)[O-]", "C#N", "N(=O)=O", "OH", "NH2", "C#C", "F", "Cl", "Br"};
  return kPatterns;
}

struct Composition {
  std::set<std::string> elements;
  int functional_groups = 0;
};

/// Element set plus the number of functional-group pattern hits. A hit
/// followed by a lowercase letter is ignored, so `F` inside `Fe` and the
/// acid pattern inside an aryl ester do not count.
inline Composition extract_composition(const MofId& m) {
  Composition c;
  for (const auto& comp : m.smiles_components) {
    for (auto& e : component_atoms(comp)) c.elements.insert(std::move(e));
    for (const auto& pat : functional_group_patterns()) {
      std::size_t pos = 0;
      while ((pos = comp.find(pat, pos)) != std::string::npos) {
        const std::size_t end = pos + pat.size();
        const bool glued = end < comp.size() && std::islower(static_cast<unsigned char>(comp[end]));
        if (!glued) ++c.functional_groups;
        pos = end;
      }
    }
  }
  return c;
}

}  // namespace mofrl
