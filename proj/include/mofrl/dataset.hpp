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

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mofrl/error.hpp"
#include "mofrl/mofid.hpp"
#include "mofrl/reward.hpp"
#include "mofrl/sampler.hpp"
#include "mofrl/training.hpp"
#include "mofrl/validator.hpp"

namespace mofrl {

// ---------------------------------------------------------------------------
// Synthetic corpus

inline const std::vector<std::string>& linker_templates() {
  static const std::vector<std::string> k = {
      "C1=CC(=CC=C1C(=O)O)C(=O)O",
      "c1cc(cc(c1)C(=O)O)C(=O)O",
      "OC(=O)c1ccc(cc1)c1ccc(cc1)C(=O)O",
      "OC(=O)C=CC(=O)O",
      "c1cnccn1",
      "C1=CC=C(C=C1)C#N",
      "OC(=O)C#CC(=O)O",
      "c1cc(ccn1)c1ccncc1",
      "Nc1cc(ccc1C(=O)O)C(=O)O",
      "OC(=O)c1cc(cc(c1)C(=O)O)C(=O)O",
      "Cc1ncc[nH]1",
      "[O-]C(=O)c1ccc(cc1)C(=O)[O-]",
      "OC(=O)c1ccc(F)cc1",
      "OCC(O)CO",
  };
  return k;
}

inline const std::vector<std::string>& synth_metals() {
  static const std::vector<std::string> k = {"Cu", "Zn", "Co", "Zr", "Fe", "Ni", "Mn", "Mg", "Cd", "Al"};
  return k;
}

inline const std::vector<std::string>& synth_topologies() {
  static const std::vector<std::string> k = {"pcu", "dia", "nbo", "fcu", "srs", "bcu", "sql",
                                             "hcb", "tbo", "pts", "dia-c", "nbo-d", "sod", "rht"};
  return k;
}

/// Linkers, a metal and a topology drawn from fixed lists; every string is
/// strictly valid under the default validator.
inline std::vector<std::string> synth_corpus(int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "synth_corpus needs n >= 1");
  const auto& linkers = linker_templates();
  const auto& metals = synth_metals();
  const auto& topos = synth_topologies();
  const ValidatorConfig vcfg;
  Rng rng(seed);
  const auto pick = [&](std::size_t size) { return static_cast<std::size_t>(rng() % size); };
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(out.size()) < n) {
    std::string s = linkers[pick(linkers.size())];
    if (rng() % 3 == 0) s += "." + linkers[pick(linkers.size())];
    s += "." + metals[pick(metals.size())];
    s += " && " + topos[pick(topos.size())];
    if (rng() % 4 == 0) s += ".cat" + std::to_string(rng() % 2);
    if (check_validity(s, vcfg).is_valid) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fingerprints

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIoError, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Property datasets

struct IngestSchema {
  std::string mofid_column = "mofid";
  std::vector<std::string> property_columns;  // empty: every other column
  char delimiter = ',';
  std::uint64_t seed = 0;
};

struct PropertyDataset {
  std::vector<std::string> property_names;
  std::vector<std::string> mofids;
  std::vector<std::vector<double>> values;
  int duplicates_dropped = 0;
  Split split;

  std::size_t size() const { return mofids.size(); }
};

/// Splits one delimited line. Fields may be double-quoted with "" escapes.
inline std::vector<std::string> split_delimited(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorCode::kFormatError, "unterminated quote");
  out.push_back(trim(cur));
  return out;
}

inline PropertyDataset ingest_stream(std::istream& in, const IngestSchema& schema) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!trim_view(line).empty()) {
      header = split_delimited(line, schema.delimiter);
      break;
    }
  }
  if (header.empty()) throw Error(ErrorCode::kDatasetError, "dataset has no header");
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::kMissingColumn, "no column named '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t mcol = col(schema.mofid_column);
  std::vector<std::size_t> pcols;
  PropertyDataset ds;
  if (schema.property_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i != mcol) {
        pcols.push_back(i);
        ds.property_names.push_back(header[i]);
      }
    }
  } else {
    for (const auto& p : schema.property_columns) {
      pcols.push_back(col(p));
      ds.property_names.push_back(p);
    }
  }

  std::unordered_set<std::string> seen;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim_view(line).empty()) continue;
    const auto bad = [&](const std::string& why) {
      return Error(ErrorCode::kUnparseableRow, "row " + std::to_string(row) + ": " + why);
    };
    std::vector<std::string> f;
    try {
      f = split_delimited(line, schema.delimiter);
    } catch (const Error& e) {
      throw bad(e.what());
    }
    if (f.size() != header.size()) {
      throw bad("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    std::string mofid;
    try {
      mofid = parse_mofid(f[mcol]).canonical();
    } catch (const Error& e) {
      throw bad(e.what());
    }
    std::vector<double> vals;
    for (auto c : pcols) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != f[c].size() || !std::isfinite(v)) {
        throw bad("cannot parse '" + f[c] + "' as a number");
      }
      vals.push_back(v);
    }
    if (!seen.insert(normalize_mofid(mofid)).second) {
      ++ds.duplicates_dropped;
      continue;
    }
    ds.mofids.push_back(std::move(mofid));
    ds.values.push_back(std::move(vals));
  }
  ds.split = split_indices(ds.size(), schema.seed);
  return ds;
}

inline PropertyDataset ingest(const std::string& path, const IngestSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open dataset " + path);
  return ingest_stream(in, schema);
}

/// "mean", "mean+1s", "mean+2s" or "mean-1s" of a column over the given rows.
inline double target_from_stats(const PropertyDataset& ds, std::size_t column,
                                const std::vector<std::size_t>& rows, const std::string& which) {
  std::vector<double> xs;
  for (auto r : rows) xs.push_back(ds.values.at(r).at(column));
  if (xs.empty()) throw Error(ErrorCode::kEmptySplit, "no rows for target statistics");
  const double mu = mean_of(xs);
  const double sd = stddev_of(xs);
  static const std::map<std::string, double> k = {
      {"mean", 0.0}, {"mean+1s", 1.0}, {"mean+2s", 2.0}, {"mean-1s", -1.0}};
  const auto it = k.find(which);
  if (it == k.end()) throw Error(ErrorCode::kConfigError, "unknown target statistic '" + which + "'");
  return mu + it->second * sd;
}

}  // namespace mofrl
