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
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "mofrl/error.hpp"
#include "mofrl/pipeline.hpp"
#include "mofrl/reward.hpp"
#include "mofrl/validator.hpp"

namespace mofrl {

struct SummaryStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SummaryStats, mean, std, median, min, max, count)

inline SummaryStats summarize(std::vector<double> xs) {
  SummaryStats s;
  s.count = xs.size();
  if (xs.empty()) return s;
  s.mean = mean_of(xs);
  s.std = stddev_of(xs);
  std::sort(xs.begin(), xs.end());
  s.min = xs.front();
  s.max = xs.back();
  const std::size_t n = xs.size();
  s.median = n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  return s;
}

struct DistributionReport {
  std::vector<double> edges;  // bins + 1
  std::vector<double> density_generated;
  std::vector<double> density_reference;
  SummaryStats generated;
  SummaryStats reference;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DistributionReport, edges, density_generated, density_reference,
                                   generated, reference)

namespace detail {

inline std::vector<double> density(const std::vector<double>& xs, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  std::vector<double> d(bins, 0.0);
  if (xs.empty()) return d;
  const double lo = edges.front(), hi = edges.back();
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double x : xs) {
    auto b = static_cast<std::size_t>(std::floor((x - lo) / width));
    if (x >= hi) b = bins - 1;
    d[std::min(b, bins - 1)] += 1.0;
  }
  for (auto& v : d) v /= static_cast<double>(xs.size()) * width;
  return d;
}

}  // namespace detail

/// Equal-width histograms over the union range, normalised to unit area.
inline DistributionReport distribution_report(const std::vector<double>& values,
                                              const std::vector<double>& reference, int bins) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "no values for a distribution report");
  if (bins < 1) throw Error(ErrorCode::kInvalidArgument, "bins must be >= 1");
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (!reference.empty()) {
    lo = std::min(lo, *std::min_element(reference.begin(), reference.end()));
    hi = std::max(hi, *std::max_element(reference.begin(), reference.end()));
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  DistributionReport r;
  for (int i = 0; i <= bins; ++i) r.edges.push_back(lo + (hi - lo) * i / bins);
  r.edges.back() = hi;
  r.density_generated = detail::density(values, r.edges);
  r.density_reference = detail::density(reference, r.edges);
  r.generated = summarize(values);
  r.reference = summarize(reference);
  return r;
}

struct EvalRecord {
  std::string mofid;
  double predicted = 0.0;
  bool valid = false;
};

struct EvalReport {
  int attempts = 0;
  int generated = 0;
  int valid = 0;
  int novel = 0;
  int unique = 0;
  double validity_rate = 0.0;   // % of attempts
  double novelty_rate = 0.0;    // % of valid
  double diversity_ratio = 0.0; // % unique among generated
  double proximity_score = 0.0;
  double overall_efficiency = 0.0;  // % of attempts
  double target = 0.0;
  SummaryStats property;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, attempts, generated, valid, novel, unique, validity_rate,
                                   novelty_rate, diversity_ratio, proximity_score, overall_efficiency,
                                   target, property)

/// Rates over `attempts`; novelty, proximity and property statistics over the
/// valid records. `within` is the relative band counted as on-target.
inline EvalReport compute_metrics(const std::vector<EvalRecord>& records, int attempts,
                                  const NoveltyIndex& novelty, double target, double within = 0.2) {
  if (attempts <= 0) throw Error(ErrorCode::kZeroAttempts, "metrics need at least one attempt");
  if (static_cast<std::size_t>(attempts) < records.size()) {
    throw Error(ErrorCode::kInvalidArgument, "more records than attempts");
  }
  EvalReport r;
  r.attempts = attempts;
  r.generated = static_cast<int>(records.size());
  r.target = target;
  const double scale = std::max(std::abs(target), 1e-12);
  std::unordered_set<std::string> seen;
  std::vector<double> ys;
  double prox = 0.0;
  int efficient = 0;
  for (const auto& rec : records) {
    if (seen.insert(normalize_mofid(rec.mofid)).second) ++r.unique;
    if (!rec.valid) continue;
    ++r.valid;
    const bool nov = is_novel(rec.mofid, novelty);
    r.novel += nov;
    const double rel = std::abs(rec.predicted - target) / scale;
    prox += std::exp(-rel);
    efficient += nov && rel <= within;
    ys.push_back(rec.predicted);
  }
  r.validity_rate = 100.0 * r.valid / attempts;
  r.novelty_rate = r.valid == 0 ? 0.0 : 100.0 * r.novel / r.valid;
  r.diversity_ratio = records.empty() ? 0.0 : 100.0 * r.unique / static_cast<double>(records.size());
  r.proximity_score = r.valid == 0 ? 0.0 : prox / r.valid;
  r.overall_efficiency = 100.0 * efficient / attempts;
  r.property = summarize(ys);
  return r;
}

inline std::vector<EvalRecord> eval_records(const std::vector<GeneratedRecord>& generated,
                                            std::size_t property = 0) {
  std::vector<EvalRecord> out;
  for (const auto& g : generated) {
    out.push_back({g.mofid, g.predicted.size() > property ? g.predicted[property] : 0.0, g.report.is_valid});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Header plus one row per bin.
inline void write_histogram_csv(std::ostream& os, const DistributionReport& r) {
  os << "bin_left,bin_right,density_generated,density_reference\n";
  for (std::size_t i = 0; i + 1 < r.edges.size(); ++i) {
    os << fmt_num(r.edges[i]) << ',' << fmt_num(r.edges[i + 1]) << ','
       << fmt_num(r.density_generated[i]) << ',' << fmt_num(r.density_reference[i]) << '\n';
  }
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Step-outline overlay of both densities.
inline void write_histogram_svg(std::ostream& os, const DistributionReport& r, std::string_view title) {
  const double W = 480, H = 300, L = 50, R = 20, T = 30, B = 40;
  double ymax = 0.0;
  for (double d : r.density_generated) ymax = std::max(ymax, d);
  for (double d : r.density_reference) ymax = std::max(ymax, d);
  if (ymax <= 0.0) ymax = 1.0;
  const double x0 = r.edges.front(), x1 = r.edges.back();
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - y / ymax * (H - T - B); };
  const auto path = [&](const std::vector<double>& d) {
    std::string p = "M" + fmt_num(px(x0)) + "," + fmt_num(py(0));
    for (std::size_t i = 0; i < d.size(); ++i) {
      p += " L" + fmt_num(px(r.edges[i])) + "," + fmt_num(py(d[i]));
      p += " L" + fmt_num(px(r.edges[i + 1])) + "," + fmt_num(py(d[i]));
    }
    p += " L" + fmt_num(px(x1)) + "," + fmt_num(py(0));
    return p;
  };
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
     << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << L << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << fmt_num(x0) << "</text>\n"
     << "<text x=\"" << W - R - 40 << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << fmt_num(x1)
     << "</text>\n";
  if (r.reference.count > 0) {
    os << "<path d=\"" << path(r.density_reference)
       << "\" fill=\"none\" stroke=\"gray\" stroke-dasharray=\"4 2\"/>\n";
  }
  os << "<path d=\"" << path(r.density_generated) << "\" fill=\"none\" stroke=\"steelblue\"/>\n"
     << "</svg>\n";
}

/// Summary-table row: label, mean and std for generated then reference.
inline std::string stats_row(std::string_view label, const DistributionReport& r) {
  return std::string(label) + "\t" + fmt_num(r.generated.mean) + "\t" + fmt_num(r.generated.std) + "\t" +
         fmt_num(r.reference.mean) + "\t" + fmt_num(r.reference.std);
}

inline void emit_plots(const DistributionReport& r, const std::string& stem, std::string_view title) {
  std::ofstream csv(stem + ".csv"), svg(stem + ".svg");
  if (!csv || !svg) throw Error(ErrorCode::kIoError, "cannot write plot files at " + stem);
  write_histogram_csv(csv, r);
  write_histogram_svg(svg, r, title);
  if (!csv || !svg) throw Error(ErrorCode::kIoError, "failed writing plot files at " + stem);
}

}  // namespace mofrl
