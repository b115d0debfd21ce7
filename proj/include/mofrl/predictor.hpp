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

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mofrl/mofid.hpp"
#include "mofrl/transformer.hpp"
#include "mofrl/validator.hpp"

namespace mofrl {

/// Maps a generated sequence to predicted property values. Must be total:
/// invalid or unparseable sequences still get a prediction.
class PropertyPredictor {
 public:
  virtual ~PropertyPredictor() = default;
  virtual std::vector<double> predict(const TokenSeq& seq, std::string_view text) const = 0;
  virtual int n_properties() const = 0;
};

/// A fine-tuned transformer's regression head.
class ModelPredictor final : public PropertyPredictor {
 public:
  explicit ModelPredictor(Transformer model) : model_(std::move(model)) {}

  std::vector<double> predict(const TokenSeq& seq, std::string_view) const override {
    const auto active = seq.active();
    const auto n = std::min<std::size_t>(active.size(), static_cast<std::size_t>(model_.config().max_len));
    const auto r = model_.regress(model_.forward(active.first(n)));
    return std::vector<double>(r.out.data(), r.out.data() + r.out.size());
  }

  int n_properties() const override { return model_.config().n_properties; }
  const Transformer& model() const { return model_; }

 private:
  Transformer model_;
};

/// Fraction of non-special tokens that carry a given element, e.g. "Cu" or
/// "[Cu+2]". A cheap synthetic property with a known optimum.
class ElementFractionPredictor final : public PropertyPredictor {
 public:
  ElementFractionPredictor(const Vocabulary& vocab, std::string element) : element_(std::move(element)) {
    hits_.assign(vocab.size(), false);
    for (std::size_t i = Vocabulary::kNumSpecial; i < vocab.size(); ++i) {
      const std::string& t = vocab.token(static_cast<int>(i));
      if (t == element_) {
        hits_[i] = true;
      } else if (t.size() > 2 && t.front() == '[') {
        const auto atom = detail::parse_bracket_atom(t);
        hits_[i] = atom.ok && atom.element == element_;
      }
    }
  }

  std::vector<double> predict(const TokenSeq& seq, std::string_view) const override {
    std::size_t total = 0, hit = 0;
    for (int id : seq.active()) {
      if (id < Vocabulary::kNumSpecial) continue;
      ++total;
      hit += static_cast<std::size_t>(id) < hits_.size() && hits_[static_cast<std::size_t>(id)];
    }
    return {total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total)};
  }

  int n_properties() const override { return 1; }

 private:
  std::string element_;
  std::vector<bool> hits_;
};

/// Reorders or subsets another predictor's outputs.
class ColumnPredictor final : public PropertyPredictor {
 public:
  ColumnPredictor(const PropertyPredictor& base, std::vector<std::size_t> columns)
      : base_(&base), columns_(std::move(columns)) {
    for (auto c : columns_) {
      if (c >= static_cast<std::size_t>(base.n_properties())) {
        throw Error(ErrorCode::kInvalidArgument, "predictor column out of range");
      }
    }
  }

  std::vector<double> predict(const TokenSeq& seq, std::string_view text) const override {
    const auto all = base_->predict(seq, text);
    std::vector<double> out;
    for (auto c : columns_) out.push_back(all[c]);
    return out;
  }

  int n_properties() const override { return static_cast<int>(columns_.size()); }

 private:
  const PropertyPredictor* base_;
  std::vector<std::size_t> columns_;
};

}  // namespace mofrl
