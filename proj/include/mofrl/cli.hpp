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

// Command-line driver. Every stage writes into <out-dir>/<stage>/ together
// with a manifest.json that fingerprints what it read and wrote.

#include <CLI11.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mofrl/checkpoint.hpp"
#include "mofrl/dataset.hpp"
#include "mofrl/evaluation.hpp"
#include "mofrl/pipeline.hpp"
#include "mofrl/predictor.hpp"
#include "mofrl/training.hpp"

namespace mofrl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kToolVersion = "mofrl 0.1.0";

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::string corpus;   // empty: <out-dir>/synth/corpus.txt
  std::string dataset;  // empty: <out-dir>/synth/dataset.csv
  std::string mofid_column = "mofid";
  std::vector<std::string> property_columns;
  std::string delimiter = ",";
  std::map<std::string, std::string> units;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, corpus, dataset, mofid_column, property_columns,
                                                delimiter, units)

struct SynthConfig {
  int n_corpus = 2000;
  int n_dataset = 500;
  std::string element = "Cu";  // the synthetic property is this element's token fraction
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, n_corpus, n_dataset, element)

struct GenerateConfig {
  std::string pipeline = "rl";  // or "finetuned"
  int n_target = 30;
  int attempt_cap = -1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerateConfig, pipeline, n_target, attempt_cap)

struct EvaluateConfig {
  double within = 0.2;
  int bins = 20;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvaluateConfig, within, bins)

struct RunConfig {
  std::uint64_t seed = 42;
  std::string device = "none";
  ModelConfig model;
  TrainConfig pretrain = TrainConfig::for_stage(Stage::kPretrain);
  TrainConfig finetune = TrainConfig::for_stage(Stage::kFinetune);
  TrainConfig rl = TrainConfig::for_stage(Stage::kRl);
  SamplingConfig sampling = SamplingConfig::rl();
  RewardConfig reward;
  std::vector<PropertyTarget> targets;
  std::string predictor = "model";  // or "element:<symbol>"
  DataConfig data;
  SynthConfig synth;
  GenerateConfig generate;
  EvaluateConfig evaluate;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig, seed, device, model, pretrain, finetune, rl, sampling, reward,
                                   targets, predictor, data, synth, generate, evaluate)

namespace detail {

inline void check_keys(const json& user, const json& base, const std::string& path) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw Error(ErrorCode::kConfigError, "unknown config key '" + key + "'");
    const json& b = base.at(it.key());
    // Empty objects in the defaults are free-form maps.
    if (it->is_object() && b.is_object() && !b.empty()) check_keys(*it, b, key);
  }
}

}  // namespace detail

/// Layers a user document over the defaults. Unknown keys are rejected so
/// typos do not silently fall back to defaults.
inline RunConfig config_from_json(const json& user) {
  if (!user.is_object()) throw Error(ErrorCode::kConfigError, "config must be a JSON object");
  json merged = RunConfig{};
  detail::check_keys(user, merged, "");
  merged.merge_patch(user);
  try {
    return merged.get<RunConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("bad config value: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot read config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, path + ": " + e.what());
  }
  return config_from_json(doc);
}

/// Every stage's seed derives from the master seed.
inline void derive_seeds(RunConfig& c) {
  c.pretrain.seed = mix_seed(c.seed, 1);
  c.finetune.seed = mix_seed(c.seed, 2);
  c.rl.seed = mix_seed(c.seed, 3);
  c.sampling.seed = mix_seed(c.seed, 4);
}

inline std::uint64_t synth_corpus_seed(const RunConfig& c) { return mix_seed(c.seed, 5); }
inline std::uint64_t synth_dataset_seed(const RunConfig& c) { return mix_seed(c.seed, 6); }

// ---------------------------------------------------------------------------
// Files

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty() && t.front() != '#') out.push_back(std::move(t));
  }
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  os << text;
  if (!os) throw Error(ErrorCode::kIoError, "failed writing " + path.string());
}

inline std::string rel(const fs::path& p, const fs::path& root) {
  return fs::absolute(p).lexically_normal().lexically_proximate(fs::absolute(root).lexically_normal())
      .generic_string();
}

class Manifest {
 public:
  Manifest(fs::path root, std::string stage, const RunConfig& cfg)
      : root_(std::move(root)), doc_{{"stage", std::move(stage)},
                                     {"seed", cfg.seed},
                                     {"tool", kToolVersion},
                                     {"config", cfg},
                                     {"inputs", json::object()},
                                     {"outputs", json::object()},
                                     {"checkpoints", json::array()},
                                     {"metrics", json::object()}} {}

  void input(const fs::path& p) { doc_["inputs"][rel(p, root_)] = sha256_file(p.string()); }
  void output(const fs::path& p) { doc_["outputs"][rel(p, root_)] = sha256_file(p.string()); }
  void checkpoint(const fs::path& p) {
    doc_["checkpoints"].push_back(rel(p, root_));
    output(p);
  }
  json& metrics() { return doc_["metrics"]; }

  void write(const fs::path& dir) const { write_text(dir / "manifest.json", doc_.dump(2) + "\n"); }

 private:
  fs::path root_;
  json doc_;
};

// ---------------------------------------------------------------------------
// Options and shared stage plumbing

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  std::vector<std::string> targets;  // name=value
  std::string mode;
  std::optional<int> epochs;
  std::string device;
  std::string target_stats;
  std::string input;
  std::string dataset;
  std::string checkpoint;
  std::string predictor;
  std::string pipeline;
  std::optional<int> n;
  bool relaxed = false;
};

struct Context {
  Options opt;
  RunConfig cfg;
  fs::path root;
  std::ostream* out = &std::cout;

  fs::path stage_dir(const std::string& stage) const { return root / stage; }

  fs::path make_stage_dir(const std::string& stage) const {
    const auto d = stage_dir(stage);
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + d.string() + ": " + ec.message());
    return d;
  }

  /// A file some earlier stage must have produced.
  fs::path require(const fs::path& p, const std::string& what) const {
    if (!fs::exists(p)) throw Error(ErrorCode::kConfigError, what + " not found at " + p.string());
    return p;
  }

  fs::path corpus_path() const {
    if (!opt.input.empty()) return opt.input;
    if (!cfg.data.corpus.empty()) return cfg.data.corpus;
    return stage_dir("synth") / "corpus.txt";
  }

  fs::path dataset_path() const {
    if (!opt.dataset.empty()) return opt.dataset;
    if (!cfg.data.dataset.empty()) return cfg.data.dataset;
    return stage_dir("synth") / "dataset.csv";
  }

  IngestSchema schema() const {
    IngestSchema s;
    s.mofid_column = cfg.data.mofid_column;
    s.property_columns = cfg.data.property_columns;
    if (cfg.data.delimiter.size() != 1) throw Error(ErrorCode::kConfigError, "data.delimiter must be one character");
    s.delimiter = cfg.data.delimiter[0];
    s.seed = cfg.finetune.seed;
    return s;
  }

  std::string unit(const std::string& property) const {
    const auto it = cfg.data.units.find(property);
    return it == cfg.data.units.end() ? "" : it->second;
  }
};

inline Vocabulary load_vocab(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + p.string());
  return Vocabulary::load(in);
}

inline std::vector<TokenSeq> encode_all(const std::vector<std::string>& mofids, const Vocabulary& vocab,
                                        int max_len) {
  std::vector<TokenSeq> out;
  out.reserve(mofids.size());
  for (const auto& m : mofids) out.push_back(encode_unpadded(parse_mofid(m), vocab, max_len));
  return out;
}

/// Copies every matching parameter of `base` into a model with `n` outputs.
inline Transformer with_properties(const Transformer& base, int n, std::uint64_t seed) {
  ModelConfig c = base.config();
  c.n_properties = n;
  const Transformer fresh(c, seed);
  ModelParams p = fresh.params();
  std::map<std::string, const Matrix*> old;
  base.params().visit([&](const std::string& name, const Matrix& m) { old.emplace(name, &m); });
  p.visit([&](const std::string& name, Matrix& m) {
    const auto it = old.find(name);
    if (it != old.end() && it->second->rows() == m.rows() && it->second->cols() == m.cols()) m = *it->second;
  });
  return Transformer(c, std::move(p));
}

/// Training structures the generator has seen: pretraining corpus plus the
/// fine-tuning training split, whichever exist.
inline NoveltyIndex load_novelty(const Context& ctx, Manifest* m) {
  NoveltyIndex idx;
  for (const auto& p : {ctx.stage_dir("pretrain") / "corpus.txt", ctx.stage_dir("finetune") / "train_split.txt"}) {
    if (!fs::exists(p)) continue;
    for (const auto& s : read_lines(p.string())) idx.add(s);
    if (m) m->input(p);
  }
  return idx;
}

struct LoadedPredictor {
  std::unique_ptr<PropertyPredictor> model;
  std::vector<std::string> names;
};

inline LoadedPredictor load_predictor(const Context& ctx, const Vocabulary& vocab, Manifest& m) {
  const std::string kind = ctx.opt.predictor.empty() ? ctx.cfg.predictor : ctx.opt.predictor;
  LoadedPredictor lp;
  if (kind == "model") {
    const auto p = ctx.require(ctx.stage_dir("finetune") / "model.ckpt", "fine-tuned predictor checkpoint");
    auto ck = load_checkpoint(p.string());
    m.input(p);
    lp.names = ck.metadata.value("property_names", std::vector<std::string>{});
    if (static_cast<int>(lp.names.size()) != ck.model.config().n_properties) {
      throw Error(ErrorCode::kFormatError, p.string() + " lacks property names");
    }
    lp.model = std::make_unique<ModelPredictor>(std::move(ck.model));
  } else if (kind.rfind("element:", 0) == 0 && kind.size() > 8) {
    const auto el = kind.substr(8);
    lp.model = std::make_unique<ElementFractionPredictor>(vocab, el);
    std::string name = el + "_fraction";
    for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    lp.names = {name};
  } else {
    throw Error(ErrorCode::kConfigError, "unknown predictor '" + kind + "' (model or element:<symbol>)");
  }
  return lp;
}

struct ResolvedTargets {
  std::vector<PropertyTarget> targets;
  std::vector<std::size_t> columns;  // predictor output per target
};

inline OptimizationMode parse_mode(const std::string& s) {
  if (s == "higher") return OptimizationMode::kHigher;
  if (s == "lower") return OptimizationMode::kLower;
  throw Error(ErrorCode::kConfigError, "--mode must be higher or lower, got '" + s + "'");
}

/// Config targets, then --target overrides, then --target-from-stats.
inline ResolvedTargets resolve_targets(const Context& ctx, const std::vector<std::string>& names,
                                       Manifest* m) {
  auto ts = ctx.cfg.targets;
  const auto find = [&](const std::string& name) {
    return std::find_if(ts.begin(), ts.end(), [&](const PropertyTarget& t) { return t.name == name; });
  };
  for (const auto& spec : ctx.opt.targets) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kConfigError, "--target expects name=value, got '" + spec + "'");
    }
    PropertyTarget t;
    t.name = spec.substr(0, eq);
    try {
      std::size_t used = 0;
      t.value = std::stod(spec.substr(eq + 1), &used);
      if (used != spec.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfigError, "--target value is not a number: '" + spec + "'");
    }
    if (auto it = find(t.name); it != ts.end()) {
      it->value = t.value;
    } else {
      ts.push_back(t);
    }
  }
  if (!ctx.opt.mode.empty()) {
    const auto mode = parse_mode(ctx.opt.mode);
    for (auto& t : ts) t.mode = mode;
  }
  if (!ctx.opt.target_stats.empty()) {
    if (ts.empty() && !names.empty()) {
      PropertyTarget t;
      t.name = names.front();
      if (!ctx.opt.mode.empty()) t.mode = parse_mode(ctx.opt.mode);
      ts.push_back(t);
    }
    const auto path = ctx.dataset_path();
    const auto ds = ingest(path.string(), ctx.schema());
    if (m) m->input(path);
    for (auto& t : ts) {
      const auto col = std::find(ds.property_names.begin(), ds.property_names.end(), t.name);
      if (col == ds.property_names.end()) {
        throw Error(ErrorCode::kMissingColumn, "dataset has no column '" + t.name + "' for target statistics");
      }
      t.value = target_from_stats(ds, static_cast<std::size_t>(col - ds.property_names.begin()),
                                  ds.split.train, ctx.opt.target_stats);
    }
  }
  if (ts.empty()) throw Error(ErrorCode::kConfigError, "no property targets; pass --target name=value");

  ResolvedTargets r;
  for (const auto& t : ts) {
    const auto col = std::find(names.begin(), names.end(), t.name);
    if (col == names.end()) {
      std::string known;
      for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
      throw Error(ErrorCode::kConfigError, "target '" + t.name + "' is not a predicted property (" + known + ")");
    }
    r.columns.push_back(static_cast<std::size_t>(col - names.begin()));
  }
  r.targets = std::move(ts);
  return r;
}

inline std::string fmt_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "\t" : "") + cells[i];
  return s + "\n";
}

// ---------------------------------------------------------------------------
// Stages

inline int cmd_tokenize(Context& ctx) {
  std::ostringstream os;
  for (const auto& line : read_lines(ctx.opt.input)) {
    const auto toks = mofid_tokens(parse_mofid(line));
    std::string joined;
    for (const auto& t : toks) joined += (joined.empty() ? "" : " ") + t;
    os << joined << "\n";
  }
  *ctx.out << os.str();
  if (!ctx.opt.out_dir.empty() && ctx.opt.out_dir != "-") {
    const auto dir = ctx.make_stage_dir("tokenize");
    Manifest m(ctx.root, "tokenize", ctx.cfg);
    m.input(ctx.opt.input);
    write_text(dir / "tokens.txt", os.str());
    m.output(dir / "tokens.txt");
    m.write(dir);
  }
  return 0;
}

inline int cmd_validate(Context& ctx) {
  const ValidatorConfig vcfg;
  std::ostringstream os;
  int valid = 0, total = 0;
  for (const auto& line : read_lines(ctx.opt.input)) {
    const auto r = check_validity(line, vcfg, ctx.opt.relaxed);
    os << json{{"mofid", line}, {"valid", r.is_valid}, {"checks", r.checks()}}.dump() << "\n";
    valid += r.is_valid;
    ++total;
  }
  *ctx.out << os.str() << valid << " of " << total << " valid\n";
  if (!ctx.opt.out_dir.empty() && ctx.opt.out_dir != "-") {
    const auto dir = ctx.make_stage_dir("validate");
    Manifest m(ctx.root, "validate", ctx.cfg);
    m.input(ctx.opt.input);
    write_text(dir / "validity.jsonl", os.str());
    m.output(dir / "validity.jsonl");
    m.metrics() = {{"valid", valid}, {"total", total}};
    m.write(dir);
  }
  return 0;
}

inline int cmd_synth(Context& ctx) {
  const auto dir = ctx.make_stage_dir("synth");
  Manifest m(ctx.root, "synth", ctx.cfg);
  const int n = ctx.opt.n.value_or(ctx.cfg.synth.n_corpus);
  const auto corpus = synth_corpus(n, synth_corpus_seed(ctx.cfg));
  std::string text;
  for (const auto& s : corpus) text += s + "\n";
  write_text(dir / "corpus.txt", text);
  m.output(dir / "corpus.txt");

  const auto rows = synth_corpus(ctx.cfg.synth.n_dataset, synth_dataset_seed(ctx.cfg));
  const Vocabulary vocab = build_vocab(rows);
  const ElementFractionPredictor prop(vocab, ctx.cfg.synth.element);
  std::string column = ctx.cfg.synth.element + "_fraction";
  for (auto& ch : column) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  std::ostringstream csv;
  csv << "mofid," << column << "\n";
  for (const auto& s : rows) {
    const auto seq = encode_unpadded(parse_mofid(s), vocab);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", prop.predict(seq, s)[0]);
    csv << '"' << s << "\"," << buf << "\n";
  }
  write_text(dir / "dataset.csv", csv.str());
  m.output(dir / "dataset.csv");
  m.metrics() = {{"corpus_size", corpus.size()}, {"dataset_rows", rows.size()}, {"property", column}};
  m.write(dir);
  *ctx.out << "wrote " << corpus.size() << " corpus strings and " << rows.size() << " dataset rows to "
           << dir.string() << "\n";
  return 0;
}

inline int cmd_pretrain(Context& ctx) {
  const auto corpus_path = ctx.require(ctx.corpus_path(), "pretraining corpus");
  const auto dir = ctx.make_stage_dir("pretrain");
  auto& tc = ctx.cfg.pretrain;
  if (ctx.opt.epochs) tc.epochs = *ctx.opt.epochs;
  tc.validate();
  Manifest m(ctx.root, "pretrain", ctx.cfg);
  m.input(corpus_path);

  std::vector<std::string> corpus;
  for (const auto& s : read_lines(corpus_path.string())) corpus.push_back(normalize_mofid(s));
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, corpus_path.string() + " holds no structures");
  const Vocabulary vocab = build_vocab(corpus);
  ModelConfig mc = ctx.cfg.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.validate();
  const auto seqs = encode_all(corpus, vocab, mc.max_len);

  Transformer model(mc, tc.seed);
  fs::create_directories(dir / "checkpoints");
  const auto res = run_pretrain(model, seqs, tc, [&](int epoch, const Transformer& snap, double loss) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
    save_checkpoint((dir / "checkpoints" / name).string(), snap, {{"stage", "pretrain"}, {"loss", loss}});
    m.checkpoint(dir / "checkpoints" / name);
  });

  std::string log;
  for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
    log += json{{"epoch", e + 1}, {"loss", res.epoch_losses[e]}}.dump() + "\n";
  }
  write_text(dir / "log.jsonl", log);
  std::ostringstream vs;
  vocab.save(vs);
  write_text(dir / "vocab.txt", vs.str());
  std::string ctext;
  for (const auto& s : corpus) ctext += s + "\n";
  write_text(dir / "corpus.txt", ctext);
  save_checkpoint((dir / "model.ckpt").string(), model, {{"stage", "pretrain"}});
  for (const char* f : {"log.jsonl", "vocab.txt", "corpus.txt"}) m.output(dir / f);
  m.checkpoint(dir / "model.ckpt");
  m.metrics() = {{"steps", res.steps},
                 {"best_epoch", res.best_epoch},
                 {"best_loss", res.best_loss},
                 {"vocab_size", vocab.size()},
                 {"parameters", model.params().num_parameters()}};
  m.write(dir);
  *ctx.out << "pretrain: " << res.steps << " steps, best loss " << fmt_num(res.best_loss) << " at epoch "
           << res.best_epoch << "\n";
  return 0;
}

inline int cmd_finetune(Context& ctx) {
  const auto ckpt = ctx.require(ctx.stage_dir("pretrain") / "model.ckpt", "pretrained checkpoint");
  const auto vocab_path = ctx.require(ctx.stage_dir("pretrain") / "vocab.txt", "pretraining vocabulary");
  const auto data_path = ctx.require(ctx.dataset_path(), "property dataset");
  const auto dir = ctx.make_stage_dir("finetune");
  auto& tc = ctx.cfg.finetune;
  if (ctx.opt.epochs) tc.epochs = *ctx.opt.epochs;
  tc.validate();
  Manifest m(ctx.root, "finetune", ctx.cfg);
  for (const auto& p : {ckpt, vocab_path, data_path}) m.input(p);

  const auto vocab = load_vocab(vocab_path);
  const auto ds = ingest(data_path.string(), ctx.schema());
  if (ds.property_names.empty()) throw Error(ErrorCode::kDatasetError, "dataset has no property columns");
  auto base = load_checkpoint(ckpt.string()).model;
  Transformer model = with_properties(base, static_cast<int>(ds.property_names.size()), tc.seed);
  const auto seqs = encode_all(ds.mofids, vocab, model.config().max_len);

  const auto res = run_finetune(model, seqs, ds.values, tc);
  std::string split;
  for (auto i : res.split.train) split += ds.mofids[i] + "\n";
  write_text(dir / "train_split.txt", split);
  std::string log;
  for (std::size_t e = 0; e < res.train_losses.size(); ++e) {
    log += json{{"epoch", e + 1}, {"train_mse", res.train_losses[e]}, {"val_mse", res.val_losses.at(e)}}.dump() +
           "\n";
  }
  write_text(dir / "log.jsonl", log);
  save_checkpoint((dir / "model.ckpt").string(), model,
                  {{"stage", "finetune"}, {"property_names", ds.property_names}});
  m.output(dir / "train_split.txt");
  m.output(dir / "log.jsonl");
  m.checkpoint(dir / "model.ckpt");

  json variance = json::object();
  for (std::size_t j = 0; j < ds.property_names.size(); ++j) {
    std::vector<double> ys;
    for (auto i : res.split.test) ys.push_back(ds.values[i][j]);
    variance[ds.property_names[j]] = stddev_of(ys) * stddev_of(ys);
  }
  m.metrics() = {{"rows", ds.size()},
                 {"duplicates_dropped", ds.duplicates_dropped},
                 {"split", {res.split.train.size(), res.split.val.size(), res.split.test.size()}},
                 {"best_epoch", res.best_epoch},
                 {"best_val_mse", res.best_val},
                 {"test_mse", res.test_mse},
                 {"test_variance", variance}};
  m.write(dir);
  *ctx.out << "finetune: " << ds.size() << " rows (" << ds.duplicates_dropped << " duplicates dropped), test MSE "
           << fmt_num(res.test_mse) << "\n";
  return 0;
}

inline int cmd_rl(Context& ctx) {
  const auto ckpt = ctx.require(ctx.stage_dir("pretrain") / "model.ckpt", "pretrained checkpoint");
  const auto vocab_path = ctx.require(ctx.stage_dir("pretrain") / "vocab.txt", "pretraining vocabulary");
  const auto dir = ctx.make_stage_dir("rl");
  auto& tc = ctx.cfg.rl;
  if (ctx.opt.epochs) tc.epochs = *ctx.opt.epochs;
  tc.validate();
  Manifest m(ctx.root, "rl", ctx.cfg);
  m.input(ckpt);
  m.input(vocab_path);

  const auto vocab = load_vocab(vocab_path);
  const auto pred = load_predictor(ctx, vocab, m);
  const auto rt = resolve_targets(ctx, pred.names, &m);
  const ColumnPredictor selected(*pred.model, rt.columns);
  const auto novelty = load_novelty(ctx, &m);

  Transformer policy = load_checkpoint(ckpt.string()).model;
  RlContext rc;
  rc.vocab = &vocab;
  rc.predictor = &selected;
  rc.targets = rt.targets;
  rc.reward = ctx.cfg.reward;
  rc.sampling = ctx.cfg.sampling;
  rc.novelty = &novelty;

  fs::create_directories(dir / "checkpoints");
  std::string log;
  RlCallbacks cb;
  cb.on_checkpoint = [&](int epoch, const Transformer& snap, double metric) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
    save_checkpoint((dir / "checkpoints" / name).string(), snap, {{"stage", "rl"}, {"mean_target_reward", metric}});
    m.checkpoint(dir / "checkpoints" / name);
  };
  cb.on_epoch = [&](const RlStepLog& s) {
    log += json(s).dump() + "\n";
    *ctx.out << "rl epoch " << s.epoch << ": reward " << fmt_num(s.mean_reward) << ", target reward "
             << fmt_num(s.mean_target_reward) << ", validity " << fmt_num(s.validity_rate) << "\n";
  };
  const auto res = run_rl(policy, rc, tc, cb);

  write_text(dir / "log.jsonl", log);
  std::ostringstream mem;
  res.memory.dump(mem);
  write_text(dir / "memory.tsv", mem.str());
  save_checkpoint((dir / "policy.ckpt").string(), policy, {{"stage", "rl"}, {"targets", rt.targets}});
  m.output(dir / "log.jsonl");
  m.output(dir / "memory.tsv");
  m.checkpoint(dir / "policy.ckpt");
  m.metrics() = {{"epochs", res.logs.size()},
                 {"best_epoch", res.best_epoch},
                 {"best_target_reward", res.best_target_reward},
                 {"targets", rt.targets},
                 {"final", res.logs.empty() ? json(nullptr) : json(res.logs.back())}};
  m.write(dir);
  return 0;
}

inline int cmd_generate(Context& ctx) {
  const std::string pipeline = ctx.opt.pipeline.empty() ? ctx.cfg.generate.pipeline : ctx.opt.pipeline;
  if (pipeline != "rl" && pipeline != "finetuned") {
    throw Error(ErrorCode::kConfigError, "pipeline must be rl or finetuned, got '" + pipeline + "'");
  }
  const fs::path ckpt = ctx.require(
      !ctx.opt.checkpoint.empty() ? fs::path(ctx.opt.checkpoint)
      : pipeline == "rl"          ? ctx.stage_dir("rl") / "policy.ckpt"
                                  : ctx.stage_dir("finetune") / "model.ckpt",
      "generator checkpoint");
  const auto vocab_path = ctx.require(ctx.stage_dir("pretrain") / "vocab.txt", "pretraining vocabulary");
  const auto dir = ctx.make_stage_dir("generate");
  Manifest m(ctx.root, "generate", ctx.cfg);
  m.input(ckpt);
  m.input(vocab_path);

  const auto vocab = load_vocab(vocab_path);
  const auto pred = load_predictor(ctx, vocab, m);
  const auto rt = resolve_targets(ctx, pred.names, &m);
  const ColumnPredictor selected(*pred.model, rt.columns);
  const auto novelty = load_novelty(ctx, &m);
  const auto model = load_checkpoint(ckpt.string()).model;
  const ValidatorConfig vcfg;
  const int n_target = ctx.opt.n.value_or(ctx.cfg.generate.n_target);
  const auto res = pipeline == "rl"
                       ? pipeline_rl(model, selected, vocab, ctx.cfg.sampling, ctx.cfg.reward, rt.targets, novelty,
                                     vcfg, n_target, ctx.cfg.generate.attempt_cap)
                       : pipeline_finetuned(model, selected, vocab, ctx.cfg.sampling, novelty, vcfg, n_target,
                                            ctx.cfg.generate.attempt_cap);

  std::string all, acc;
  for (const auto& r : res.generated) all += json(r).dump() + "\n";
  for (const auto& r : res.accepted) acc += json(r).dump() + "\n";
  write_text(dir / "generated.jsonl", all);
  write_text(dir / "accepted.jsonl", acc);
  json names = json::array();
  for (const auto& t : rt.targets) names.push_back(t.name);
  const json summary = {{"pipeline", pipeline},
                        {"attempts", res.attempts},
                        {"accepted", res.accepted.size()},
                        {"cap_exceeded", res.cap_exceeded},
                        {"targets", rt.targets},
                        {"properties", names}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  for (const char* f : {"generated.jsonl", "accepted.jsonl", "summary.json"}) m.output(dir / f);
  m.metrics() = summary;
  m.write(dir);
  *ctx.out << "generate: " << res.accepted.size() << " accepted of " << res.attempts << " attempts"
           << (res.cap_exceeded ? " (attempt cap reached)" : "") << "\n";
  return 0;
}

inline int cmd_evaluate(Context& ctx) {
  const auto gen_dir = ctx.stage_dir("generate");
  const auto summary_path = ctx.require(gen_dir / "summary.json", "generation summary");
  const auto records_path = ctx.require(gen_dir / "generated.jsonl", "generated records");
  const auto dir = ctx.make_stage_dir("evaluate");
  Manifest m(ctx.root, "evaluate", ctx.cfg);
  m.input(summary_path);
  m.input(records_path);

  json summary;
  std::vector<json> recs;
  try {
    summary = json::parse(read_file(summary_path.string()));
    for (const auto& line : read_lines(records_path.string())) recs.push_back(json::parse(line));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("malformed generation output: ") + e.what());
  }
  const auto targets = summary.at("targets").get<std::vector<PropertyTarget>>();
  const int attempts = summary.at("attempts").get<int>();
  const auto novelty = load_novelty(ctx, &m);

  std::optional<PropertyDataset> ds;
  const auto data_path = ctx.dataset_path();
  if (fs::exists(data_path)) {
    ds = ingest(data_path.string(), ctx.schema());
    m.input(data_path);
  }

  std::vector<std::string> accepted;
  for (const auto& r : recs) {
    if (r.at("accepted").get<bool>()) accepted.push_back(r.at("mofid").get<std::string>());
  }
  double reward_div = 0.0;
  if (!accepted.empty()) {
    GenerationHistory history(ctx.cfg.reward.history_size);
    const auto d = diversity_scores(accepted, history, ctx.cfg.reward);
    for (const auto& b : d) reward_div += b.total;
    reward_div /= static_cast<double>(d.size());
  }

  json props = json::array();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    std::vector<EvalRecord> er;
    std::vector<double> survivors;
    for (const auto& r : recs) {
      const double y = r.at("predicted").at(i).get<double>();
      er.push_back({r.at("mofid").get<std::string>(), y, r.at("valid").get<bool>()});
      if (r.at("accepted").get<bool>()) survivors.push_back(y);
    }
    const auto metrics = compute_metrics(er, attempts, novelty, t.value, ctx.cfg.evaluate.within);
    std::vector<double> reference;
    if (ds) {
      const auto col = std::find(ds->property_names.begin(), ds->property_names.end(), t.name);
      if (col != ds->property_names.end()) {
        const auto j = static_cast<std::size_t>(col - ds->property_names.begin());
        for (auto k : ds->split.train) reference.push_back(ds->values[k][j]);
      }
    }
    json entry = {{"name", t.name}, {"unit", ctx.unit(t.name)}, {"target", t}, {"metrics", metrics},
                  {"distribution", nullptr}};
    if (!survivors.empty()) {
      const auto dist = distribution_report(survivors, reference, ctx.cfg.evaluate.bins);
      const auto stem = dir / ("hist_" + t.name);
      const auto unit = ctx.unit(t.name);
      emit_plots(dist, stem.string(), unit.empty() ? t.name : t.name + " (" + unit + ")");
      m.output(stem.string() + ".csv");
      m.output(stem.string() + ".svg");
      entry["distribution"] = dist;
    }
    props.push_back(std::move(entry));
    *ctx.out << t.name << ": validity " << fmt_num(metrics.validity_rate) << "%, novelty "
             << fmt_num(metrics.novelty_rate) << "%, diversity " << fmt_num(metrics.diversity_ratio)
             << "%, proximity " << fmt_num(metrics.proximity_score) << ", efficiency "
             << fmt_num(metrics.overall_efficiency) << "%\n";
  }
  const json report = {{"attempts", attempts},
                       {"accepted", accepted.size()},
                       {"pipeline", summary.at("pipeline")},
                       {"reward_diversity", reward_div},
                       {"properties", props}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  m.output(dir / "report.json");
  m.metrics() = {{"accepted", accepted.size()}, {"attempts", attempts}, {"reward_diversity", reward_div}};
  m.write(dir);
  return 0;
}

inline int cmd_report(Context& ctx) {
  const auto report_path = ctx.require(ctx.stage_dir("evaluate") / "report.json", "evaluation report");
  const auto dir = ctx.make_stage_dir("report");
  Manifest m(ctx.root, "report", ctx.cfg);
  m.input(report_path);
  json report;
  try {
    report = json::parse(read_file(report_path.string()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, report_path.string() + ": " + e.what());
  }

  std::string text = fmt_row({"property", "unit", "target", "mode", "generated_mean", "generated_std",
                              "reference_mean", "reference_std"});
  for (const auto& p : report.at("properties")) {
    const auto& t = p.at("target");
    std::vector<std::string> row = {p.at("name").get<std::string>(), p.at("unit").get<std::string>(),
                                    fmt_num(t.at("value").get<double>()), t.at("mode").get<std::string>()};
    const auto& d = p.at("distribution");
    for (const char* side : {"generated", "reference"}) {
      for (const char* stat : {"mean", "std"}) {
        row.push_back(d.is_null() || d.at(side).at("count").get<int>() == 0
                          ? "-"
                          : fmt_num(d.at(side).at(stat).get<double>()));
      }
    }
    text += fmt_row(row);
  }
  text += "\n" + fmt_row({"property", "validity_rate", "novelty_rate", "diversity_ratio", "proximity_score",
                          "overall_efficiency"});
  for (const auto& p : report.at("properties")) {
    const auto& mt = p.at("metrics");
    text += fmt_row({p.at("name").get<std::string>(), fmt_num(mt.at("validity_rate").get<double>()),
                     fmt_num(mt.at("novelty_rate").get<double>()), fmt_num(mt.at("diversity_ratio").get<double>()),
                     fmt_num(mt.at("proximity_score").get<double>()),
                     fmt_num(mt.at("overall_efficiency").get<double>())});
  }
  text += "\n" + fmt_row({"attempts", std::to_string(report.at("attempts").get<int>())});
  text += fmt_row({"accepted", std::to_string(report.at("accepted").get<int>())});
  text += fmt_row({"reward_diversity", fmt_num(report.at("reward_diversity").get<double>())});

  const auto log_path = ctx.stage_dir("rl") / "log.jsonl";
  if (fs::exists(log_path)) {
    m.input(log_path);
    const auto lines = read_lines(log_path.string());
    if (!lines.empty()) {
      const auto first = json::parse(lines.front());
      const auto last = json::parse(lines.back());
      text += fmt_row({"rl_epochs", std::to_string(lines.size())});
      text += fmt_row({"rl_first_mean_target_reward", fmt_num(first.at("mean_target_reward").get<double>())});
      text += fmt_row({"rl_last_mean_target_reward", fmt_num(last.at("mean_target_reward").get<double>())});
    }
  }
  write_text(dir / "report.txt", text);
  m.output(dir / "report.txt");
  m.write(dir);
  *ctx.out << text;
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

struct ExitCategory {
  int code;
  std::string_view name;
};

inline ExitCategory categorize(ErrorCode c) {
  switch (c) {
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidArgument:
      return {2, "config"};
    case ErrorCode::kDatasetError:
    case ErrorCode::kMissingColumn:
    case ErrorCode::kUnparseableRow:
    case ErrorCode::kEmptyCorpus:
    case ErrorCode::kEmptySplit:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kNoComponents:
    case ErrorCode::kSequenceTooLong:
      return {3, "dataset"};
    case ErrorCode::kIoError:
    case ErrorCode::kFormatError:
      return {4, "io"};
    default:
      return {5, "runtime"};
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Transformer MOF generator with reinforcement-learned property targeting", "mofrl"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options opt;

  app.add_option("--config", opt.config, "JSON config file (defaults apply to missing keys)")->envname("MOFRL_CONFIG");
  app.add_option("--seed", opt.seed, "master seed")->envname("MOFRL_SEED");
  app.add_option("--out-dir", opt.out_dir, "run directory root")->envname("MOFRL_OUT_DIR")->capture_default_str();
  app.add_option("--target", opt.targets, "property target as name=value (repeatable)");
  app.add_option("--mode", opt.mode, "higher or lower")->envname("MOFRL_MODE");
  app.add_option("--epochs", opt.epochs, "epochs for the stage being run")->envname("MOFRL_EPOCHS");
  app.add_option("--device", opt.device, "compute device; only none (CPU) is supported")->envname("MOFRL_DEVICE");
  app.add_option("--target-from-stats", opt.target_stats, "mean, mean+1s, mean+2s or mean-1s of the training split");
  app.add_option("--dataset", opt.dataset, "property dataset (delimited text)")->envname("MOFRL_DATASET");
  app.add_option("--predictor", opt.predictor, "model or element:<symbol>")->envname("MOFRL_PREDICTOR");

  struct Sub {
    CLI::App* app;
    int (*fn)(Context&);
  };
  std::vector<Sub> subs;
  auto* tok = app.add_subcommand("tokenize", "print the token list of each MOFid in a file");
  tok->add_option("--input", opt.input, "one MOFid per line")->required();
  subs.push_back({tok, cmd_tokenize});
  auto* val = app.add_subcommand("validate", "check each MOFid in a file");
  val->add_option("--input", opt.input, "one MOFid per line")->required();
  val->add_flag("--relaxed", opt.relaxed, "use the relaxed grammar");
  subs.push_back({val, cmd_validate});
  auto* syn = app.add_subcommand("synth", "write a synthetic corpus and property dataset");
  syn->add_option("--n", opt.n, "corpus size");
  subs.push_back({syn, cmd_synth});
  auto* pre = app.add_subcommand("pretrain", "next-token pretraining");
  pre->add_option("--input", opt.input, "corpus file, one MOFid per line");
  subs.push_back({pre, cmd_pretrain});
  subs.push_back({app.add_subcommand("finetune", "fit the property regression head"), cmd_finetune});
  subs.push_back({app.add_subcommand("rl", "policy-gradient optimisation toward the targets"), cmd_rl});
  auto* gen = app.add_subcommand("generate", "sample, filter and rank structures");
  gen->add_option("--checkpoint", opt.checkpoint, "generator checkpoint");
  gen->add_option("--pipeline", opt.pipeline, "rl or finetuned");
  gen->add_option("--n", opt.n, "number of structures to accept");
  subs.push_back({gen, cmd_generate});
  subs.push_back({app.add_subcommand("evaluate", "metrics and distribution plots for generated structures"),
                  cmd_evaluate});
  subs.push_back({app.add_subcommand("report", "summary table of the latest evaluation"), cmd_report});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    Context ctx;
    ctx.opt = opt;
    ctx.out = &out;
    ctx.cfg = load_config(opt.config);
    if (opt.seed) ctx.cfg.seed = *opt.seed;
    if (!opt.device.empty()) ctx.cfg.device = opt.device;
    if (ctx.cfg.device != "none" && ctx.cfg.device != "cpu") {
      throw Error(ErrorCode::kConfigError, "device '" + ctx.cfg.device + "' is not supported; use none");
    }
    derive_seeds(ctx.cfg);
    ctx.root = opt.out_dir;
    for (const auto& s : subs) {
      if (s.app->parsed()) return s.fn(ctx);
    }
    throw Error(ErrorCode::kConfigError, "no subcommand");
  } catch (const Error& e) {
    const auto cat = categorize(e.code());
    err << "error[" << cat.name << "]: " << e.what() << "\n";
    return cat.code;
  } catch (const json::exception& e) {
    err << "error[io]: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error[runtime]: " << e.what() << "\n";
    return 5;
  }
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  std::vector<const char*> argv = {"mofrl"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace mofrl::cli
