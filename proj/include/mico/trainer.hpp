#pragma once
// Contrastive fine-tuning loop: per epoch shuffle and batch the premise groups,
// minimise the multi-alternative loss with AdamW, score the validation pairs,
// checkpoint, and stop early once the validation loss settles.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "mico/checkpoint.hpp"
#include "mico/ckg.hpp"
#include "mico/dataset.hpp"
#include "mico/encoder.hpp"
#include "mico/errors.hpp"
#include "mico/io.hpp"
#include "mico/loss.hpp"
#include "mico/optim.hpp"

namespace mico {

struct TrainConfig {
  int k = 2;
  int batch_size = 196;
  int max_len = kDefaultMaxLen;
  std::optional<double> lr;  // unset: the backbone's default
  double tau = 0.07;
  int max_epochs = 10;
  double early_stop_rel_delta = 0.01;
  std::uint64_t seed = 42;
  std::string backbone = TinyEncoder::kId;
  SimilarityKind similarity = SimilarityKind::cosine;

  // tiny backbone shape
  int hidden_dim = 32;
  int vocab_buckets = 4096;

  double weight_decay = 0.01;

  // job wiring (used by the CLI)
  std::string train_pairs;
  std::string valid_pairs;
  std::string run_dir = "runs";
  std::string name = "run";

  double learning_rate() const { return lr ? *lr : default_learning_rate(backbone); }

  LossConfig loss() const { return LossConfig{tau, k, similarity}; }

  TinyEncoderConfig encoder_config() const {
    TinyEncoderConfig c;
    c.hidden_dim = hidden_dim;
    c.tokenizer.vocab_buckets = vocab_buckets;
    c.init_seed = seed;
    return c;
  }

  void validate() const {
    auto positive = [](const char* name, double v) {
      if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
    };
    if (k < 1) throw ConfigError("k must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (max_len < 2) throw ConfigError("max_len must be >= 2");
    positive("lr", learning_rate());
    positive("tau", tau);
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(early_stop_rel_delta > 0 && early_stop_rel_delta < 1)) throw ConfigError("early_stop_rel_delta must be in (0, 1)");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (vocab_buckets <= kFirstWordId) throw ConfigError("vocab_buckets too small");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  }

  // Applies one `key = value` setting.
  void set(const std::string& key, const std::string& value) {
    auto as_int = [&] {
      std::size_t pos = 0;
      long long v = 0;
      try {
        v = std::stoll(value, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != value.size() || value.empty()) throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
      return v;
    };
    auto as_real = [&] {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(value, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != value.size() || value.empty()) throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
      return v;
    };
    if (key == "k") k = static_cast<int>(as_int());
    else if (key == "batch_size") batch_size = static_cast<int>(as_int());
    else if (key == "max_len") max_len = static_cast<int>(as_int());
    else if (key == "lr") lr = as_real();
    else if (key == "tau") tau = as_real();
    else if (key == "max_epochs") max_epochs = static_cast<int>(as_int());
    else if (key == "early_stop_rel_delta") early_stop_rel_delta = as_real();
    else if (key == "seed") seed = static_cast<std::uint64_t>(as_int());
    else if (key == "backbone") backbone = value;
    else if (key == "similarity") similarity = parse_similarity(value);
    else if (key == "hidden_dim") hidden_dim = static_cast<int>(as_int());
    else if (key == "vocab_buckets") vocab_buckets = static_cast<int>(as_int());
    else if (key == "weight_decay") weight_decay = as_real();
    else if (key == "train_pairs") train_pairs = value;
    else if (key == "valid_pairs") valid_pairs = value;
    else if (key == "run_dir") run_dir = value;
    else if (key == "name") name = value;
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  nlohmann::json to_json() const {
    return {{"k", k},
            {"batch_size", batch_size},
            {"max_len", max_len},
            {"lr", learning_rate()},
            {"tau", tau},
            {"max_epochs", max_epochs},
            {"early_stop_rel_delta", early_stop_rel_delta},
            {"seed", seed},
            {"backbone", backbone},
            {"similarity", to_string(similarity)},
            {"hidden_dim", hidden_dim},
            {"vocab_buckets", vocab_buckets},
            {"weight_decay", weight_decay},
            {"train_pairs", train_pairs},
            {"valid_pairs", valid_pairs},
            {"run_dir", run_dir},
            {"name", name}};
  }
};

// key=value lines; '#' comments. Settings apply on top of `base`; later keys win.
inline TrainConfig parse_train_config(std::istream& in, const std::string& source, TrainConfig base) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      base.set(std::string(text::trim(t.substr(0, eq))), std::string(text::trim(t.substr(eq + 1))));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  return parse_train_config(in, path.string(), std::move(base));
}

struct TrainState {
  int epoch = 0;
  std::int64_t step = 0;
  double train_loss = 0.0;  // running mean over the current epoch
  double valid_loss = 0.0;
  double best_valid_loss = 0.0;
  std::filesystem::path checkpoint;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  int best_epoch = 0;
  std::vector<EpochRecord> log;
  TrainState state;
  bool stopped_early = false;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch}, {"step", r.step}};
  j["train_loss"] = r.train_loss ? nlohmann::json(*r.train_loss) : nlohmann::json(nullptr);
  j["valid_loss"] = r.valid_loss;
  j["best_valid_loss"] = r.best_valid_loss;
  j["timestamp"] = r.timestamp;
  return j;
}

// True when the latest two trained epochs' validation losses differ by less
// than `rel_delta` relative to the earlier one. `valid` holds one entry per
// trained epoch (initialization excluded).
inline bool should_stop_early(std::span<const double> valid, double rel_delta) {
  if (valid.size() < 2) return false;
  double prev = valid[valid.size() - 2];
  double cur = valid.back();
  if (prev == 0.0) return cur == 0.0;
  return std::abs(cur - prev) / std::abs(prev) < rel_delta;
}

// Mean in-batch contrastive loss over the validation pairs, each
// (premise, alternative) scored on its own (k = 1). Pairs are taken in
// group order and cut into batches of cfg.batch_size; a trailing singleton
// joins the previous batch.
inline double evaluate_valid_loss(const std::vector<PremiseGroup>& valid, const TinyEncoder& encoder, const TrainConfig& cfg) {
  std::vector<const std::string*> prem;
  std::vector<const std::string*> alt;
  for (const auto& g : valid)
    for (const auto& a : g.alternatives) {
      prem.push_back(&g.premise);
      alt.push_back(&a);
    }
  if (prem.size() < 2) throw InputError("validation set needs at least 2 pairs");

  std::unordered_map<std::string, EmbeddingVector> cache;
  auto embed = [&](const std::string& t) -> const EmbeddingVector& {
    auto it = cache.find(t);
    if (it == cache.end()) it = cache.emplace(t, encoder.forward(encoder.tokenize(t, cfg.max_len))).first;
    return it->second;
  };

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t s = 0; s < prem.size(); s += bs) spans.emplace_back(s, std::min(prem.size(), s + bs));
  if (spans.size() > 1 && spans.back().second - spans.back().first < 2) {
    spans[spans.size() - 2].second = spans.back().second;
    spans.pop_back();
  }
  LossConfig lc{cfg.tau, 1, cfg.similarity};
  const auto d = encoder.hidden_dim();
  double total = 0;
  for (auto [s, e] : spans) {
    const auto n = static_cast<Eigen::Index>(e - s);
    Eigen::MatrixXd S(n, d), G(n, d);
    for (std::size_t i = s; i < e; ++i) {
      S.row(static_cast<Eigen::Index>(i - s)) = embed(*prem[i]).transpose();
      G.row(static_cast<Eigen::Index>(i - s)) = embed(*alt[i]).transpose();
    }
    total += info_nce<double>(S, G, lc).value * static_cast<double>(n);
  }
  return total / static_cast<double>(prem.size());
}

struct TrainOptions {
  // Checkpoints and metrics go to run_dir/epoch<N>.ckpt, best.ckpt, metrics.jsonl.
  std::filesystem::path run_dir;
  // Continue from a training checkpoint written by an earlier run.
  std::optional<std::filesystem::path> resume_from;
  // Called after every epoch record (including the initialization record).
  std::function<void(const EpochRecord&)> on_epoch;
  // Test hook: stop after this many epochs in this invocation.
  std::optional<int> stop_after_epoch;
};

namespace detail {

inline void write_metrics(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
  io::write_atomically(path, [&](std::ostream& out) {
    for (const auto& r : log) out << to_json(r).dump() << '\n';
  });
}

// One optimisation step on a batch. Returns the batch loss.
inline double train_step(const Batch& batch, TinyEncoder& encoder, AdamW& opt, const TrainConfig& cfg,
                         std::vector<double>& grads) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int k = cfg.k;
  const auto d = encoder.hidden_dim();
  std::vector<TinyEncoder::Cache> prem_cache(batch.size());
  std::vector<TinyEncoder::Cache> cand_cache(batch.size() * static_cast<std::size_t>(k));
  Eigen::MatrixXd S(n, d), G(n * k, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = batch.examples[static_cast<std::size_t>(i)];
    S.row(i) = encoder.forward(encoder.tokenize(ex.premise, cfg.max_len), &prem_cache[static_cast<std::size_t>(i)]).transpose();
    for (int o = 0; o < k; ++o) {
      auto slot = static_cast<std::size_t>(i * k + o);
      G.row(i * k + o) = encoder.forward(encoder.tokenize(ex.candidates[static_cast<std::size_t>(o)], cfg.max_len), &cand_cache[slot]).transpose();
    }
  }
  auto res = mico_loss<double>(S, G, cfg.loss(), /*with_grad=*/true);
  if (!std::isfinite(res.value)) throw RuntimeFailure("non-finite loss at step " + std::to_string(opt.step + 1));
  std::fill(grads.begin(), grads.end(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    encoder.backward(prem_cache[static_cast<std::size_t>(i)], res.grad_premises.row(i).transpose(), grads);
  for (Eigen::Index r = 0; r < n * k; ++r)
    encoder.backward(cand_cache[static_cast<std::size_t>(r)], res.grad_alternatives.row(r).transpose(), grads);
  opt.update(encoder.parameters(), grads);
  return res.value;
}

}  // namespace detail

// Trains `encoder` in place. On return the encoder holds the weights of the
// best-validation checkpoint.
inline TrainResult train(const TrainConfig& config, const std::vector<PremiseGroup>& train_groups,
                         const std::vector<PremiseGroup>& valid_groups, TinyEncoder& encoder, const TrainOptions& opts) {
  config.validate();
  if (train_groups.empty()) throw InputError("no training groups");
  if (valid_groups.empty()) throw InputError("no validation groups");
  if (opts.run_dir.empty()) throw ConfigError("run directory is not set");
  namespace fs = std::filesystem;

  AdamW opt;
  opt.lr = config.learning_rate();
  opt.weight_decay = config.weight_decay;

  TrainResult result;
  auto& st = result.state;
  std::vector<double> trained_valid;  // per trained epoch
  int start_epoch = 1;

  auto ckpt_path = [&](int e) { return opts.run_dir / ("epoch" + std::to_string(e) + ".ckpt"); };
  auto snapshot = [&](int epoch) {
    Checkpoint c = make_checkpoint(encoder);
    TrainingProgress p;
    p.epoch = epoch;
    p.step = st.step;
    p.adam_m = opt.m;
    p.adam_v = opt.v;
    p.adam_step = opt.step;
    p.records = result.log;
    c.progress = std::move(p);
    return c;
  };
  auto record = [&](EpochRecord r) {
    result.log.push_back(r);
    detail::write_metrics(opts.run_dir / "metrics.jsonl", result.log);
    if (opts.on_epoch) opts.on_epoch(r);
  };

  if (opts.resume_from) {
    Checkpoint c = load_checkpoint(*opts.resume_from);
    if (!c.progress) throw InputError(opts.resume_from->string() + " is not a training checkpoint");
    encoder = encoder_from_checkpoint(c, config.hidden_dim);
    const auto& p = *c.progress;
    opt.m = p.adam_m;
    opt.v = p.adam_v;
    opt.step = p.adam_step;
    st.step = p.step;
    st.epoch = p.epoch;
    result.log = p.records;
    for (const auto& r : result.log)
      if (r.epoch > 0) trained_valid.push_back(r.valid_loss);
    start_epoch = p.epoch + 1;
    detail::write_metrics(opts.run_dir / "metrics.jsonl", result.log);
  } else {
    double v0 = evaluate_valid_loss(valid_groups, encoder, config);
    st.valid_loss = v0;
    EpochRecord r0{0, 0, std::nullopt, v0, v0, io::utc_timestamp()};
    save_checkpoint(ckpt_path(0), snapshot(0));
    record(r0);
  }

  auto best_of_log = [&] {
    int best = result.log.front().epoch;
    double bv = result.log.front().valid_loss;
    for (const auto& r : result.log)
      if (r.valid_loss < bv) {
        bv = r.valid_loss;
        best = r.epoch;
      }
    return std::pair{best, bv};
  };
  std::tie(result.best_epoch, st.best_valid_loss) = best_of_log();

  std::vector<double> grads(encoder.parameter_count(), 0.0);
  for (int epoch = start_epoch; epoch <= config.max_epochs; ++epoch) {
    if (opts.stop_after_epoch && epoch > *opts.stop_after_epoch) break;
    if (should_stop_early(trained_valid, config.early_stop_rel_delta)) {
      result.stopped_early = true;
      break;
    }
    Rng rng = epoch_rng(config.seed, epoch);
    auto batches = make_batches(train_groups, config.batch_size, config.k, rng);
    if (batches.empty())
      throw InputError("batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                       std::to_string(train_groups.size()) + " training groups");
    double sum = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      sum += detail::train_step(batches[b], encoder, opt, config, grads);
      ++st.step;
      st.train_loss = sum / static_cast<double>(b + 1);
    }
    st.epoch = epoch;
    st.valid_loss = evaluate_valid_loss(valid_groups, encoder, config);
    if (!std::isfinite(st.valid_loss)) throw RuntimeFailure("non-finite validation loss after epoch " + std::to_string(epoch));
    trained_valid.push_back(st.valid_loss);
    if (st.valid_loss < st.best_valid_loss) {
      st.best_valid_loss = st.valid_loss;
      result.best_epoch = epoch;
    }
    EpochRecord r{epoch, st.step, st.train_loss, st.valid_loss, st.best_valid_loss, io::utc_timestamp()};
    result.log.push_back(r);
    save_checkpoint(ckpt_path(epoch), snapshot(epoch));
    result.log.pop_back();
    record(r);
  }

  result.best_checkpoint = ckpt_path(result.best_epoch);
  Checkpoint best = load_checkpoint(result.best_checkpoint);
  encoder = encoder_from_checkpoint(best, config.hidden_dim);
  best.progress.reset();
  save_checkpoint(opts.run_dir / "best.ckpt", best);
  st.checkpoint = result.best_checkpoint;
  return result;
}

}  // namespace mico
