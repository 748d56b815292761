#pragma once
// Text encoders. A backbone maps a token sequence to last-layer hidden states;
// the sequence representation is the hidden state at position 0 (the start
// marker).
//
// TinyEncoder is the reference backbone: hashed-vocabulary embeddings, one
// attention-free mixing layer, and a learned start-token embedding whose
// mixed state is the readout:
//
//   c   = mean_{i >= 1} E[:, id_i]
//   h_i = tanh(W E[:, id_i] + U c + b)
//
// so h_0 = tanh(W E[:, START] + U c + b) summarizes the whole sequence.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mico/errors.hpp"
#include "mico/text.hpp"

namespace mico {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kStartId = 1;
inline constexpr std::int32_t kEndId = 2;
inline constexpr std::int32_t kFirstWordId = 3;
inline constexpr int kDefaultMaxLen = 32;

struct TokenSequence {
  std::vector<std::int32_t> ids;

  std::size_t size() const { return ids.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct TokenizerSpec {
  int vocab_buckets = 4096;  // total vocabulary size including the 3 reserved ids
  bool lowercase = true;

  friend bool operator==(const TokenizerSpec&, const TokenizerSpec&) = default;
};

// Whitespace words hashed into [kFirstWordId, vocab_buckets), framed by start
// and end markers. Truncation keeps the start marker and re-appends the end marker.
inline TokenSequence hash_tokenize(std::string_view text, int max_len, const TokenizerSpec& spec) {
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  if (spec.vocab_buckets <= kFirstWordId) throw ConfigError("vocab_buckets must exceed the reserved ids");
  auto words = text::split_whitespace(text);
  if (words.empty()) throw InputError("cannot tokenize empty text");
  const auto word_slots = static_cast<std::size_t>(max_len - 2);
  const auto buckets = static_cast<std::uint64_t>(spec.vocab_buckets - kFirstWordId);
  TokenSequence seq;
  seq.ids.reserve(std::min(words.size(), word_slots) + 2);
  seq.ids.push_back(kStartId);
  for (std::size_t i = 0; i < words.size() && i < word_slots; ++i) {
    std::uint64_t h = spec.lowercase ? text::fnv1a(text::to_lower_ascii(words[i])) : text::fnv1a(words[i]);
    seq.ids.push_back(kFirstWordId + static_cast<std::int32_t>(h % buckets));
  }
  seq.ids.push_back(kEndId);
  return seq;
}

// Last-layer hidden states, one row per token.
struct HiddenStates {
  Eigen::MatrixXd matrix;
};

using EmbeddingVector = Eigen::VectorXd;
using EmbeddingBatch = Eigen::MatrixXd;  // one embedding per row

inline EmbeddingVector pool(const HiddenStates& hidden) {
  if (hidden.matrix.rows() == 0) throw InputError("pool: empty hidden states");
  return hidden.matrix.row(0).transpose();
}

class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string id() const = 0;
  virtual int hidden_dim() const = 0;
  virtual TokenSequence tokenize(std::string_view text, int max_len) const = 0;
  virtual HiddenStates encode(const TokenSequence& tokens) const = 0;

  // Padded batch path. Must agree with encode() row for row.
  virtual std::vector<HiddenStates> encode_padded(std::span<const TokenSequence> batch) const {
    std::vector<HiddenStates> out;
    out.reserve(batch.size());
    for (const auto& t : batch) out.push_back(encode(t));
    return out;
  }

  // Identifies weights + tokenizer; stored with index snapshots.
  virtual std::uint64_t fingerprint() const = 0;

  EmbeddingVector embed(std::string_view text, int max_len = kDefaultMaxLen) const { return pool(encode(tokenize(text, max_len))); }
};

// Row i = pool(encode(tokenize(texts[i]))), computed in padded chunks of `batch_size`.
inline EmbeddingBatch encode_batch(const Backbone& backbone, std::span<const std::string> texts,
                                   int max_len = kDefaultMaxLen, int batch_size = 64) {
  if (texts.empty()) throw InputError("encode_batch: no texts");
  if (batch_size < 1) throw ConfigError("encode_batch: batch_size must be >= 1");
  EmbeddingBatch out(static_cast<Eigen::Index>(texts.size()), backbone.hidden_dim());
  std::vector<TokenSequence> chunk;
  for (std::size_t start = 0; start < texts.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(texts.size(), start + static_cast<std::size_t>(batch_size));
    chunk.clear();
    for (std::size_t i = start; i < end; ++i) {
      try {
        chunk.push_back(backbone.tokenize(texts[i], max_len));
      } catch (const InputError& e) {
        throw InputError("text #" + std::to_string(i) + ": " + e.what());
      }
    }
    auto hidden = backbone.encode_padded(chunk);
    for (std::size_t i = start; i < end; ++i) out.row(static_cast<Eigen::Index>(i)) = pool(hidden[i - start]).transpose();
  }
  return out;
}

struct TinyEncoderConfig {
  int hidden_dim = 32;
  TokenizerSpec tokenizer;
  std::uint64_t init_seed = 0;
};

class TinyEncoder final : public Backbone {
 public:
  static constexpr const char* kId = "tiny";

  explicit TinyEncoder(TinyEncoderConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (cfg_.tokenizer.vocab_buckets <= kFirstWordId) throw ConfigError("vocab_buckets must exceed the reserved ids");
    params_.assign(parameter_count(), 0.0);
    initialize(cfg_.init_seed);
  }

  std::string id() const override { return kId; }
  int hidden_dim() const override { return cfg_.hidden_dim; }
  const TinyEncoderConfig& config() const { return cfg_; }

  TokenSequence tokenize(std::string_view text, int max_len) const override {
    return hash_tokenize(text, max_len, cfg_.tokenizer);
  }

  HiddenStates encode(const TokenSequence& tokens) const override {
    check_ids(tokens);
    const Eigen::Index len = static_cast<Eigen::Index>(tokens.size());
    Eigen::VectorXd shared = U() * context(tokens.ids) + b();
    HiddenStates h{Eigen::MatrixXd(len, d())};
    for (Eigen::Index i = 0; i < len; ++i)
      h.matrix.row(i) = (W() * E().col(tokens.ids[static_cast<std::size_t>(i)]) + shared).array().tanh().transpose();
    return h;
  }

  // Pads to the longest sequence; padded slots are masked out of the context mean.
  std::vector<HiddenStates> encode_padded(std::span<const TokenSequence> batch) const override {
    std::size_t max_len = 0;
    for (const auto& t : batch) {
      check_ids(t);
      max_len = std::max(max_len, t.size());
    }
    const auto n = static_cast<Eigen::Index>(batch.size());
    const auto L = static_cast<Eigen::Index>(max_len);
    Eigen::MatrixXi ids = Eigen::MatrixXi::Constant(n, L, kPadId);
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(n, L);
    for (Eigen::Index r = 0; r < n; ++r)
      for (std::size_t c = 0; c < batch[static_cast<std::size_t>(r)].size(); ++c) {
        ids(r, static_cast<Eigen::Index>(c)) = batch[static_cast<std::size_t>(r)].ids[c];
        mask(r, static_cast<Eigen::Index>(c)) = 1.0;
      }
    std::vector<HiddenStates> out;
    out.reserve(batch.size());
    for (Eigen::Index r = 0; r < n; ++r) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(d());
      double count = 0;
      for (Eigen::Index c = 1; c < L; ++c) {
        if (mask(r, c) == 0.0) continue;
        sum += E().col(ids(r, c));
        count += 1.0;
      }
      Eigen::VectorXd ctx = count > 0 ? Eigen::VectorXd(sum / count) : sum;
      Eigen::VectorXd shared = U() * ctx + b();
      const auto len = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(r)].size());
      HiddenStates h{Eigen::MatrixXd(len, d())};
      for (Eigen::Index c = 0; c < len; ++c) h.matrix.row(c) = (W() * E().col(ids(r, c)) + shared).array().tanh().transpose();
      out.push_back(std::move(h));
    }
    return out;
  }

  std::uint64_t fingerprint() const override {
    std::uint64_t h = text::fnv1a(kId);
    const std::int64_t dims[] = {cfg_.hidden_dim, cfg_.tokenizer.vocab_buckets, cfg_.tokenizer.lowercase ? 1 : 0};
    h = text::fnv1a_bytes(dims, sizeof dims, h);
    return text::fnv1a_bytes(params_.data(), params_.size() * sizeof(double), h);
  }

  // ---- training interface ----------------------------------------------------

  // Values kept from the forward pass that the backward pass needs.
  struct Cache {
    std::vector<std::int32_t> ids;
    Eigen::VectorXd context;
    Eigen::VectorXd output;  // h_0
  };

  // Pooled embedding only (row 0 of encode()).
  EmbeddingVector forward(const TokenSequence& tokens, Cache* cache = nullptr) const {
    check_ids(tokens);
    Eigen::VectorXd ctx = context(tokens.ids);
    Eigen::VectorXd out = (W() * E().col(tokens.ids.front()) + U() * ctx + b()).array().tanh();
    if (cache) *cache = Cache{tokens.ids, ctx, out};
    return out;
  }

  // Accumulates d loss / d params into `grads` (same layout as parameters()).
  void backward(const Cache& cache, const Eigen::VectorXd& grad_output, std::span<double> grads) const {
    if (grads.size() != params_.size()) throw InputError("backward: gradient buffer has the wrong size");
    auto gE = map_mat(grads.data(), d(), vocab());
    auto gW = map_mat(grads.data() + off_W(), d(), d());
    auto gU = map_mat(grads.data() + off_U(), d(), d());
    Eigen::Map<Eigen::VectorXd> gb(grads.data() + off_b(), d());

    Eigen::VectorXd dz = grad_output.array() * (1.0 - cache.output.array().square());
    const auto first = cache.ids.front();
    gW.noalias() += dz * E().col(first).transpose();
    gU.noalias() += dz * cache.context.transpose();
    gb += dz;
    gE.col(first).noalias() += W().transpose() * dz;
    if (cache.ids.size() > 1) {
      Eigen::VectorXd dctx = U().transpose() * dz / static_cast<double>(cache.ids.size() - 1);
      for (std::size_t i = 1; i < cache.ids.size(); ++i) gE.col(cache.ids[i]) += dctx;
    }
  }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  void set_parameters(std::span<const double> p) {
    if (p.size() != params_.size())
      throw InputError("parameter blob has " + std::to_string(p.size()) + " values, expected " + std::to_string(params_.size()));
    params_.assign(p.begin(), p.end());
  }

  std::size_t parameter_count() const {
    const auto dd = static_cast<std::size_t>(cfg_.hidden_dim);
    return dd * static_cast<std::size_t>(cfg_.tokenizer.vocab_buckets) + 2 * dd * dd + dd;
  }

 private:
  using MapMat = Eigen::Map<Eigen::MatrixXd>;
  using CMapMat = Eigen::Map<const Eigen::MatrixXd>;

  static MapMat map_mat(double* p, Eigen::Index r, Eigen::Index c) { return MapMat(p, r, c); }

  Eigen::Index d() const { return cfg_.hidden_dim; }
  Eigen::Index vocab() const { return cfg_.tokenizer.vocab_buckets; }
  std::size_t off_W() const { return static_cast<std::size_t>(d() * vocab()); }
  std::size_t off_U() const { return off_W() + static_cast<std::size_t>(d() * d()); }
  std::size_t off_b() const { return off_U() + static_cast<std::size_t>(d() * d()); }

  // Layout: E (d x V, one column per token id) | W (d x d) | U (d x d) | b (d)
  CMapMat E() const { return CMapMat(params_.data(), d(), vocab()); }
  CMapMat W() const { return CMapMat(params_.data() + off_W(), d(), d()); }
  CMapMat U() const { return CMapMat(params_.data() + off_U(), d(), d()); }
  Eigen::Map<const Eigen::VectorXd> b() const { return Eigen::Map<const Eigen::VectorXd>(params_.data() + off_b(), d()); }

  Eigen::VectorXd context(const std::vector<std::int32_t>& ids) const {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d());
    if (ids.size() < 2) return sum;
    for (std::size_t i = 1; i < ids.size(); ++i) sum += E().col(ids[i]);
    return sum / static_cast<double>(ids.size() - 1);
  }

  void check_ids(const TokenSequence& tokens) const {
    if (tokens.ids.empty()) throw InputError("encode: empty token sequence");
    for (auto id : tokens.ids)
      if (id < 0 || id >= cfg_.tokenizer.vocab_buckets)
        throw InputError("token id " + std::to_string(id) + " outside vocabulary [0, " + std::to_string(cfg_.tokenizer.vocab_buckets) + ")");
  }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double dd = static_cast<double>(cfg_.hidden_dim);
    std::normal_distribution<double> emb(0.0, 0.1);
    std::normal_distribution<double> mix_token(0.0, 0.01 / std::sqrt(dd));
    std::normal_distribution<double> mix_ctx(0.0, 1.0 / std::sqrt(dd));
    std::size_t i = 0;
    for (; i < off_W(); ++i) params_[i] = emb(rng);
    for (; i < off_U(); ++i) params_[i] = mix_token(rng);
    for (; i < off_b(); ++i) params_[i] = mix_ctx(rng);
    for (; i < params_.size(); ++i) params_[i] = 0.0;
  }

  TinyEncoderConfig cfg_;
  std::vector<double> params_;
};

// Pretrained masked-LM encoders recognised by name. Their hidden size and
// learning rate are known; running them needs a transformer runtime that this
// build does not bundle.
struct PretrainedBackboneInfo {
  std::string name;
  int hidden_dim;
  double default_lr;
};

inline const std::vector<PretrainedBackboneInfo>& pretrained_backbones() {
  static const std::vector<PretrainedBackboneInfo> known = {
      {"bert-base-uncased", 768, 1e-5},
      {"roberta-base", 768, 1e-5},
      {"roberta-large", 1024, 5e-6},
  };
  return known;
}

inline const PretrainedBackboneInfo* find_pretrained(std::string_view name) {
  for (const auto& b : pretrained_backbones())
    if (b.name == name) return &b;
  return nullptr;
}

// Learning rate for the tiny backbone; the pretrained ones carry their own.
inline constexpr double kTinyDefaultLr = 1e-2;

inline double default_learning_rate(std::string_view backbone) {
  if (backbone == TinyEncoder::kId) return kTinyDefaultLr;
  if (const auto* b = find_pretrained(backbone)) return b->default_lr;
  throw ConfigError("unknown backbone '" + std::string(backbone) + "'");
}

inline std::unique_ptr<TinyEncoder> make_tiny_backbone(std::string_view backbone, const TinyEncoderConfig& cfg) {
  if (backbone == TinyEncoder::kId) return std::make_unique<TinyEncoder>(cfg);
  if (find_pretrained(backbone))
    throw RuntimeFailure("backbone '" + std::string(backbone) +
                         "' needs a pretrained transformer runtime, which this build does not include; use 'tiny'");
  throw ConfigError("unknown backbone '" + std::string(backbone) + "'");
}

}  // namespace mico
