#pragma once
// Downstream scoring of learned representations:
//   * zero-shot multiple choice: pick the choice most similar to the query
//   * inductive KG completion: rank the gold entity for (h, r, ?) and (t, r⁻¹, ?)
//   * top-K retrieval over an index of alternative texts

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mico/ckg.hpp"
#include "mico/encoder.hpp"
#include "mico/errors.hpp"
#include "mico/io.hpp"
#include "mico/loss.hpp"

namespace mico {

struct EvalConfig {
  SimilarityKind similarity = SimilarityKind::cosine;
  int max_len = kDefaultMaxLen;
  int batch_size = 64;
  bool filtered = true;
};

// ---- multiple-choice QA ------------------------------------------------------

struct QAItem {
  std::string query;
  std::vector<std::string> choices;
  int gold_index = 0;

  void validate() const {
    if (choices.empty()) throw InputError("QA item has no choices");
    if (choices.size() < 2) throw InputError("QA item needs at least 2 choices");
    if (gold_index < 0 || gold_index >= static_cast<int>(choices.size()))
      throw InputError("gold_index " + std::to_string(gold_index) + " out of range");
  }
};

enum class CopaQuestion { cause, effect };

inline CopaQuestion parse_copa_question(std::string_view s) {
  if (s == "cause") return CopaQuestion::cause;
  if (s == "effect") return CopaQuestion::effect;
  throw InputError("unknown COPA question type '" + std::string(s) + "' (expected cause or effect)");
}

inline constexpr std::string_view kCopaCauseConnector = "The cause for it was that";
inline constexpr std::string_view kCopaEffectConnector = "As a result";

inline QAItem render_copa(std::string_view premise, CopaQuestion question, std::vector<std::string> choices, int gold_index = 0) {
  auto connector = question == CopaQuestion::cause ? kCopaCauseConnector : kCopaEffectConnector;
  return QAItem{text::join_segments({premise, connector}), std::move(choices), gold_index};
}

// Context and question concatenated as the query, no connector.
inline std::string render_context_question(std::string_view context, std::string_view question) {
  return text::join_segments({context, question});
}

// Argmax; ties go to the lowest index.
template <typename Derived>
int argmax_first(const Eigen::DenseBase<Derived>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

inline int predict_choice_from_embeddings(const EmbeddingVector& query, const EmbeddingBatch& choices, SimilarityKind kind) {
  if (choices.rows() == 0) throw InputError("no choices to score");
  Eigen::VectorXd sims(choices.rows());
  for (Eigen::Index i = 0; i < choices.rows(); ++i) sims(i) = similarity(query, choices.row(i).transpose(), kind);
  return argmax_first(sims);
}

inline int predict_choice(const QAItem& item, const Backbone& encoder, const EvalConfig& cfg) {
  if (item.choices.empty()) throw InputError("QA item has no choices");
  EmbeddingVector q = encoder.embed(item.query, cfg.max_len);
  EmbeddingBatch c = encode_batch(encoder, item.choices, cfg.max_len, cfg.batch_size);
  return predict_choice_from_embeddings(q, c, cfg.similarity);
}

struct QAReport {
  double accuracy = 0.0;
  std::vector<int> predictions;
};

inline QAReport evaluate_qa(const std::vector<QAItem>& items, const Backbone& encoder, const EvalConfig& cfg) {
  if (items.empty()) throw InputError("no QA items");
  QAReport r;
  std::size_t correct = 0;
  for (const auto& it : items) {
    it.validate();
    int p = predict_choice(it, encoder, cfg);
    r.predictions.push_back(p);
    if (p == it.gold_index) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
  return r;
}

// JSON-lines, one item per line, in one of three shapes:
//   {"query": ..., "choices": [...], "gold_index": n}
//   {"premise": ..., "question_type": "cause"|"effect", "choices": [...], "gold_index": n}
//   {"context": ..., "question": ..., "choices": [...], "gold_index": n}
inline std::vector<QAItem> read_qa_jsonl(std::istream& in, const std::string& source = "<qa>") {
  std::vector<QAItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto where = source + ":" + std::to_string(lineno) + ": ";
    try {
      auto j = nlohmann::json::parse(line);
      auto choices = j.at("choices").get<std::vector<std::string>>();
      int gold = j.at("gold_index").get<int>();
      QAItem item;
      if (j.contains("query")) {
        item = QAItem{j.at("query").get<std::string>(), std::move(choices), gold};
      } else if (j.contains("premise")) {
        item = render_copa(j.at("premise").get<std::string>(), parse_copa_question(j.at("question_type").get<std::string>()),
                           std::move(choices), gold);
      } else if (j.contains("context")) {
        item = QAItem{render_context_question(j.at("context").get<std::string>(), j.value("question", std::string())),
                      std::move(choices), gold};
      } else {
        throw InputError("item needs 'query', 'premise' + 'question_type', or 'context'");
      }
      item.validate();
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + e.what());
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
  }
  return items;
}

inline std::vector<QAItem> read_qa_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open QA file " + path.string());
  return read_qa_jsonl(in, path.string());
}

// ---- ranking -----------------------------------------------------------------

struct RankingQuery {
  std::string premise;
  std::string gold;
  std::vector<std::string> candidates;
  Direction direction = Direction::forward;
  std::unordered_set<std::string> filter_set;  // other known-true answers
};

struct RankingResult {
  std::vector<int> ranks;  // 1-based, one per query
  double mrr = 0.0;        // fraction in (0, 1]
  double hits_at_10 = 0.0; // fraction in [0, 1]

  double mrr_percent() const { return 100.0 * mrr; }
  double hits_at_10_percent() const { return 100.0 * hits_at_10; }
};

inline RankingResult aggregate_ranks(std::vector<int> ranks, int hits_k = 10) {
  RankingResult r;
  r.ranks = std::move(ranks);
  if (r.ranks.empty()) return r;
  double rr = 0;
  std::size_t hits = 0;
  for (int rank : r.ranks) {
    rr += 1.0 / static_cast<double>(rank);
    if (rank <= hits_k) ++hits;
  }
  r.mrr = rr / static_cast<double>(r.ranks.size());
  r.hits_at_10 = static_cast<double>(hits) / static_cast<double>(r.ranks.size());
  return r;
}

// 1-based rank of scores[gold]. Candidates with exclude[i] set are skipped.
// Ties are pessimistic: every other candidate scoring >= gold ranks above it.
inline int rank_from_scores(std::span<const double> scores, std::size_t gold, std::span<const char> exclude = {}) {
  if (gold >= scores.size()) throw InputError("gold index out of range");
  int rank = 1;
  const double g = scores[gold];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == gold) continue;
    if (!exclude.empty() && exclude[i]) continue;
    if (scores[i] >= g) ++rank;
  }
  return rank;
}

// Ranks with precomputed candidate embeddings (rows aligned with query.candidates).
inline int rank_gold_embedded(const RankingQuery& query, const EmbeddingVector& premise, const EmbeddingBatch& candidates,
                              SimilarityKind kind, bool filtered) {
  auto gold_it = std::find(query.candidates.begin(), query.candidates.end(), query.gold);
  if (gold_it == query.candidates.end()) throw InputError("gold '" + query.gold + "' is not among the candidates");
  const auto gold = static_cast<std::size_t>(gold_it - query.candidates.begin());
  std::vector<double> scores(query.candidates.size());
  std::vector<char> exclude(query.candidates.size(), 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = similarity(premise, candidates.row(static_cast<Eigen::Index>(i)).transpose(), kind);
    if (i == gold) continue;
    if (query.candidates[i] == query.gold) exclude[i] = 1;  // duplicate of the gold text
    else if (filtered && query.filter_set.contains(query.candidates[i])) exclude[i] = 1;
  }
  return rank_from_scores(scores, gold, exclude);
}

inline int rank_gold(const RankingQuery& query, const Backbone& encoder, const EvalConfig& cfg) {
  if (std::find(query.candidates.begin(), query.candidates.end(), query.gold) == query.candidates.end())
    throw InputError("gold '" + query.gold + "' is not among the candidates");
  EmbeddingVector p = encoder.embed(query.premise, cfg.max_len);
  EmbeddingBatch c = encode_batch(encoder, query.candidates, cfg.max_len, cfg.batch_size);
  return rank_gold_embedded(query, p, c, cfg.similarity, cfg.filtered);
}

struct CkgcQueryResult {
  std::size_t triple_index = 0;
  Direction direction = Direction::forward;
  std::string premise;
  std::string gold;
  int rank = 0;
};

struct CkgcReport {
  RankingResult result;
  std::vector<CkgcQueryResult> queries;
  std::size_t candidate_pool = 0;
};

// Each test triple yields (h, r, ?) and (t, r⁻¹, ?). The candidate pool is
// every entity of `graph` rendered as an answer for that relation and
// direction. With cfg.filtered, answers known true anywhere in `graph`
// (other than the gold) are removed before ranking.
inline CkgcReport ckgc_evaluate(const std::vector<Triple>& test_triples, const Graph& graph, const Backbone& encoder,
                                const EvalConfig& cfg) {
  const auto& reg = graph.relations;
  const bool subst = reg.person_substitution();

  // Known-true answers, keyed by the raw query node.
  std::map<std::tuple<Direction, std::string, std::string>, std::unordered_set<std::string>> known;
  for (const auto& t : graph.triples) {
    known[{Direction::forward, t.relation, t.head.text}].insert(t.tail.text);
    known[{Direction::reverse, t.relation, t.tail.text}].insert(t.head.text);
  }

  std::unordered_map<std::string, EmbeddingVector> emb_cache;
  auto embed_all = [&](const std::vector<std::string>& texts) {
    std::vector<std::string> missing;
    std::unordered_set<std::string> queued;
    for (const auto& t : texts)
      if (!emb_cache.contains(t) && queued.insert(t).second) missing.push_back(t);
    if (missing.empty()) return;
    EmbeddingBatch m = encode_batch(encoder, missing, cfg.max_len, cfg.batch_size);
    for (std::size_t i = 0; i < missing.size(); ++i) emb_cache.emplace(missing[i], m.row(static_cast<Eigen::Index>(i)).transpose());
  };

  // Candidate pools per (relation, direction): rendering depends on both.
  struct Pool {
    std::vector<std::string> texts;
    std::unordered_map<std::string, std::string> by_entity;  // raw entity -> rendered
    EmbeddingBatch embeddings;
  };
  std::map<std::pair<std::string, Direction>, Pool> pools;
  auto pool_for = [&](const Relation& rel, Direction dir) -> Pool& {
    auto key = std::pair{rel.name, dir};
    auto it = pools.find(key);
    if (it != pools.end()) return it->second;
    Pool p;
    std::unordered_set<std::string> seen;
    for (const auto& e : graph.entities) {
      auto r = render_alternative(e.text, rel, dir, subst);
      p.by_entity.emplace(e.text, r);
      if (seen.insert(r).second) p.texts.push_back(r);
    }
    embed_all(p.texts);
    p.embeddings.resize(static_cast<Eigen::Index>(p.texts.size()), encoder.hidden_dim());
    for (std::size_t i = 0; i < p.texts.size(); ++i) p.embeddings.row(static_cast<Eigen::Index>(i)) = emb_cache.at(p.texts[i]).transpose();
    return pools.emplace(key, std::move(p)).first->second;
  };

  CkgcReport report;
  std::vector<int> ranks;
  for (std::size_t ti = 0; ti < test_triples.size(); ++ti) {
    const auto& t = test_triples[ti];
    const Relation* rel = reg.find(t.relation);
    if (!rel) throw InputError("test triple #" + std::to_string(ti) + ": unknown relation '" + t.relation + "'");
    for (Direction dir : {Direction::forward, Direction::reverse}) {
      const std::string& node = dir == Direction::forward ? t.head.text : t.tail.text;
      const std::string& answer = dir == Direction::forward ? t.tail.text : t.head.text;
      Pool& pool = pool_for(*rel, dir);
      if (!pool.by_entity.contains(answer))
        throw InputError("test triple #" + std::to_string(ti) + ": answer entity missing from the graph");
      RankingQuery q;
      q.premise = render_premise(node, *rel, dir, subst);
      q.gold = pool.by_entity.at(answer);
      q.direction = dir;
      q.candidates = pool.texts;
      if (auto it = known.find({dir, t.relation, node}); it != known.end())
        for (const auto& other : it->second) q.filter_set.insert(pool.by_entity.count(other) ? pool.by_entity.at(other) : other);
      embed_all({q.premise});
      int rank = rank_gold_embedded(q, emb_cache.at(q.premise), pool.embeddings, cfg.similarity, cfg.filtered);
      ranks.push_back(rank);
      report.queries.push_back({ti, dir, q.premise, q.gold, rank});
      report.candidate_pool = std::max(report.candidate_pool, pool.texts.size());
    }
  }
  report.result = aggregate_ranks(std::move(ranks));
  return report;
}

// ---- retrieval -----------------------------------------------------------------

inline constexpr char kIndexMagic[] = "MICOIDX1";
inline constexpr std::uint32_t kIndexVersion = 1;

struct RetrievalIndex {
  std::string backbone;
  std::uint64_t fingerprint = 0;
  std::vector<std::string> texts;
  EmbeddingBatch embeddings;  // row i embeds texts[i]

  std::size_t size() const { return texts.size(); }

  void save(const std::filesystem::path& path) const {
    io::write_atomically(path, [&](std::ostream& out) {
      io::BinaryWriter w(out);
      w.bytes(kIndexMagic, 8);
      w.u32(kIndexVersion);
      w.str(backbone);
      w.u64(fingerprint);
      w.u64(texts.size());
      w.u64(static_cast<std::uint64_t>(embeddings.cols()));
      for (const auto& t : texts) w.str(t);
      // row-major embedding rows
      for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
        for (Eigen::Index c = 0; c < embeddings.cols(); ++c) w.f64(embeddings(r, c));
    });
  }

  static RetrievalIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open index " + path.string());
    io::BinaryReader r(in, path.string());
    r.expect_magic(std::string_view(kIndexMagic, 8));
    if (auto v = r.u32(); v != kIndexVersion) throw InputError(path.string() + ": unsupported index version " + std::to_string(v));
    RetrievalIndex idx;
    idx.backbone = r.str();
    idx.fingerprint = r.u64();
    const auto n = r.u64();
    const auto d = r.u64();
    if (n > (1ULL << 31) || d > (1ULL << 20)) throw InputError(path.string() + ": corrupt index header");
    idx.texts.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) idx.texts.push_back(r.str());
    idx.embeddings.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index row = 0; row < idx.embeddings.rows(); ++row)
      for (Eigen::Index c = 0; c < idx.embeddings.cols(); ++c) idx.embeddings(row, c) = r.f64();
    return idx;
  }

  // Rejects an encoder other than the one that built the index.
  void check_encoder(const Backbone& encoder) const {
    if (encoder.fingerprint() != fingerprint || encoder.id() != backbone)
      throw InputError("index was built with a different encoder (fingerprint mismatch)");
  }
};

// Encodes each distinct text once, in first-seen order.
inline RetrievalIndex build_index(const std::vector<std::string>& alternatives, const Backbone& encoder, const EvalConfig& cfg) {
  if (alternatives.empty()) throw InputError("cannot build an index over no alternatives");
  RetrievalIndex idx;
  idx.backbone = encoder.id();
  idx.fingerprint = encoder.fingerprint();
  std::unordered_set<std::string> seen;
  for (const auto& a : alternatives)
    if (seen.insert(a).second) idx.texts.push_back(a);
  idx.embeddings = encode_batch(encoder, idx.texts, cfg.max_len, cfg.batch_size);
  return idx;
}

struct ScoredText {
  std::string text;
  double score = 0.0;
};

// K best rows by similarity, descending; equal scores keep index order.
inline std::vector<ScoredText> top_k(std::string_view query, const RetrievalIndex& index, int K, const Backbone& encoder,
                                     const EvalConfig& cfg) {
  if (K < 1) throw ConfigError("top-k must be >= 1");
  index.check_encoder(encoder);
  EmbeddingVector q = encoder.embed(query, cfg.max_len);
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    scores[i] = similarity(q, index.embeddings.row(static_cast<Eigen::Index>(i)).transpose(), cfg.similarity);
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(K), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<ScoredText> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back({index.texts[order[i]], scores[order[i]]});
  return out;
}

}  // namespace mico
