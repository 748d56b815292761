#pragma once
// A small synthetic commonsense graph with planted structure, for tests and
// demos that must run without the real datasets.
//
// Head entities are two-word phrases over a small "head" vocabulary. Each
// relation r has two word maps (variants a and b) from head words to its own
// tail vocabulary, and a head "w1 w2" under r links to the tails
// "a_r(w1) a_r(w2)" and "b_r(w1) b_r(w2)". Every forward premise therefore
// has two alternatives. Valid and test heads never occur in training, but
// every (word, relation) they use does, so the split is inductive while
// remaining learnable from text.

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mico/ckg.hpp"
#include "mico/errors.hpp"
#include "mico/evaluation.hpp"

namespace mico {

struct SyntheticOptions {
  std::uint64_t seed = 7;
  int head_words = 12;
  int heads = 40;  // 40 heads x 2 relations x 2 tails + 40 = 200 entities
  int relations_per_head = 2;
  int valid_heads = 4;
  int test_heads = 8;
};

struct SyntheticCkg {
  TemplateRegistry registry;
  Graph train;
  Graph valid;
  Graph test;

  Graph full() const { return union_graphs({&train, &valid, &test}); }
};

inline TemplateRegistry synthetic_registry() {
  TemplateRegistry reg;
  reg.add({"Produces", "tends to produce", "arises out of", ""});
  reg.add({"Requires", "usually requires", "supports doing", ""});
  reg.add({"Becomes", "eventually becomes", "develops from", ""});
  return reg;
}

namespace detail {

inline std::vector<std::string> pseudo_words(std::size_t n, std::mt19937_64& rng, std::unordered_set<std::string>& used) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::uniform_int_distribution<std::size_t> c(0, consonants.size() - 1);
  std::uniform_int_distribution<std::size_t> v(0, vowels.size() - 1);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    for (int syl = 0; syl < 3; ++syl) {
      w.push_back(consonants[c(rng)]);
      w.push_back(vowels[v(rng)]);
    }
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace detail

inline SyntheticCkg make_synthetic_ckg(const SyntheticOptions& opt = {}) {
  if (opt.head_words < 2) throw ConfigError("synthetic graph needs at least 2 head words");
  const int max_pairs = opt.head_words * (opt.head_words - 1) / 2;
  if (opt.heads > max_pairs) throw ConfigError("not enough distinct head-word pairs for the requested heads");
  if (opt.valid_heads + opt.test_heads >= opt.heads) throw ConfigError("valid + test heads must leave training heads");

  SyntheticCkg out;
  out.registry = synthetic_registry();
  const auto& rels = out.registry.relations();
  const int n_rel = static_cast<int>(rels.size());
  if (opt.relations_per_head < 1 || opt.relations_per_head > n_rel) throw ConfigError("relations_per_head out of range");

  std::mt19937_64 rng(opt.seed);
  std::unordered_set<std::string> used;
  auto head_vocab = detail::pseudo_words(static_cast<std::size_t>(opt.head_words), rng, used);
  // tail_map[r][variant][w]
  std::vector<std::array<std::vector<std::string>, 2>> tail_map(static_cast<std::size_t>(n_rel));
  for (auto& variants : tail_map)
    for (auto& m : variants) m = detail::pseudo_words(head_vocab.size(), rng, used);

  struct Head {
    int w1, w2;  // word order as written
    std::vector<int> relations;
  };
  std::vector<std::pair<int, int>> all_pairs;
  for (int a = 0; a < opt.head_words; ++a)
    for (int b = a + 1; b < opt.head_words; ++b) all_pairs.emplace_back(a, b);

  std::vector<int> rel_ids(static_cast<std::size_t>(n_rel));
  for (int r = 0; r < n_rel; ++r) rel_ids[static_cast<std::size_t>(r)] = r;

  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::shuffle(all_pairs.begin(), all_pairs.end(), rng);
    std::vector<Head> heads;
    for (int h = 0; h < opt.heads; ++h) {
      auto [a, b] = all_pairs[static_cast<std::size_t>(h)];
      if (std::bernoulli_distribution(0.5)(rng)) std::swap(a, b);
      std::shuffle(rel_ids.begin(), rel_ids.end(), rng);
      std::vector<int> chosen(rel_ids.begin(), rel_ids.begin() + opt.relations_per_head);
      std::sort(chosen.begin(), chosen.end());
      heads.push_back({a, b, chosen});
    }
    // heads [0, test) -> test, [test, test+valid) -> valid, rest -> train
    const auto held_out = static_cast<std::size_t>(opt.test_heads + opt.valid_heads);
    std::set<std::pair<int, int>> covered;  // (word, relation) seen in training
    for (std::size_t h = held_out; h < heads.size(); ++h)
      for (int r : heads[h].relations) {
        covered.emplace(heads[h].w1, r);
        covered.emplace(heads[h].w2, r);
      }
    bool ok = true;
    for (std::size_t h = 0; h < held_out && ok; ++h)
      for (int r : heads[h].relations)
        if (!covered.contains({heads[h].w1, r}) || !covered.contains({heads[h].w2, r})) ok = false;
    if (!ok) continue;

    auto emit = [&](const Head& h, Graph& g) {
      std::string head_text = head_vocab[static_cast<std::size_t>(h.w1)] + " " + head_vocab[static_cast<std::size_t>(h.w2)];
      for (int r : h.relations)
        for (const auto& m : tail_map[static_cast<std::size_t>(r)]) {
          std::string tail_text = m[static_cast<std::size_t>(h.w1)] + " " + m[static_cast<std::size_t>(h.w2)];
          g.add_triple(Triple{Entity{head_text}, rels[static_cast<std::size_t>(r)].name, Entity{tail_text}});
        }
    };
    for (Graph* g : {&out.train, &out.valid, &out.test}) g->relations = out.registry;
    out.train.split = Split::train;
    out.valid.split = Split::valid;
    out.test.split = Split::test;
    for (std::size_t h = held_out; h < heads.size(); ++h) emit(heads[h], out.train);
    for (std::size_t h = static_cast<std::size_t>(opt.test_heads); h < held_out; ++h) emit(heads[h], out.valid);
    for (std::size_t h = 0; h < static_cast<std::size_t>(opt.test_heads); ++h) emit(heads[h], out.test);
    return out;
  }
  throw RuntimeFailure("could not draw an inductive split covering the held-out vocabulary");
}

// Multiple-choice items over training premises: the gold choice is one of the
// premise's trained alternatives, the distractors are alternatives of other
// forward premises.
inline std::vector<QAItem> make_synthetic_qa(const Graph& train, std::size_t n_items = 50, std::size_t n_choices = 4,
                                             std::uint64_t seed = 11) {
  std::vector<SequencePair> fwd;
  for (const auto& p : convert(train))
    if (p.direction == Direction::forward) fwd.push_back(p);
  auto groups = group_by_premise(fwd);
  if (groups.size() < n_choices) throw InputError("too few premises for the requested number of choices");
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  std::vector<QAItem> items;
  for (std::size_t i = 0; i < groups.size() && items.size() < n_items; ++i) {
    const auto& g = groups[i];
    std::unordered_set<std::string> own(g.alternatives.begin(), g.alternatives.end());
    std::uniform_int_distribution<std::size_t> pick_alt(0, g.alternatives.size() - 1);
    QAItem item;
    item.query = g.premise;
    item.choices.push_back(g.alternatives[pick_alt(rng)]);
    std::uniform_int_distribution<std::size_t> pick_group(0, groups.size() - 1);
    while (item.choices.size() < n_choices) {
      const auto& other = groups[pick_group(rng)];
      if (other.premise == g.premise) continue;
      const auto& cand = other.alternatives[std::uniform_int_distribution<std::size_t>(0, other.alternatives.size() - 1)(rng)];
      if (own.contains(cand) || std::find(item.choices.begin(), item.choices.end(), cand) != item.choices.end()) continue;
      item.choices.push_back(cand);
    }
    std::vector<std::size_t> perm(item.choices.size());
    for (std::size_t p = 0; p < perm.size(); ++p) perm[p] = p;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> shuffled(item.choices.size());
    for (std::size_t p = 0; p < perm.size(); ++p) {
      shuffled[p] = item.choices[perm[p]];
      if (perm[p] == 0) item.gold_index = static_cast<int>(p);
    }
    item.choices = std::move(shuffled);
    items.push_back(std::move(item));
  }
  return items;
}

inline void write_triples_tsv(std::ostream& out, const Graph& g) {
  for (const auto& t : g.triples) out << t.relation << '\t' << t.head.text << '\t' << t.tail.text << '\n';
}

inline void write_registry(std::ostream& out, const TemplateRegistry& reg) {
  out << "person_substitution = " << (reg.person_substitution() ? "true" : "false") << "\n";
  for (const auto& r : reg.relations()) {
    out << "\nname = " << r.name << "\nforward = " << r.forward_template << "\n";
    if (!r.reverse_prefix.empty()) out << "reverse_prefix = " << r.reverse_prefix << "\n";
    if (!r.reverse_suffix.empty()) out << "reverse_suffix = " << r.reverse_suffix << "\n";
  }
}

inline void write_qa_jsonl(std::ostream& out, const std::vector<QAItem>& items) {
  for (const auto& it : items)
    out << nlohmann::json{{"query", it.query}, {"choices", it.choices}, {"gold_index", it.gold_index}}.dump() << '\n';
}

}  // namespace mico
