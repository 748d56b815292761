#pragma once
// Commonsense knowledge graph triples and their conversion into
// premise/alternative sequence pairs through relation templates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mico/errors.hpp"
#include "mico/text.hpp"

namespace mico {

enum class Direction { forward, reverse };

inline std::string_view to_string(Direction d) { return d == Direction::forward ? "forward" : "reverse"; }

inline Direction parse_direction(std::string_view s) {
  if (s == "forward") return Direction::forward;
  if (s == "reverse") return Direction::reverse;
  throw InputError("unknown direction '" + std::string(s) + "'");
}

enum class Split { train, valid, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "'");
}

struct Entity {
  std::string text;

  // Trims and validates a raw node description.
  static Entity from_text(std::string_view raw) {
    auto t = text::trim(raw);
    if (t.empty()) throw InputError("entity text is empty");
    return Entity{std::string(t)};
  }

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Relation {
  std::string name;
  std::string forward_template;
  std::string reverse_prefix;
  std::string reverse_suffix;  // empty for single-segment reverse templates

  void validate() const {
    if (text::trim(name).empty()) throw InputError("relation name is empty");
    if (text::trim(forward_template).empty())
      throw InputError("relation '" + name + "' has an empty forward template");
    if (text::trim(reverse_prefix).empty() && text::trim(reverse_suffix).empty())
      throw InputError("relation '" + name + "' has an empty reverse template");
  }
};

class TemplateRegistry {
 public:
  void add(Relation r) {
    r.validate();
    if (index_.contains(r.name)) throw InputError("duplicate relation '" + r.name + "' in registry");
    index_.emplace(r.name, relations_.size());
    relations_.push_back(std::move(r));
  }

  const Relation* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &relations_[it->second];
  }

  const Relation& at(std::string_view name) const {
    if (const Relation* r = find(name)) return *r;
    throw InputError("unknown relation '" + std::string(name) + "'");
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }
  const std::vector<Relation>& relations() const { return relations_; }
  std::size_t size() const { return relations_.size(); }

  // PersonX/PersonY -> John/Tom after template assembly. On for ATOMIC-style registries.
  bool person_substitution() const { return person_substitution_; }
  void set_person_substitution(bool on) { person_substitution_ = on; }

  // Line-oriented key = value records:
  //
  //   person_substitution = true        (optional, before the first record)
  //
  //   name = xWant
  //   forward = as a result, PersonX wants
  //   reverse_prefix = PersonX wants
  //   reverse_suffix = because PersonX
  //
  // '#' starts a comment line. Each `name` key opens a new record.
  static TemplateRegistry parse(std::istream& in, const std::string& source = "<registry>") {
    TemplateRegistry reg;
    std::optional<Relation> cur;
    std::size_t cur_line = 0;
    auto flush = [&] {
      if (!cur) return;
      try {
        reg.add(std::move(*cur));
      } catch (const InputError& e) {
        throw InputError(source + ":" + std::to_string(cur_line) + ": " + e.what());
      }
      cur.reset();
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto t = text::trim(line);
      if (t.empty() || t.front() == '#') continue;
      auto eq = t.find('=');
      auto where = source + ":" + std::to_string(lineno) + ": ";
      if (eq == std::string_view::npos) throw InputError(where + "expected 'key = value'");
      std::string key(text::trim(t.substr(0, eq)));
      std::string value(text::trim(t.substr(eq + 1)));
      if (key == "name") {
        flush();
        cur = Relation{value, "", "", ""};
        cur_line = lineno;
      } else if (key == "person_substitution") {
        if (cur) throw InputError(where + "person_substitution must precede the first record");
        if (value == "true" || value == "on" || value == "1") reg.person_substitution_ = true;
        else if (value == "false" || value == "off" || value == "0") reg.person_substitution_ = false;
        else throw InputError(where + "bad boolean '" + value + "'");
      } else {
        if (!cur) throw InputError(where + "field '" + key + "' outside a record");
        if (key == "forward") cur->forward_template = value;
        else if (key == "reverse_prefix") cur->reverse_prefix = value;
        else if (key == "reverse_suffix") cur->reverse_suffix = value;
        else throw InputError(where + "unknown field '" + key + "'");
      }
    }
    flush();
    return reg;
  }

  static TemplateRegistry from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open registry " + path.string());
    return parse(in, path.string());
  }

 private:
  std::vector<Relation> relations_;
  std::unordered_map<std::string, std::size_t> index_;
  bool person_substitution_ = false;
};

struct Triple {
  Entity head;
  std::string relation;
  Entity tail;
};

struct Graph {
  std::vector<Entity> entities;
  TemplateRegistry relations;
  std::vector<Triple> triples;
  Split split = Split::train;

  // Adds the entity unless an identical text is already present.
  void add_entity(const Entity& e) {
    if (entity_index_.emplace(e.text, entities.size()).second) entities.push_back(e);
  }
  bool has_entity(std::string_view text) const { return entity_index_.contains(std::string(text)); }

  void add_triple(Triple t) {
    add_entity(t.head);
    add_entity(t.tail);
    triples.push_back(std::move(t));
  }

 private:
  std::unordered_map<std::string, std::size_t> entity_index_;
};

// Entities and triples of several splits in one graph (train, then valid, then test).
inline Graph union_graphs(const std::vector<const Graph*>& parts) {
  Graph all;
  if (!parts.empty()) all.relations = parts.front()->relations;
  for (const Graph* g : parts) {
    for (const Entity& e : g->entities) all.add_entity(e);
    for (const Triple& t : g->triples) all.triples.push_back(t);
  }
  return all;
}

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  Graph graph;
  std::vector<RowError> errors;
};

// Reads `relation<TAB>head<TAB>tail` rows. Bad rows are reported, not fatal;
// callers decide whether any error aborts the job.
inline LoadResult load_triples(std::istream& in, const TemplateRegistry& registry, Split split) {
  LoadResult res;
  res.graph.relations = registry;
  res.graph.split = split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    auto fields = text::split(line, '\t');
    if (fields.size() != 3) {
      res.errors.push_back({lineno, "expected 3 tab-separated fields, got " + std::to_string(fields.size())});
      continue;
    }
    std::string relation(text::trim(fields[0]));
    if (!registry.contains(relation)) {
      res.errors.push_back({lineno, "unknown relation '" + relation + "'"});
      continue;
    }
    try {
      res.graph.add_triple(Triple{Entity::from_text(fields[1]), relation, Entity::from_text(fields[2])});
    } catch (const InputError& e) {
      res.errors.push_back({lineno, e.what()});
    }
  }
  return res;
}

inline LoadResult load_triples(const std::filesystem::path& path, const TemplateRegistry& registry, Split split) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open triples file " + path.string());
  return load_triples(in, registry, split);
}

// Loads a split and fails on the first bad row.
inline Graph load_triples_strict(const std::filesystem::path& path, const TemplateRegistry& registry, Split split) {
  auto res = load_triples(path, registry, split);
  if (!res.errors.empty()) {
    const auto& e = res.errors.front();
    throw InputError(path.string() + ":" + std::to_string(e.line) + ": " + e.message);
  }
  return std::move(res.graph);
}

inline std::string substitute_persons(std::string s) {
  s = text::replace_all(std::move(s), "PersonX", "John");
  return text::replace_all(std::move(s), "PersonY", "Tom");
}

struct SequencePair {
  std::string premise;
  std::string alternative;
  Direction direction = Direction::forward;
  std::size_t source_triple_id = 0;

  friend bool operator==(const SequencePair&, const SequencePair&) = default;
};

// Alternative text for `node` when it is the answer side of `relation` in
// `dir`. A reverse suffix that ends with the subject placeholder ("because
// PersonX") already verbalizes the head's leading subject, so that word is
// elided from the head: "PersonX repels PersonY's attack" -> "repels PersonY's attack".
inline std::string render_alternative(std::string_view node, const Relation& relation, Direction dir,
                                      bool person_substitution) {
  std::string out(text::trim(node));
  if (dir == Direction::reverse && !relation.reverse_suffix.empty()) {
    auto suffix_words = text::split_whitespace(relation.reverse_suffix);
    auto node_words = text::split_whitespace(out);
    if (!suffix_words.empty() && node_words.size() > 1 && node_words.front() == suffix_words.back()) {
      out = std::string(text::trim(std::string_view(out).substr(node_words.front().size())));
    }
  }
  return person_substitution ? substitute_persons(std::move(out)) : out;
}

inline std::string render_premise(std::string_view node, const Relation& relation, Direction dir,
                                  bool person_substitution) {
  // A lone reverse segment reads after the node, like a forward template.
  std::string out;
  if (dir == Direction::forward) out = text::join_segments({node, relation.forward_template});
  else if (relation.reverse_suffix.empty()) out = text::join_segments({node, relation.reverse_prefix});
  else out = text::join_segments({relation.reverse_prefix, node, relation.reverse_suffix});
  return person_substitution ? substitute_persons(std::move(out)) : out;
}

// (h, r, t) -> forward (h + r, t) and reverse (r⁻¹ around t, h).
inline std::pair<SequencePair, SequencePair> triple_to_pairs(const Triple& triple, const TemplateRegistry& registry,
                                                             std::size_t triple_id = 0) {
  const Relation& r = registry.at(triple.relation);
  const bool subst = registry.person_substitution();
  SequencePair fwd{render_premise(triple.head.text, r, Direction::forward, subst),
                   render_alternative(triple.tail.text, r, Direction::forward, subst), Direction::forward, triple_id};
  SequencePair rev{render_premise(triple.tail.text, r, Direction::reverse, subst),
                   render_alternative(triple.head.text, r, Direction::reverse, subst), Direction::reverse, triple_id};
  return {std::move(fwd), std::move(rev)};
}

// Two pairs per triple, in row order; source_triple_id is the row index in `graph.triples`.
inline std::vector<SequencePair> convert(const Graph& graph) {
  std::vector<SequencePair> pairs;
  pairs.reserve(graph.triples.size() * 2);
  for (std::size_t i = 0; i < graph.triples.size(); ++i) {
    auto [fwd, rev] = triple_to_pairs(graph.triples[i], graph.relations, i);
    pairs.push_back(std::move(fwd));
    pairs.push_back(std::move(rev));
  }
  return pairs;
}

struct PremiseGroup {
  std::string premise;
  std::vector<std::string> alternatives;  // deduplicated, insertion order
};

inline std::vector<PremiseGroup> group_by_premise(const std::vector<SequencePair>& pairs) {
  std::vector<PremiseGroup> groups;
  std::unordered_map<std::string, std::size_t> by_premise;
  std::unordered_set<std::string> seen_pair;
  for (const auto& p : pairs) {
    std::string key = p.premise;
    key.push_back('\0');
    key += p.alternative;
    if (!seen_pair.insert(std::move(key)).second) continue;
    auto [it, fresh] = by_premise.emplace(p.premise, groups.size());
    if (fresh) groups.push_back(PremiseGroup{p.premise, {}});
    groups[it->second].alternatives.push_back(p.alternative);
  }
  return groups;
}

// ---- pair JSON-lines ------------------------------------------------------

inline nlohmann::json to_json(const SequencePair& p) {
  return nlohmann::json{{"premise", p.premise},
                        {"alternative", p.alternative},
                        {"direction", to_string(p.direction)},
                        {"source_triple_id", p.source_triple_id}};
}

inline void write_pairs_jsonl(std::ostream& out, const std::vector<SequencePair>& pairs) {
  for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

inline std::vector<SequencePair> read_pairs_jsonl(std::istream& in, const std::string& source = "<pairs>") {
  std::vector<SequencePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      SequencePair p{j.at("premise").get<std::string>(), j.at("alternative").get<std::string>(),
                     parse_direction(j.at("direction").get<std::string>()),
                     j.at("source_triple_id").get<std::size_t>()};
      if (text::trim(p.premise).empty() || text::trim(p.alternative).empty())
        throw InputError("empty premise or alternative");
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

inline std::vector<SequencePair> read_pairs_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open pairs file " + path.string());
  return read_pairs_jsonl(in, path.string());
}

// Corpus statistics in the shape of a dataset summary table.
struct PairStats {
  std::size_t pairs = 0;
  std::size_t distinct_pairs = 0;
  std::size_t premise_groups = 0;
  double avg_degree = 0.0;             // distinct alternatives per premise
  double avg_words_premise = 0.0;
  double avg_words_alternative = 0.0;
  double avg_words = 0.0;              // over both sides
};

inline PairStats compute_stats(const std::vector<SequencePair>& pairs) {
  PairStats s;
  s.pairs = pairs.size();
  auto groups = group_by_premise(pairs);
  s.premise_groups = groups.size();
  for (const auto& g : groups) s.distinct_pairs += g.alternatives.size();
  if (s.premise_groups > 0) s.avg_degree = static_cast<double>(s.distinct_pairs) / static_cast<double>(s.premise_groups);
  if (!pairs.empty()) {
    double wp = 0, wa = 0;
    for (const auto& p : pairs) {
      wp += static_cast<double>(text::word_count(p.premise));
      wa += static_cast<double>(text::word_count(p.alternative));
    }
    auto n = static_cast<double>(pairs.size());
    s.avg_words_premise = wp / n;
    s.avg_words_alternative = wa / n;
    s.avg_words = (wp + wa) / (2 * n);
  }
  return s;
}

}  // namespace mico
