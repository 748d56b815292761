// mico: command-line front end.
//
// Exit codes: 0 success, 1 bad input or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mico/mico.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every subcommand. Unset flags fall back to the config file,
// then to built-in defaults.
struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<int> batch_size;
  std::optional<int> max_len;
  std::optional<double> lr;
  std::optional<double> tau;
  std::optional<std::string> similarity;
  std::optional<std::string> backbone;
  bool filtered = false;
  bool raw = false;
  std::optional<int> top_k;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key=value run configuration file");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--k", k, "candidate alternatives per premise");
    app->add_option("--batch-size", batch_size, "premises per batch");
    app->add_option("--max-len", max_len, "maximum tokens per sequence");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--tau", tau, "softmax temperature");
    app->add_option("--similarity", similarity, "cosine or dot")->check(CLI::IsMember({"cosine", "dot"}));
    app->add_option("--backbone", backbone, "encoder backbone");
    auto* f = app->add_flag("--filtered", filtered, "filtered ranking (default)");
    auto* r = app->add_flag("--raw", raw, "raw ranking");
    f->excludes(r);
    app->add_option("--top-k", top_k, "number of results")->check(CLI::PositiveNumber);
  }

  mico::TrainConfig resolve() const {
    mico::TrainConfig cfg;
    if (config) cfg = mico::load_train_config(*config);
    if (seed) cfg.seed = *seed;
    if (k) cfg.k = *k;
    if (batch_size) cfg.batch_size = *batch_size;
    if (max_len) cfg.max_len = *max_len;
    if (lr) cfg.lr = *lr;
    if (tau) cfg.tau = *tau;
    if (similarity) cfg.similarity = mico::parse_similarity(*similarity);
    if (backbone) cfg.backbone = *backbone;
    return cfg;
  }

  mico::EvalConfig eval_config(const mico::TrainConfig& cfg) const {
    mico::EvalConfig ec;
    ec.similarity = cfg.similarity;
    ec.max_len = cfg.max_len;
    ec.batch_size = cfg.batch_size;
    ec.filtered = !raw;
    return ec;
  }
};

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct RunManifest {
  std::string command;
  std::optional<std::string> config_path;
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  std::optional<std::uint64_t> checkpoint_fingerprint;
  json settings = json::object();
  std::string started = mico::io::utc_timestamp();

  void write(const fs::path& dir) const {
    json j{{"command", command},
           {"config_path", config_path ? json(*config_path) : json(nullptr)},
           {"seed", seed},
           {"inputs", inputs},
           {"outputs", outputs},
           {"checkpoint_fingerprint", checkpoint_fingerprint ? json(hex64(*checkpoint_fingerprint)) : json(nullptr)},
           {"settings", settings},
           {"started", started},
           {"finished", mico::io::utc_timestamp()}};
    mico::io::write_text_atomically(dir / "manifest.json", j.dump(2) + "\n");
  }
};

fs::path dir_of(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

mico::TinyEncoder load_checked_encoder(const fs::path& path, const mico::TrainConfig& cfg, bool backbone_given) {
  if (backbone_given && cfg.backbone != mico::TinyEncoder::kId) (void)mico::make_tiny_backbone(cfg.backbone, {});
  if (!fs::exists(path)) throw mico::InputError("checkpoint not found: " + path.string());
  auto c = mico::load_checkpoint(path);
  if (backbone_given && c.backbone != cfg.backbone)
    throw mico::InputError("checkpoint backbone '" + c.backbone + "' does not match --backbone '" + cfg.backbone + "'");
  return mico::encoder_from_checkpoint(c);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// ---- commands ------------------------------------------------------------

int cmd_convert(const std::string& triples, const std::string& registry_path, const std::string& out, const std::string& split,
                const CommonFlags& flags) {
  RunManifest m;
  m.command = "convert";
  auto cfg = flags.resolve();
  m.config_path = flags.config;
  m.seed = cfg.seed;
  auto registry = mico::TemplateRegistry::from_file(registry_path);
  auto loaded = mico::load_triples(fs::path(triples), registry, mico::parse_split(split));
  fs::path out_path(out);
  fs::path report_path = out_path;
  report_path += ".report.json";

  json errors = json::array();
  for (const auto& e : loaded.errors) errors.push_back({{"line", e.line}, {"message", e.message}});
  if (!loaded.errors.empty()) {
    // The report is the only output of a failed conversion; no pair file is written.
    json report{{"triples_read", loaded.graph.triples.size()}, {"pairs_written", 0}, {"errors", errors}};
    mico::io::write_text_atomically(report_path, report.dump(2) + "\n");
    for (const auto& e : loaded.errors) std::cerr << triples << ":" << e.line << ": " << e.message << "\n";
    std::cerr << "convert: " << loaded.errors.size() << " bad row(s); no pairs written\n";
    return 1;
  }
  auto pairs = mico::convert(loaded.graph);
  mico::io::write_atomically(out_path, [&](std::ostream& os) { mico::write_pairs_jsonl(os, pairs); });
  json report{{"triples_read", loaded.graph.triples.size()},
              {"pairs_written", pairs.size()},
              {"entities", loaded.graph.entities.size()},
              {"errors", errors}};
  mico::io::write_text_atomically(report_path, report.dump(2) + "\n");
  m.inputs = {{"triples", triples}, {"registry", registry_path}};
  m.outputs = {{"pairs", out}, {"report", report_path.string()}};
  m.settings = {{"split", split}, {"person_substitution", registry.person_substitution()}};
  m.write(dir_of(out_path));
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_stats(const std::string& pairs_path) {
  auto pairs = mico::read_pairs_jsonl(fs::path(pairs_path));
  auto s = mico::compute_stats(pairs);
  json j{{"pairs", s.pairs},
         {"distinct_pairs", s.distinct_pairs},
         {"premise_groups", s.premise_groups},
         {"avg_degree", s.avg_degree},
         {"avg_words_premise", s.avg_words_premise},
         {"avg_words_alternative", s.avg_words_alternative},
         {"avg_words", s.avg_words}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_train(std::optional<std::string> train_pairs, std::optional<std::string> valid_pairs, std::optional<std::string> run_dir,
              std::optional<std::string> name, std::optional<std::string> resume, const CommonFlags& flags) {
  auto cfg = flags.resolve();
  if (train_pairs) cfg.train_pairs = *train_pairs;
  if (valid_pairs) cfg.valid_pairs = *valid_pairs;
  if (run_dir) cfg.run_dir = *run_dir;
  if (name) cfg.name = *name;
  cfg.validate();
  if (cfg.train_pairs.empty() || cfg.valid_pairs.empty())
    throw mico::ConfigError("train needs train_pairs and valid_pairs (config keys or --train/--valid)");

  auto encoder = mico::make_tiny_backbone(cfg.backbone, cfg.encoder_config());
  auto train_groups = mico::group_by_premise(mico::read_pairs_jsonl(fs::path(cfg.train_pairs)));
  auto valid_groups = mico::group_by_premise(mico::read_pairs_jsonl(fs::path(cfg.valid_pairs)));

  RunManifest m;
  m.command = "train";
  m.config_path = flags.config;
  m.seed = cfg.seed;
  m.settings = cfg.to_json();

  mico::TrainOptions opts;
  opts.run_dir = fs::path(cfg.run_dir) / cfg.name;
  if (resume) opts.resume_from = *resume;
  opts.on_epoch = [](const mico::EpochRecord& r) { std::cerr << mico::to_json(r).dump() << "\n"; };
  auto result = mico::train(cfg, train_groups, valid_groups, *encoder, opts);

  m.inputs = {{"train_pairs", cfg.train_pairs}, {"valid_pairs", cfg.valid_pairs}};
  if (resume) m.inputs["resume_from"] = *resume;
  m.outputs = {{"run_dir", opts.run_dir.string()},
               {"best_checkpoint", (opts.run_dir / "best.ckpt").string()},
               {"best_epoch", result.best_epoch},
               {"stopped_early", result.stopped_early},
               {"metrics", (opts.run_dir / "metrics.jsonl").string()}};
  m.checkpoint_fingerprint = encoder->fingerprint();
  m.write(opts.run_dir);
  std::cout << json{{"best_epoch", result.best_epoch},
                    {"best_valid_loss", result.state.best_valid_loss},
                    {"epochs_run", result.log.back().epoch},
                    {"stopped_early", result.stopped_early}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval_cqa(const std::string& checkpoint, const std::string& qa_path, const std::string& out_dir, const CommonFlags& flags) {
  auto cfg = flags.resolve();
  auto ec = flags.eval_config(cfg);
  auto encoder = load_checked_encoder(checkpoint, cfg, flags.backbone.has_value());
  auto items = mico::read_qa_jsonl(fs::path(qa_path));
  auto report = mico::evaluate_qa(items, encoder, ec);

  fs::path dir(out_dir);
  json summary{{"accuracy", report.accuracy}};
  mico::io::write_text_atomically(dir / "report.json", summary.dump(2) + "\n");
  mico::io::write_atomically(dir / "per_query.csv", [&](std::ostream& os) {
    os << "index,query,gold_index,predicted,correct\n";
    for (std::size_t i = 0; i < items.size(); ++i)
      os << i << ',' << csv_field(items[i].query) << ',' << items[i].gold_index << ',' << report.predictions[i] << ','
         << (report.predictions[i] == items[i].gold_index ? 1 : 0) << '\n';
  });
  RunManifest m;
  m.command = "eval-cqa";
  m.config_path = flags.config;
  m.seed = cfg.seed;
  m.inputs = {{"checkpoint", checkpoint}, {"qa", qa_path}};
  m.outputs = {{"report", (dir / "report.json").string()}, {"per_query", (dir / "per_query.csv").string()}};
  m.checkpoint_fingerprint = encoder.fingerprint();
  m.settings = {{"similarity", mico::to_string(ec.similarity)}, {"max_len", ec.max_len}};
  m.write(dir);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval_ckgc(const std::string& checkpoint, const std::string& registry_path, const std::vector<std::string>& context_files,
                  const std::string& test_path, const std::string& out_dir, const CommonFlags& flags) {
  auto cfg = flags.resolve();
  auto ec = flags.eval_config(cfg);
  auto encoder = load_checked_encoder(checkpoint, cfg, flags.backbone.has_value());
  auto registry = mico::TemplateRegistry::from_file(registry_path);

  std::vector<mico::Graph> parts;
  for (const auto& f : context_files) parts.push_back(mico::load_triples_strict(f, registry, mico::Split::train));
  parts.push_back(mico::load_triples_strict(test_path, registry, mico::Split::test));
  std::vector<const mico::Graph*> ptrs;
  for (const auto& g : parts) ptrs.push_back(&g);
  auto full = mico::union_graphs(ptrs);
  auto report = mico::ckgc_evaluate(parts.back().triples, full, encoder, ec);

  fs::path dir(out_dir);
  json summary{{"mrr", report.result.mrr}, {"hits_at_10", report.result.hits_at_10}, {"n_queries", report.queries.size()}};
  mico::io::write_text_atomically(dir / "report.json", summary.dump(2) + "\n");
  mico::io::write_atomically(dir / "per_query.csv", [&](std::ostream& os) {
    os << "triple_index,direction,premise,gold,rank\n";
    for (const auto& q : report.queries)
      os << q.triple_index << ',' << mico::to_string(q.direction) << ',' << csv_field(q.premise) << ',' << csv_field(q.gold) << ','
         << q.rank << '\n';
  });
  RunManifest m;
  m.command = "eval-ckgc";
  m.config_path = flags.config;
  m.seed = cfg.seed;
  m.inputs = {{"checkpoint", checkpoint}, {"registry", registry_path}, {"context", context_files}, {"test", test_path}};
  m.outputs = {{"report", (dir / "report.json").string()}, {"per_query", (dir / "per_query.csv").string()}};
  m.checkpoint_fingerprint = encoder.fingerprint();
  m.settings = {{"similarity", mico::to_string(ec.similarity)},
                {"max_len", ec.max_len},
                {"filtered", ec.filtered},
                {"candidate_pool", report.candidate_pool}};
  m.write(dir);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_build_index(const std::string& checkpoint, const std::string& pairs_path, const std::string& out, const CommonFlags& flags) {
  auto cfg = flags.resolve();
  auto ec = flags.eval_config(cfg);
  auto encoder = load_checked_encoder(checkpoint, cfg, flags.backbone.has_value());
  std::vector<std::string> alternatives;
  for (const auto& p : mico::read_pairs_jsonl(fs::path(pairs_path))) alternatives.push_back(p.alternative);
  auto index = mico::build_index(alternatives, encoder, ec);
  index.save(out);
  RunManifest m;
  m.command = "build-index";
  m.config_path = flags.config;
  m.seed = cfg.seed;
  m.inputs = {{"checkpoint", checkpoint}, {"pairs", pairs_path}};
  m.outputs = {{"index", out}, {"entries", index.size()}};
  m.checkpoint_fingerprint = encoder.fingerprint();
  m.settings = {{"max_len", ec.max_len}};
  m.write(dir_of(out));
  std::cout << json{{"entries", index.size()}}.dump() << "\n";
  return 0;
}

// Prints K `score<TAB>text` lines; the manifest goes to --out-dir when given.
int cmd_retrieve(const std::string& checkpoint, const std::string& index_path, const std::string& query,
                 std::optional<std::string> out_dir, const CommonFlags& flags) {
  auto cfg = flags.resolve();
  auto ec = flags.eval_config(cfg);
  auto encoder = load_checked_encoder(checkpoint, cfg, flags.backbone.has_value());
  auto index = mico::RetrievalIndex::load(index_path);
  const int K = flags.top_k.value_or(5);
  auto hits = mico::top_k(query, index, K, encoder, ec);
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (const auto& h : hits) os << h.score << '\t' << h.text << '\n';
  if (out_dir) {
    mico::io::write_text_atomically(fs::path(*out_dir) / "results.tsv", os.str());
    RunManifest m;
    m.command = "retrieve";
    m.config_path = flags.config;
    m.seed = cfg.seed;
    m.inputs = {{"checkpoint", checkpoint}, {"index", index_path}, {"query", query}};
    m.outputs = {{"results", (fs::path(*out_dir) / "results.tsv").string()}};
    m.checkpoint_fingerprint = encoder.fingerprint();
    m.settings = {{"top_k", K}, {"similarity", mico::to_string(ec.similarity)}};
    m.write(*out_dir);
  }
  std::cout << os.str();
  return 0;
}

int cmd_synth(const std::string& out_dir, const CommonFlags& flags) {
  mico::SyntheticOptions opt;
  if (flags.seed) opt.seed = *flags.seed;
  auto ckg = mico::make_synthetic_ckg(opt);
  auto qa = mico::make_synthetic_qa(ckg.train);
  fs::path dir(out_dir);
  auto tsv = [](const mico::Graph& g) { return [&g](std::ostream& os) { mico::write_triples_tsv(os, g); }; };
  mico::io::write_atomically(dir / "synthetic.registry", [&](std::ostream& os) { mico::write_registry(os, ckg.registry); });
  mico::io::write_atomically(dir / "train.tsv", tsv(ckg.train));
  mico::io::write_atomically(dir / "valid.tsv", tsv(ckg.valid));
  mico::io::write_atomically(dir / "test.tsv", tsv(ckg.test));
  mico::io::write_atomically(dir / "qa.jsonl", [&](std::ostream& os) { mico::write_qa_jsonl(os, qa); });
  RunManifest m;
  m.command = "synth";
  m.seed = opt.seed;
  m.outputs = {{"registry", "synthetic.registry"}, {"train", "train.tsv"}, {"valid", "valid.tsv"}, {"test", "test.tsv"}, {"qa", "qa.jsonl"}};
  m.settings = {{"entities", ckg.full().entities.size()}, {"train_triples", ckg.train.triples.size()}};
  m.write(dir);
  std::cout << m.settings.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive commonsense knowledge encoder toolkit", "mico"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string triples, registry, out, split = "train", pairs, checkpoint, qa, out_dir, test, index, query;
  std::optional<std::string> train_pairs, valid_pairs, run_dir, run_name, resume, opt_out_dir;
  std::vector<std::string> context;

  auto* convert = app.add_subcommand("convert", "convert triples into premise/alternative pairs");
  convert->add_option("--triples", triples, "relation<TAB>head<TAB>tail file")->required();
  convert->add_option("--registry", registry, "relation template registry")->required();
  convert->add_option("--out", out, "output pair JSONL")->required();
  convert->add_option("--split", split, "train, valid or test");

  auto* stats = app.add_subcommand("stats", "pair corpus statistics");
  stats->add_option("pairs", pairs, "pair JSONL")->required();

  auto* train = app.add_subcommand("train", "train the encoder");
  train->add_option("--train", train_pairs, "training pair JSONL");
  train->add_option("--valid", valid_pairs, "validation pair JSONL");
  train->add_option("--run-dir", run_dir, "parent directory for runs");
  train->add_option("--name", run_name, "run name");
  train->add_option("--resume", resume, "training checkpoint to continue from");

  auto* eval_cqa = app.add_subcommand("eval-cqa", "zero-shot multiple-choice QA");
  eval_cqa->add_option("--checkpoint", checkpoint)->required();
  eval_cqa->add_option("--qa", qa, "QA JSONL")->required();
  eval_cqa->add_option("--out-dir", out_dir)->required();

  auto* eval_ckgc = app.add_subcommand("eval-ckgc", "knowledge graph completion ranking");
  eval_ckgc->add_option("--checkpoint", checkpoint)->required();
  eval_ckgc->add_option("--registry", registry)->required();
  eval_ckgc->add_option("--context", context, "other split files (candidates and filtering)");
  eval_ckgc->add_option("--test", test, "test triples")->required();
  eval_ckgc->add_option("--out-dir", out_dir)->required();

  auto* build_index = app.add_subcommand("build-index", "embed alternatives into a retrieval index");
  build_index->add_option("--checkpoint", checkpoint)->required();
  build_index->add_option("--pairs", pairs, "pair JSONL whose alternatives are indexed")->required();
  build_index->add_option("--out", out, "index file")->required();

  auto* retrieve = app.add_subcommand("retrieve", "top-k alternatives for a query");
  retrieve->add_option("--checkpoint", checkpoint)->required();
  retrieve->add_option("--index", index)->required();
  retrieve->add_option("--query", query)->required();
  retrieve->add_option("--out-dir", opt_out_dir);

  auto* synth = app.add_subcommand("synth", "write the synthetic graph and QA fixture");
  synth->add_option("--out-dir", out_dir)->required();

  for (auto* sub : {convert, stats, train, eval_cqa, eval_ckgc, build_index, retrieve, synth}) flags.attach(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*convert) return cmd_convert(triples, registry, out, split, flags);
    if (*stats) return cmd_stats(pairs);
    if (*train) return cmd_train(train_pairs, valid_pairs, run_dir, run_name, resume, flags);
    if (*eval_cqa) return cmd_eval_cqa(checkpoint, qa, out_dir, flags);
    if (*eval_ckgc) return cmd_eval_ckgc(checkpoint, registry, context, test, out_dir, flags);
    if (*build_index) return cmd_build_index(checkpoint, pairs, out, flags);
    if (*retrieve) return cmd_retrieve(checkpoint, index, query, opt_out_dir, flags);
    if (*synth) return cmd_synth(out_dir, flags);
  } catch (const mico::RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mico::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
