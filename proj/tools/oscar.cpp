// Command-line entry point. Every subcommand reads and writes under --out-dir:
//
//   corpus/rules.jsonl, corpus/examples.jsonl   ingest
//   index/tfidf.json, index/dense.json           build-index
//   model.ckpt, metrics.jsonl, config.txt        train
//   eval/<split>-<mode>.{json,txt}, eval/<split>-<mode>.generations.jsonl
//
// Results go to stdout as JSON; failures print {"error": ...} to stderr and
// exit nonzero.

#include "oscar/corpus.hpp"
#include "oscar/dialogue.hpp"
#include "oscar/discourse.hpp"
#include "oscar/evaluation.hpp"
#include "oscar/pipeline.hpp"
#include "oscar/retrieval.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oscar;

namespace {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "oscar-out";
};

TrainConfig base_config(const Globals& g) {
  std::string path = g.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("OSCAR_CONFIG")) path = env;
  }
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

fs::path corpus_dir(const Globals& g) { return fs::path(g.out_dir) / "corpus"; }
fs::path index_dir(const Globals& g) { return fs::path(g.out_dir) / "index"; }

Corpus load_desk_corpus(const Globals& g) {
  const auto dir = corpus_dir(g);
  if (!fs::exists(dir / "rules.jsonl")) {
    throw CommandError("no corpus under " + dir.string() + "; run ingest first");
  }
  return load_corpus(dir / "rules.jsonl", dir / "examples.jsonl");
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw CommandError("cannot open " + p.string());
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw CommandError("cannot write " + p.string());
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

// Loads whichever indexes exist and checks that `method` can be served.
Retriever load_retriever(const Globals& g, RetrievalMethod method, double hybrid_weight) {
  Retriever r;
  r.hybrid_weight = hybrid_weight;
  const auto dir = index_dir(g);
  if (fs::exists(dir / "tfidf.json")) r.tfidf = TfIdfIndex::from_json(read_json(dir / "tfidf.json"));
  if (fs::exists(dir / "dense.json")) r.dense = DenseIndex::from_json(read_json(dir / "dense.json"));
  const bool ok = method == RetrievalMethod::TfIdf  ? r.tfidf.has_value()
                  : method == RetrievalMethod::Dense ? r.dense.has_value()
                                                     : r.tfidf && r.dense;
  if (!ok) {
    throw CommandError("no " + std::string(to_string(method)) + " index under " + dir.string() +
                       "; run build-index --method " + std::string(to_string(method)) + " first");
  }
  return r;
}

fs::path model_path(const Globals& g, const std::string& flag) {
  return flag.empty() ? fs::path(g.out_dir) / "model.ckpt" : fs::path(flag);
}

const std::vector<DialogueExample>& split_examples(const Corpus& c, const std::string& split) {
  if (split == "train") return c.split.train;
  if (split == "dev") return c.split.dev;
  if (split == "test") return c.split.test;
  throw CommandError("unknown split \"" + split + "\" (expected train, dev or test)");
}

json split_sizes(const Corpus& c) {
  return {{"rules", c.rules.size()},
          {"train", c.split.train.size()},
          {"dev", c.split.dev.size()},
          {"test", c.split.test.size()},
          {"seen_rules", c.split.seen_doc_ids.size()}};
}

// ---- ingest ---------------------------------------------------------------

struct IngestArgs {
  bool synthetic = false;
  SyntheticOptions synth;
  std::string rules, examples, train, dev, test;
};

void run_ingest(const Globals& g, const IngestArgs& a) {
  const TrainConfig cfg = base_config(g);
  Corpus corpus;
  if (a.synthetic) {
    corpus = generate_synthetic_corpus(cfg.seed, a.synth);
  } else if (a.rules.empty()) {
    throw CommandError("ingest needs --synthetic or --rules with --examples or --train/--dev/--test");
  } else if (!a.examples.empty()) {
    corpus = load_corpus(a.rules, a.examples);
  } else if (!a.train.empty() && !a.dev.empty() && !a.test.empty()) {
    corpus = load_corpus(a.rules, a.train, a.dev, a.test);
  } else {
    throw CommandError("ingest --rules needs --examples or all of --train, --dev and --test");
  }
  save_corpus(corpus_dir(g), corpus);
  print({{"command", "ingest"},
         {"corpus", split_sizes(corpus)},
         {"files", {"corpus/rules.jsonl", "corpus/examples.jsonl"}}});
}

// ---- retrieval ------------------------------------------------------------

struct IndexArgs {
  std::string method = "tfidf";
  std::size_t dense_epochs = DenseConfig{}.epochs;
  std::size_t dense_dim = DenseConfig{}.dim;
};

void run_build_index(const Globals& g, const IndexArgs& a) {
  const TrainConfig cfg = base_config(g);
  const auto method = parse_retrieval_method(a.method);
  const Corpus corpus = load_desk_corpus(g);
  const auto dir = index_dir(g);
  json files = json::array();
  json summary = {{"command", "build-index"}, {"method", to_string(method)}};

  // Dense training mines hard negatives from TF-IDF, so it is always built.
  const auto tfidf = TfIdfIndex::build(corpus.rules);
  write_text(dir / "tfidf.json", tfidf.to_json().dump());
  files.push_back("index/tfidf.json");
  summary["documents"] = tfidf.n_docs();
  if (method != RetrievalMethod::TfIdf) {
    DenseConfig dc;
    dc.seed = cfg.seed;
    dc.epochs = a.dense_epochs;
    dc.dim = a.dense_dim;
    DenseTrainLog log;
    const auto dense = train_dense(corpus, tfidf, dc, &log);
    write_text(dir / "dense.json", dense.to_json().dump());
    files.push_back("index/dense.json");
    summary["dense_loss"] = log.epoch_loss;
  }
  summary["files"] = files;
  print(summary);
}

struct RetrieveArgs {
  std::string query;
  std::size_t k = 5;
  std::string method = "tfidf";
};

void run_retrieve(const Globals& g, const RetrieveArgs& a) {
  const TrainConfig cfg = base_config(g);
  const auto method = parse_retrieval_method(a.method);
  const auto retriever = load_retriever(g, method, cfg.hybrid_weight);
  json hits = json::array();
  for (const auto& d : retriever.retrieve(a.query, a.k, method)) {
    hits.push_back({{"doc_id", d.doc_id}, {"score", d.score}});
  }
  print({{"command", "retrieve"}, {"query", a.query}, {"method", to_string(method)}, {"results", hits}});
}

struct EvalRetrievalArgs {
  std::string split = "dev";
  std::string method = "tfidf";
  std::string breakdown;
};

json recall_block(const Retriever& r, RetrievalMethod method, const std::vector<DialogueExample>& ex) {
  json out = {{"n", ex.size()}};
  if (ex.empty()) {
    for (std::size_t k : recall_depths()) out["recall@" + std::to_string(k)] = nullptr;
    return out;
  }
  const std::size_t depth = recall_depths().back();
  std::vector<RankedList> ranked;
  std::vector<std::string> gold;
  for (const auto& e : ex) {
    ranked.push_back(r.retrieve(build_query(e), depth, method));
    gold.push_back(e.gold_doc_id);
  }
  for (std::size_t k : recall_depths()) out["recall@" + std::to_string(k)] = 100.0 * recall_at_k(ranked, gold, k);
  return out;
}

void run_eval_retrieval(const Globals& g, const EvalRetrievalArgs& a) {
  const TrainConfig cfg = base_config(g);
  const auto method = parse_retrieval_method(a.method);
  const Corpus corpus = load_desk_corpus(g);
  const auto retriever = load_retriever(g, method, cfg.hybrid_weight);
  const auto& examples = split_examples(corpus, a.split);
  json result = {{"command", "eval-retrieval"}, {"split", a.split}, {"method", to_string(method)}};
  result["all"] = recall_block(retriever, method, examples);
  if (a.breakdown == "seen-unseen") {
    const auto parts = partition_seen_unseen(examples, corpus.split.seen_doc_ids);
    result["seen"] = recall_block(retriever, method, parts.seen);
    result["unseen"] = recall_block(retriever, method, parts.unseen);
  } else if (!a.breakdown.empty()) {
    throw CommandError("unknown breakdown \"" + a.breakdown + "\" (expected seen-unseen)");
  }
  print(result);
}

// ---- parse-rules ----------------------------------------------------------

struct ParseArgs {
  std::vector<std::string> doc_ids;
  std::string text;
};

void run_parse_rules(const Globals& g, const ParseArgs& a) {
  std::vector<ParsedRule> parsed;
  if (!a.text.empty()) {
    parsed.push_back(parse_rule("text", a.text));
  } else {
    const Corpus corpus = load_desk_corpus(g);
    if (a.doc_ids.empty()) {
      for (const auto& r : corpus.rules) parsed.push_back(parse_rule(r.doc_id, r.text));
    } else {
      for (const auto& id : a.doc_ids) parsed.push_back(parse_rule(id, corpus.rule(id).text));
    }
  }
  json rules = json::array();
  for (const auto& p : parsed) {
    rules.push_back({{"parse", to_json(p)}, {"graph", to_json(build_levi_graph({p}))}});
  }
  print({{"command", "parse-rules"}, {"rules", rules}});
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<std::string> fusion;
  std::vector<std::string> settings;
};

void run_train(const Globals& g, const TrainArgs& a) {
  TrainConfig cfg = base_config(g);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.learning_rate) cfg.learning_rate = *a.learning_rate;
  if (a.fusion) apply_setting(cfg, "fusion", *a.fusion);
  for (const auto& s : a.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + s + "\"");
    apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (g.seed) cfg.seed = *g.seed;
  validate(cfg);

  const Corpus corpus = load_desk_corpus(g);
  const auto retriever = load_retriever(g, cfg.retrieval, cfg.hybrid_weight);
  Model model = Model::initialize(cfg, build_vocabulary(corpus));
  Pipeline pipeline(corpus, retriever, model);

  const fs::path out(g.out_dir);
  fs::create_directories(out);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  TrainOptions opts;
  opts.on_epoch = [&](const EpochMetrics& m) {
    metrics << to_json(m).dump() << '\n' << std::flush;
    std::cerr << "epoch " << m.epoch << " loss " << m.loss << " train_micro " << m.train_micro << '\n';
  };
  const auto curve = train(pipeline, corpus.split.train, opts);
  model.save(out / "model.ckpt");
  write_text(out / "config.txt", to_config_text(cfg));

  json result = {{"command", "train"},
                 {"epochs", curve.size()},
                 {"parameters", model.params.all().size()},
                 {"files", {"model.ckpt", "metrics.jsonl", "config.txt"}}};
  result["final"] = curve.empty() ? json(nullptr) : to_json(curve.back());
  print(result);
}

// ---- evaluate / predict / dialogue -----------------------------------------

struct Loaded {
  Corpus corpus;
  Retriever retriever;
  Model model;
};

// The model carries its own config; the corpus and indexes come from out-dir.
std::unique_ptr<Loaded> load_for_inference(const Globals& g, const std::string& model_flag) {
  base_config(g);  // surfaces a bad --config even though the checkpoint wins
  auto l = std::make_unique<Loaded>();
  l->corpus = load_desk_corpus(g);
  const auto path = model_path(g, model_flag);
  if (!fs::exists(path)) throw CommandError("no model at " + path.string() + "; run train first");
  l->model = Model::load(path);
  l->retriever = load_retriever(g, l->model.config.retrieval, l->model.config.hybrid_weight);
  return l;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

struct EvaluateArgs {
  std::string split = "dev";
  std::string mode = "predicted";
  std::string model;
};

void run_evaluate(const Globals& g, const EvaluateArgs& a) {
  auto l = load_for_inference(g, a.model);
  Pipeline pipeline(l->corpus, l->retriever, l->model);
  const auto& examples = split_examples(l->corpus, a.split);

  std::vector<SpanMode> modes;
  if (a.mode == "both") modes = {SpanMode::Predicted, SpanMode::Gold};
  else modes = {parse_span_mode(a.mode)};

  json result = {{"command", "evaluate"}, {"split", a.split}, {"reports", json::array()}};
  json files = json::array();
  for (const auto mode : modes) {
    const auto ev = evaluate(pipeline, examples, l->corpus.split.seen_doc_ids, mode, a.split);
    const std::string stem = "eval/" + a.split + "-" + std::string(to_string(mode));
    write_text(fs::path(g.out_dir) / (stem + ".json"), to_json(ev.report).dump(2) + "\n");
    write_text(fs::path(g.out_dir) / (stem + ".txt"), format_table(ev.report));

    std::ostringstream gen;
    for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
      const auto& o = ev.outcomes[i];
      json j = to_json(ev.predictions[i]);
      j.erase("conditions");
      j["gold_decision"] = to_string(o.gold);
      if (o.question) j["scored_question"] = join(*o.question);
      if (o.reference) j["reference"] = join(*o.reference);
      gen << j.dump() << '\n';
    }
    write_text(fs::path(g.out_dir) / (stem + ".generations.jsonl"), gen.str());
    for (const char* ext : {".json", ".txt", ".generations.jsonl"}) files.push_back(stem + ext);
    result["reports"].push_back(to_json(ev.report));
    std::cerr << format_table(ev.report);
  }
  result["files"] = files;
  print(result);
}

struct PredictArgs {
  std::string input;
  std::string transcript;
  std::string model;
  bool force_question = false;
  bool gold_span = false;
};

void run_predict(const Globals& g, const PredictArgs& a) {
  if (a.input.empty() == a.transcript.empty()) {
    throw CommandError("predict needs exactly one of --input or --transcript");
  }
  auto l = load_for_inference(g, a.model);
  Pipeline pipeline(l->corpus, l->retriever, l->model);
  std::vector<DialogueExample> examples;
  if (!a.transcript.empty()) {
    examples = replay_examples(transcript_from_json(read_json(a.transcript)));
  } else {
    std::ifstream in(a.input);
    if (!in) throw CommandError("cannot open " + a.input);
    const auto split = read_examples(in, "test");
    for (const auto* v : {&split.train, &split.dev, &split.test}) examples.insert(examples.end(), v->begin(), v->end());
  }
  PredictOptions opts;
  opts.force_question = a.force_question;
  opts.gold_span = a.gold_span;
  for (const auto& e : examples) std::cout << to_json(pipeline.predict(e, opts)).dump() << '\n';
}

struct DialogueArgs {
  std::string model;
  std::size_t max_turns = DialogueOptions{}.max_turns;
};

void run_dialogue_cmd(const Globals& g, const DialogueArgs& a) {
  auto l = load_for_inference(g, a.model);
  Pipeline pipeline(l->corpus, l->retriever, l->model);
  const Predictor predictor = [&](const DialogueExample& e) { return pipeline.predict(e); };
  const auto t = run_dialogue(predictor, std::cin, std::cerr, {a.max_turns});
  print(to_json(t));
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", message}, {"kind", kind}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational rule reading: retrieval, decision making and follow-up generation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file (falls back to $OSCAR_CONFIG)");
  app.add_option("--seed", g.seed, "overrides the config seed");
  app.add_option("--out-dir", g.out_dir, "directory for every file read or written")->capture_default_str();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Load or generate a corpus into out-dir/corpus");
  c_ingest->add_flag("--synthetic", ingest.synthetic, "generate a synthetic corpus");
  c_ingest->add_option("--n-rules", ingest.synth.n_rules)->capture_default_str();
  c_ingest->add_option("--n-train", ingest.synth.n_train)->capture_default_str();
  c_ingest->add_option("--n-dev", ingest.synth.n_dev)->capture_default_str();
  c_ingest->add_option("--n-test", ingest.synth.n_test)->capture_default_str();
  c_ingest->add_option("--rules", ingest.rules, "rules JSONL");
  c_ingest->add_option("--examples", ingest.examples, "examples JSONL with a split field");
  c_ingest->add_option("--train", ingest.train, "train examples JSONL");
  c_ingest->add_option("--dev", ingest.dev, "dev examples JSONL");
  c_ingest->add_option("--test", ingest.test, "test examples JSONL");

  IndexArgs index;
  auto* c_index = app.add_subcommand("build-index", "Build retrieval indexes into out-dir/index");
  c_index->add_option("--method", index.method)->check(CLI::IsMember({"tfidf", "dense", "hybrid"}))->capture_default_str();
  c_index->add_option("--dense-epochs", index.dense_epochs)->capture_default_str();
  c_index->add_option("--dense-dim", index.dense_dim)->capture_default_str();

  RetrieveArgs retrieve;
  auto* c_retrieve = app.add_subcommand("retrieve", "Rank rule documents for a query");
  c_retrieve->add_option("--query", retrieve.query)->required();
  c_retrieve->add_option("--k", retrieve.k)->capture_default_str();
  c_retrieve->add_option("--method", retrieve.method)->check(CLI::IsMember({"tfidf", "dense", "hybrid"}))->capture_default_str();

  EvalRetrievalArgs evr;
  auto* c_evr = app.add_subcommand("eval-retrieval", "Recall@{1,5,10,20} of the gold rule");
  c_evr->add_option("--split", evr.split)->check(CLI::IsMember({"train", "dev", "test"}))->capture_default_str();
  c_evr->add_option("--method", evr.method)->check(CLI::IsMember({"tfidf", "dense", "hybrid"}))->capture_default_str();
  c_evr->add_option("--breakdown", evr.breakdown)->check(CLI::IsMember({"seen-unseen"}));

  ParseArgs parse;
  auto* c_parse = app.add_subcommand("parse-rules", "EDUs, relations and graph of rule texts as JSON");
  c_parse->add_option("--doc-id", parse.doc_ids, "restrict to these documents");
  c_parse->add_option("--text", parse.text, "parse this text instead of the corpus");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train end to end; writes model.ckpt, metrics.jsonl, config.txt");
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--lr", tr.learning_rate);
  c_train->add_option("--fusion", tr.fusion)->check(CLI::IsMember({"none", "direct", "gated"}));
  c_train->add_option("--set", tr.settings, "key=value config override (repeatable)");

  EvaluateArgs eva;
  auto* c_eval = app.add_subcommand("evaluate", "Score a split; writes the report, table and generations");
  c_eval->add_option("--split", eva.split)->check(CLI::IsMember({"train", "dev", "test"}))->capture_default_str();
  c_eval->add_option("--mode", eva.mode)
      ->check(CLI::IsMember({"predicted", "gold", "predicted-span", "gold-span", "both"}))
      ->capture_default_str();
  c_eval->add_option("--model", eva.model, "checkpoint (default out-dir/model.ckpt)");

  PredictArgs pred;
  auto* c_pred = app.add_subcommand("predict", "Predict examples (JSONL) or replay a dialogue transcript");
  c_pred->add_option("--input", pred.input, "examples JSONL");
  c_pred->add_option("--transcript", pred.transcript, "transcript JSON written by dialogue");
  c_pred->add_option("--model", pred.model, "checkpoint (default out-dir/model.ckpt)");
  c_pred->add_flag("--force-question", pred.force_question, "generate for every decision");
  c_pred->add_flag("--gold-span", pred.gold_span, "condition generation on the labelled span");

  DialogueArgs dia;
  auto* c_dia = app.add_subcommand("dialogue", "Interactive session on stdin; transcript JSON on stdout");
  c_dia->add_option("--model", dia.model, "checkpoint (default out-dir/model.ckpt)");
  c_dia->add_option("--max-turns", dia.max_turns)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (c_ingest->parsed()) run_ingest(g, ingest);
    else if (c_index->parsed()) run_build_index(g, index);
    else if (c_retrieve->parsed()) run_retrieve(g, retrieve);
    else if (c_evr->parsed()) run_eval_retrieval(g, evr);
    else if (c_parse->parsed()) run_parse_rules(g, parse);
    else if (c_train->parsed()) run_train(g, tr);
    else if (c_eval->parsed()) run_evaluate(g, eva);
    else if (c_pred->parsed()) run_predict(g, pred);
    else if (c_dia->parsed()) run_dialogue_cmd(g, dia);
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "training"}, {"diagnostics", e.diagnostics()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
