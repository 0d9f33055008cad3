#include "oscar/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace oscar {

std::string_view to_string(BleuAggregation a) {
  return a == BleuAggregation::Corpus ? "corpus" : "sentence";
}

BleuAggregation parse_bleu_aggregation(std::string_view s) {
  if (s == "sentence") return BleuAggregation::SentenceMean;
  if (s == "corpus") return BleuAggregation::Corpus;
  throw ConfigError("unknown bleu aggregation \"" + std::string(s) + "\"");
}

// ---- config -------------------------------------------------------------------------

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  const std::string v(value);
  std::size_t used = 0;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      const double x = std::stod(v, &used);
      if (used == v.size() && std::isfinite(x)) return x;
    } else {
      if (!v.empty() && v[0] != '-') {
        const auto x = std::stoull(v, &used);
        if (used == v.size()) return static_cast<T>(x);
      }
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("bad value \"" + v + "\" for " + std::string(key));
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad value \"" + std::string(v) + "\" for " + std::string(key));
}

// Shortest text that reads back to the same double.
std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "learning_rate", "epochs",       "batch_size",     "clip_norm",        "lambda_entail",
      "beam_size",     "hidden_dim",   "k_retrieved",    "seed",             "fusion",
      "retrieval",     "hybrid_weight", "heads",         "layers",           "ffn",
      "max_len",       "rgcn_layers",  "max_question_len", "max_span",       "static_logits",
      "entail_threshold", "bleu_aggregation"};
  return keys;
}

void apply_setting(TrainConfig& c, std::string_view key, std::string_view raw) {
  const std::string value = trim(raw);
  try {
    if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
    else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, value);
    else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "clip_norm") c.clip_norm = parse_number<double>(key, value);
    else if (key == "lambda_entail") c.lambda_entail = parse_number<double>(key, value);
    else if (key == "beam_size") c.beam_size = parse_number<std::size_t>(key, value);
    else if (key == "hidden_dim") c.hidden_dim = parse_number<std::size_t>(key, value);
    else if (key == "k_retrieved") c.k_retrieved = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "fusion") c.fusion = parse_fusion(value);
    else if (key == "retrieval") c.retrieval = parse_retrieval_method(value);
    else if (key == "hybrid_weight") c.hybrid_weight = parse_number<double>(key, value);
    else if (key == "heads") c.heads = parse_number<std::size_t>(key, value);
    else if (key == "layers") c.layers = parse_number<std::size_t>(key, value);
    else if (key == "ffn") c.ffn = parse_number<std::size_t>(key, value);
    else if (key == "max_len") c.max_len = parse_number<std::size_t>(key, value);
    else if (key == "rgcn_layers") c.rgcn_layers = parse_number<std::size_t>(key, value);
    else if (key == "max_question_len") c.max_question_len = parse_number<std::size_t>(key, value);
    else if (key == "max_span") c.max_span = parse_number<std::size_t>(key, value);
    else if (key == "static_logits") c.static_logits = parse_bool(key, value);
    else if (key == "entail_threshold") c.entail_threshold = parse_number<double>(key, value);
    else if (key == "bleu_aggregation") c.bleu_aggregation = parse_bleu_aggregation(value);
    else throw ConfigError("unknown config key \"" + std::string(key) + "\"");
  } catch (const std::invalid_argument& e) {
    // enum parsers throw invalid_argument
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    }
    apply_setting(base, trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), base);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void validate(const TrainConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string(what) + " must be positive");
  };
  need(c.learning_rate > 0, "learning_rate");
  need(c.batch_size > 0, "batch_size");
  need(c.clip_norm > 0, "clip_norm");
  need(c.lambda_entail >= 0, "lambda_entail");
  need(c.beam_size > 0, "beam_size");
  need(c.hidden_dim > 0, "hidden_dim");
  need(c.k_retrieved > 0, "k_retrieved");
  need(c.heads > 0, "heads");
  need(c.ffn > 0, "ffn");
  need(c.max_len > 0, "max_len");
  need(c.max_question_len > 0, "max_question_len");
  need(c.max_span > 0, "max_span");
  need(c.entail_threshold > 0, "entail_threshold");
  if (c.hidden_dim % c.heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream out;
  const auto j = to_json(c);
  for (const auto& key : config_keys()) {
    const auto& v = j.at(key);
    out << key << " = ";
    if (v.is_string()) out << v.get<std::string>();
    else if (v.is_boolean()) out << (v.get<bool>() ? "true" : "false");
    else if (v.is_number_float()) out << format_double(v.get<double>());
    else out << v.dump();
    out << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"clip_norm", c.clip_norm},
          {"lambda_entail", c.lambda_entail},
          {"beam_size", c.beam_size},
          {"hidden_dim", c.hidden_dim},
          {"k_retrieved", c.k_retrieved},
          {"seed", c.seed},
          {"fusion", std::string(to_string(c.fusion))},
          {"retrieval", std::string(to_string(c.retrieval))},
          {"hybrid_weight", c.hybrid_weight},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ffn", c.ffn},
          {"max_len", c.max_len},
          {"rgcn_layers", c.rgcn_layers},
          {"max_question_len", c.max_question_len},
          {"max_span", c.max_span},
          {"static_logits", c.static_logits},
          {"entail_threshold", c.entail_threshold},
          {"bleu_aggregation", std::string(to_string(c.bleu_aggregation))}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (v.is_string()) apply_setting(c, key, v.get<std::string>());
    else if (v.is_boolean()) apply_setting(c, key, v.get<bool>() ? "true" : "false");
    else if (v.is_number_float()) apply_setting(c, key, format_double(v.get<double>()));
    else apply_setting(c, key, v.dump());
  }
  return c;
}

ModelConfig model_config(const TrainConfig& c) {
  ModelConfig m;
  m.hidden = c.hidden_dim;
  m.heads = c.heads;
  m.fusion_heads = c.heads;
  m.layers = c.layers;
  m.ffn = c.ffn;
  m.max_len = c.max_len;
  m.rgcn_layers = c.rgcn_layers;
  m.max_question_len = c.max_question_len;
  m.max_span = c.max_span;
  m.fusion = c.fusion;
  m.static_logits = c.static_logits;
  return m;
}

// ---- model --------------------------------------------------------------------------

Vocabulary build_vocabulary(const Corpus& corpus) {
  Vocabulary v;
  v.add("yes");
  v.add("no");
  for (const auto& r : corpus.rules) {
    v.add_text(r.title);
    v.add_text(r.text);
  }
  for (const auto& e : corpus.split.train) {
    v.add_text(e.question);
    v.add_text(e.scenario);
    for (const auto& t : e.history) v.add_text(t.follow_up_question);
    if (e.gold_follow_up) v.add_text(*e.gold_follow_up);
  }
  return v;
}

Model Model::initialize(const TrainConfig& config, Vocabulary vocab) {
  validate(config);
  Model m;
  m.config = config;
  m.vocab = std::move(vocab);
  const ModelConfig mc = m.model_config();
  Rng rng(config.seed);
  init_encoder(m.params, mc, m.vocab.size(), rng);
  init_decision(m.params, mc.hidden, rng);
  init_generation(m.params, mc, m.vocab.size(), rng);
  return m;
}

void Model::save(const std::filesystem::path& path) const {
  const nlohmann::json meta = {{"format", "oscar-model"},
                               {"config", to_json(config)},
                               {"vocab", vocab.to_json()},
                               {"epoch", epoch},
                               {"metrics", metrics}};
  save_checkpoint(path, params, meta.dump());
}

Model Model::load(const std::filesystem::path& path) {
  Model m;
  const auto meta = nlohmann::json::parse(load_checkpoint(path, m.params));
  if (meta.value("format", "") != "oscar-model") {
    throw std::runtime_error(path.string() + ": not a model checkpoint");
  }
  m.config = config_from_json(meta.at("config"));
  m.vocab = Vocabulary::from_json(meta.at("vocab"));
  m.epoch = meta.at("epoch").get<std::size_t>();
  m.metrics = meta.at("metrics");
  return m;
}

std::string parameter_group(const std::string& name) { return name.substr(0, name.find('.')); }

Tensor joint_loss(const Tensor& l_d, const std::optional<Tensor>& l_g) {
  return l_g ? add(l_d, *l_g) : l_d;
}

// ---- pipeline -----------------------------------------------------------------------

Pipeline::Pipeline(const Corpus& corpus, const Retriever& retriever, Model& model)
    : corpus_(corpus), retriever_(retriever), model_(model) {
  for (const auto& r : corpus.rules) parsed_.emplace(r.doc_id, parse_rule(r.doc_id, r.text));
}

const ParsedRule& Pipeline::parsed(const std::string& doc_id) const {
  auto it = parsed_.find(doc_id);
  if (it == parsed_.end()) throw std::out_of_range("unknown rule document " + doc_id);
  return it->second;
}

PreparedExample Pipeline::prepare(const DialogueExample& e) const {
  const TrainConfig& cfg = model_.config;
  PreparedExample out;
  out.example = &e;
  out.retrieved = retriever_.retrieve(build_query(e), cfg.k_retrieved, cfg.retrieval);
  std::vector<ParsedRule> docs;
  for (const auto& d : out.retrieved) docs.push_back(parsed(d.doc_id));
  out.input = serialize(e, docs, model_.vocab, cfg.max_len);

  EntailmentLabelOptions opts;
  opts.threshold = cfg.entail_threshold;
  for (const auto& doc : out.input.kept) {
    if (doc.doc_id == e.gold_doc_id) {
      out.gold_doc_retrieved = true;
      const auto labels = derive_entailment_labels(e, doc, opts);
      out.entailment_labels.insert(out.entailment_labels.end(), labels.begin(), labels.end());
    } else {
      out.entailment_labels.insert(out.entailment_labels.end(), doc.edus.size(), kUnlabeled);
    }
  }

  if (e.gold_follow_up) {
    out.question_ids = model_.vocab.encode(*e.gold_follow_up);
    if (out.question_ids.size() > cfg.max_question_len) out.question_ids.resize(cfg.max_question_len);
    if (e.decision == Decision::Inquire) {
      std::vector<std::vector<std::string>> words;
      std::size_t total = 0;
      for (const auto& r : out.input.rules) {
        words.push_back(r.words);
        total += r.words.size();
      }
      if (total > 0) out.gold_span = label_gold_span(words, *e.gold_follow_up);
    }
  }
  return out;
}

namespace {

std::size_t argmax_row(const Tensor& t) {
  const auto d = t.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

// Spans longer than the generation budget keep their first max_span tokens.
SpanPrediction to_prediction(const GoldSpan& g, std::size_t max_span) {
  return {g.doc, g.start, std::min(g.end, g.start + max_span - 1), 0.0};
}

}  // namespace

LossParts Pipeline::loss(const PreparedExample& pr) const {
  const ModelConfig mc = model_.model_config();
  const ParameterStore& p = model_.params;
  const DialogueExample& e = *pr.example;

  const EncoderOutput enc = encode(p, mc, pr.input);
  const Tensor conds = gather_rows(enc.fused, enc.edu_rows);
  const Tensor f = entailment_head(p, conds);
  const DecisionScores ds = decision_head(p, f, conds);
  const Tensor l_dec = decision_loss(ds.logits, e.decision);
  const Tensor l_ent = entailment_loss(f, pr.entailment_labels);
  const Tensor l_d = decision_total_loss(l_dec, l_ent, model_.config.lambda_entail);

  LossParts out;
  out.decision = l_dec.item();
  out.entail = l_ent.item();
  out.predicted = static_cast<Decision>(argmax_row(ds.logits));

  std::optional<Tensor> l_g;
  std::optional<Tensor> l_span;
  if (pr.gold_span && !pr.question_ids.empty()) {
    const SpanScores ss = span_scores(p, enc.tokens, pr.input);
    l_span = span_loss(ss, pr.gold_span->doc, pr.gold_span->start, pr.gold_span->end);
    const auto gi = build_generation_input(pr.input, to_prediction(*pr.gold_span, mc.max_span),
                                           model_.vocab, mc.max_len);
    const Tensor he = encode_generation_input(p, mc, gi.token_ids);
    const Tensor h = fuse_states(p, mc, enc.fused, he);
    l_g = generation_loss(p, mc, h, pr.question_ids);
    out.generation = l_g->item();
    out.span = l_span->item();
  }
  out.total = joint_loss(l_d, l_g);
  if (l_span) out.total = add(out.total, *l_span);
  return out;
}

Prediction Pipeline::predict(const DialogueExample& example, const PredictOptions& options) const {
  return predict(prepare(example), options);
}

Prediction Pipeline::predict(const PreparedExample& pr, const PredictOptions& options) const {
  NoGradGuard no_grad;
  const ModelConfig mc = model_.model_config();
  const ParameterStore& p = model_.params;

  Prediction out;
  out.utterance_id = pr.example->utterance_id;
  for (const auto& doc : pr.input.kept) out.retrieved.push_back(doc.doc_id);

  const EncoderOutput enc = encode(p, mc, pr.input);
  const Tensor conds = gather_rows(enc.fused, enc.edu_rows);
  const Tensor f = entailment_head(p, conds);
  const DecisionScores ds = decision_head(p, f, conds);
  const Tensor probs = softmax(ds.logits, 1);
  for (int c = 0; c < kNumDecisions; ++c) out.probabilities[static_cast<std::size_t>(c)] = probs.at(0, c);
  out.decision = static_cast<Decision>(argmax_row(ds.logits));

  const Tensor fp = softmax(f, 1);
  std::size_t row = 0;
  for (const auto& doc : pr.input.kept) {
    for (const auto& edu : doc.edus) {
      ConditionOutput c;
      c.doc_id = doc.doc_id;
      c.text = edu.text;
      for (std::size_t s = 0; s < 3; ++s) c.entailment[s] = fp.at(row, s);
      c.attention = ds.attention.at(row, 0);
      out.conditions.push_back(std::move(c));
      ++row;
    }
  }

  if (out.decision != Decision::Inquire && !options.force_question) return out;

  SpanPrediction span;
  if (options.gold_span && pr.gold_span) {
    span = to_prediction(*pr.gold_span, mc.max_span);
  } else {
    span = predict_span(span_scores(p, enc.tokens, pr.input), mc.max_span);
  }
  const auto gi = build_generation_input(pr.input, span, model_.vocab, mc.max_len);
  const Tensor he = encode_generation_input(p, mc, gi.token_ids);
  const Tensor h = fuse_states(p, mc, enc.fused, he);
  const auto beams = beam_search(decoder_step(p, mc, h), model_.vocab.size(), Vocabulary::kEos,
                                 model_.config.beam_size, mc.max_question_len + 1);
  out.span = SpanOutput{pr.input.kept.at(span.doc).doc_id, span.doc, span.start, span.end,
                        join(gi.span_words)};
  for (const auto& b : beams) out.beam.push_back({join(model_.vocab.decode(b.tokens)), b.score()});
  out.question = out.beam.front().text;
  return out;
}

nlohmann::json to_json(const Prediction& p) {
  nlohmann::json j = {{"utterance_id", p.utterance_id},
                      {"decision", std::string(to_string(p.decision))},
                      {"probabilities", nlohmann::json::object()},
                      {"retrieved", p.retrieved},
                      {"conditions", nlohmann::json::array()}};
  for (int c = 0; c < kNumDecisions; ++c) {
    j["probabilities"][std::string(to_string(static_cast<Decision>(c)))] =
        p.probabilities[static_cast<std::size_t>(c)];
  }
  for (const auto& c : p.conditions) {
    j["conditions"].push_back({{"doc_id", c.doc_id},
                               {"text", c.text},
                               {"entailment", c.entailment[0]},
                               {"contradiction", c.entailment[1]},
                               {"unmentioned", c.entailment[2]},
                               {"attention", c.attention}});
  }
  if (p.span) {
    j["predicted_span"] = {{"doc_id", p.span->doc_id},
                           {"start", p.span->start},
                           {"end", p.span->end},
                           {"text", p.span->text}};
  }
  if (p.question) {
    j["question"] = *p.question;
    j["beam"] = nlohmann::json::array();
    for (const auto& b : p.beam) j["beam"].push_back({{"text", b.text}, {"score", b.score}});
  }
  return j;
}

// ---- training -----------------------------------------------------------------------

TrainingError::TrainingError(const std::string& what, nlohmann::json diagnostics)
    : std::runtime_error(what + " " + diagnostics.dump()), diagnostics_(std::move(diagnostics)) {}

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},           {"loss", m.loss},         {"l_decision", m.decision},
          {"l_entail", m.entail},       {"l_gen", m.generation},  {"l_span", m.span},
          {"train_micro", m.train_micro}, {"grad_norm", m.grad_norm}, {"steps", m.steps}};
}

std::vector<EpochMetrics> train(Pipeline& pipeline, const std::vector<DialogueExample>& examples,
                                const TrainOptions& options) {
  Model& model = pipeline.model();
  const TrainConfig& cfg = model.config;
  validate(cfg);
  std::vector<EpochMetrics> history;
  if (examples.empty() || cfg.epochs == 0) return history;

  // Retrieval is frozen, so every example is prepared once.
  std::vector<PreparedExample> prepared;
  prepared.reserve(examples.size());
  for (const auto& e : examples) prepared.push_back(pipeline.prepare(e));

  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  OptimizerState state;
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics m;
    m.epoch = model.epoch + 1;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - b);
      model.params.zero_grad();
      double batch_loss = 0;
      for (std::size_t i = b; i < end; ++i) {
        const PreparedExample& pr = prepared[order[i]];
        LossParts parts;
        auto diagnose = [&](const std::string& why) {
          return TrainingError("training aborted: " + why,
                               {{"epoch", m.epoch},
                                {"batch", b / cfg.batch_size},
                                {"utterance_id", pr.example->utterance_id},
                                {"l_decision", parts.decision},
                                {"l_entail", parts.entail},
                                {"l_gen", parts.generation},
                                {"l_span", parts.span}});
        };
        try {
          parts = pipeline.loss(pr);
        } catch (const NumericError& err) {
          throw diagnose(std::string("non-finite value: ") + err.what());
        }
        const double value = parts.total.item();
        if (!std::isfinite(value)) throw diagnose("non-finite loss");
        scale(parts.total, weight).backward();
        batch_loss += value;
        m.loss += value;
        m.decision += parts.decision;
        m.entail += parts.entail;
        m.generation += parts.generation;
        m.span += parts.span;
        correct += parts.predicted == pr.example->decision;
      }
      const ClipResult clip = clip_gradients(model.params, cfg.clip_norm);
      if (!std::isfinite(clip.norm)) {
        throw TrainingError("training aborted: non-finite gradient",
                            {{"epoch", m.epoch}, {"batch", b / cfg.batch_size}, {"loss", batch_loss}});
      }
      m.grad_norm += clip.norm;
      adam_step(model.params, state, adam);
      ++m.steps;
    }
    const double n = static_cast<double>(prepared.size());
    m.loss /= n;
    m.decision /= n;
    m.entail /= n;
    m.generation /= n;
    m.span /= n;
    m.train_micro = 100.0 * static_cast<double>(correct) / n;
    m.grad_norm /= static_cast<double>(m.steps);
    model.epoch = m.epoch;
    model.metrics = to_json(m);
    history.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
    if (options.stop && options.stop(m)) break;
  }
  return history;
}

}  // namespace oscar
