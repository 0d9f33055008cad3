#include "oscar/corpus.hpp"

#include "oscar/text.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

namespace oscar {

using nlohmann::json;

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::Yes: return "Yes";
    case Decision::No: return "No";
    case Decision::Inquire: return "Inquire";
    case Decision::Irrelevant: return "Irrelevant";
  }
  return "?";
}

std::string_view to_string(Answer a) { return a == Answer::Yes ? "Yes" : "No"; }

Decision parse_decision(std::string_view s) {
  // OR-ShARC spells the decisions in lower case ("more" for Inquire).
  std::string low(s);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (low == "yes") return Decision::Yes;
  if (low == "no") return Decision::No;
  if (low == "inquire" || low == "more") return Decision::Inquire;
  if (low == "irrelevant") return Decision::Irrelevant;
  throw CorpusError("unknown decision \"" + std::string(s) + "\"");
}

Answer parse_answer(std::string_view s) {
  std::string low(s);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  if (low == "yes") return Answer::Yes;
  if (low == "no") return Answer::No;
  throw CorpusError("history answer must be Yes or No, got \"" + std::string(s) + "\"");
}

CorpusError::CorpusError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

void CorpusSplit::refresh_seen() {
  seen_doc_ids.clear();
  for (const auto& e : train) seen_doc_ids.insert(e.gold_doc_id);
}

const RuleDocument& Corpus::rule(const std::string& doc_id) const {
  return rules.at(rule_index(doc_id));
}

std::size_t Corpus::rule_index(const std::string& doc_id) const {
  auto it = index_.find(doc_id);
  if (it == index_.end()) throw CorpusError("unknown doc_id \"" + doc_id + "\"");
  return it->second;
}

void Corpus::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (!index_.emplace(rules[i].doc_id, i).second) {
      throw CorpusError("duplicate doc_id \"" + rules[i].doc_id + "\"");
    }
  }
}

// ---- json mapping -------------------------------------------------------------

namespace {

const std::set<std::string> kRuleFields = {"doc_id", "title", "text"};
const std::set<std::string> kExampleFields = {
    "utterance_id", "tree_id", "gold_doc_id", "question", "scenario", "history",
    "evidence", "decision", "gold_follow_up", "split"};

json extras(const json& j, const std::set<std::string>& known) {
  json out = json::object();
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) out[k] = v;
  }
  return out;
}

std::string str_field(const json& j, const char* key, bool required = true) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw CorpusError(std::string("missing field \"") + key + "\"");
    return {};
  }
  if (!it->is_string()) throw CorpusError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

json to_json(const RuleDocument& r) {
  json j = r.extra;
  j["doc_id"] = r.doc_id;
  j["title"] = r.title;
  j["text"] = r.text;
  return j;
}

json to_json(const DialogueExample& e) {
  json j = e.extra;
  j["utterance_id"] = e.utterance_id;
  j["tree_id"] = e.tree_id;
  j["gold_doc_id"] = e.gold_doc_id;
  j["question"] = e.question;
  j["scenario"] = e.scenario;
  json history = json::array();
  for (const auto& t : e.history) {
    history.push_back({{"follow_up_question", t.follow_up_question},
                       {"follow_up_answer", to_string(t.follow_up_answer)}});
  }
  j["history"] = std::move(history);
  j["evidence"] = e.evidence;
  j["decision"] = to_string(e.decision);
  j["gold_follow_up"] = e.gold_follow_up ? json(*e.gold_follow_up) : json(nullptr);
  return j;
}

RuleDocument rule_from_json(const json& j) {
  if (!j.is_object()) throw CorpusError("rule must be a JSON object");
  RuleDocument r;
  r.doc_id = str_field(j, "doc_id");
  r.title = str_field(j, "title", false);
  r.text = str_field(j, "text");
  r.extra = extras(j, kRuleFields);
  return r;
}

DialogueExample example_from_json(const json& j) {
  if (!j.is_object()) throw CorpusError("example must be a JSON object");
  DialogueExample e;
  e.utterance_id = str_field(j, "utterance_id");
  e.tree_id = str_field(j, "tree_id", false);
  e.gold_doc_id = str_field(j, "gold_doc_id", false);
  e.question = str_field(j, "question");
  e.scenario = str_field(j, "scenario", false);
  if (auto it = j.find("history"); it != j.end() && !it->is_null()) {
    for (const auto& t : *it) {
      e.history.push_back({str_field(t, "follow_up_question"),
                           parse_answer(str_field(t, "follow_up_answer"))});
    }
  }
  if (auto it = j.find("evidence"); it != j.end() && !it->is_null()) {
    for (const auto& ev : *it) {
      // OR-ShARC evidence entries are QA objects; keep them as compact JSON text.
      e.evidence.push_back(ev.is_string() ? ev.get<std::string>() : ev.dump());
    }
  }
  e.decision = parse_decision(str_field(j, "decision"));
  if (auto it = j.find("gold_follow_up"); it != j.end() && !it->is_null()) {
    e.gold_follow_up = it->get<std::string>();
  }
  e.extra = extras(j, kExampleFields);
  return e;
}

// ---- JSONL io -------------------------------------------------------------------

namespace {

template <typename F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(std::string("malformed JSON: ") + e.what(), n);
    }
    try {
      f(j);
    } catch (const CorpusError& e) {
      throw CorpusError(e.what(), n);
    } catch (const json::exception& e) {
      throw CorpusError(e.what(), n);
    }
  }
}

}  // namespace

std::vector<RuleDocument> read_rules(std::istream& in) {
  std::vector<RuleDocument> rules;
  std::set<std::string> ids;
  for_each_line(in, [&](const json& j) {
    auto r = rule_from_json(j);
    if (!ids.insert(r.doc_id).second) throw CorpusError("duplicate doc_id \"" + r.doc_id + "\"");
    rules.push_back(std::move(r));
  });
  return rules;
}

CorpusSplit read_examples(std::istream& in, std::string_view default_split) {
  CorpusSplit split;
  for_each_line(in, [&](const json& j) {
    std::string which(default_split);
    if (auto it = j.find("split"); it != j.end()) which = it->get<std::string>();
    auto e = example_from_json(j);
    if (which == "train") split.train.push_back(std::move(e));
    else if (which == "dev") split.dev.push_back(std::move(e));
    else if (which == "test") split.test.push_back(std::move(e));
    else throw CorpusError("unknown split \"" + which + "\"");
  });
  split.refresh_seen();
  return split;
}

void write_rules(std::ostream& out, const std::vector<RuleDocument>& rules) {
  for (const auto& r : rules) out << to_json(r).dump() << '\n';
}

void write_examples(std::ostream& out, const CorpusSplit& split) {
  auto emit = [&](const std::vector<DialogueExample>& v, const char* name) {
    for (const auto& e : v) {
      json j = to_json(e);
      j["split"] = name;
      out << j.dump() << '\n';
    }
  };
  emit(split.train, "train");
  emit(split.dev, "dev");
  emit(split.test, "test");
}

void validate(const Corpus& corpus) {
  if (corpus.rules.empty()) throw CorpusError("empty corpus");
  std::set<std::string> ids;
  for (const auto& r : corpus.rules) {
    if (!ids.insert(r.doc_id).second) throw CorpusError("duplicate doc_id \"" + r.doc_id + "\"");
    if (trim(r.text).empty()) throw CorpusError("rule \"" + r.doc_id + "\" has empty text");
  }
  auto check = [&](const std::vector<DialogueExample>& v) {
    for (const auto& e : v) {
      const bool inquire = e.decision == Decision::Inquire;
      if (inquire && !e.gold_follow_up) {
        throw CorpusError("example \"" + e.utterance_id + "\" is Inquire without gold_follow_up");
      }
      if (!inquire && e.gold_follow_up) {
        throw CorpusError("example \"" + e.utterance_id + "\" has gold_follow_up but is not Inquire");
      }
      if (!e.gold_doc_id.empty() && !ids.contains(e.gold_doc_id)) {
        throw CorpusError("example \"" + e.utterance_id + "\" references unknown doc \"" +
                          e.gold_doc_id + "\"");
      }
    }
  };
  check(corpus.split.train);
  check(corpus.split.dev);
  check(corpus.split.test);
  std::set<std::string> seen;
  for (const auto& e : corpus.split.train) seen.insert(e.gold_doc_id);
  if (seen != corpus.split.seen_doc_ids) throw CorpusError("seen_doc_ids out of sync with train");
}

namespace {

std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw CorpusError("cannot open " + p.string());
  return in;
}

Corpus finish_corpus(std::vector<RuleDocument> rules, CorpusSplit split) {
  Corpus c;
  c.rules = std::move(rules);
  c.split = std::move(split);
  validate(c);
  c.reindex();
  return c;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& rules_path,
                   const std::filesystem::path& examples_path) {
  auto rin = open_or_throw(rules_path);
  auto rules = read_rules(rin);
  auto ein = open_or_throw(examples_path);
  return finish_corpus(std::move(rules), read_examples(ein));
}

Corpus load_corpus(const std::filesystem::path& rules_path, const std::filesystem::path& train,
                   const std::filesystem::path& dev, const std::filesystem::path& test) {
  auto rin = open_or_throw(rules_path);
  auto rules = read_rules(rin);
  CorpusSplit split;
  auto tin = open_or_throw(train);
  split.train = read_examples(tin, "train").train;
  auto din = open_or_throw(dev);
  split.dev = read_examples(din, "dev").dev;
  auto xin = open_or_throw(test);
  split.test = read_examples(xin, "test").test;
  split.refresh_seen();
  return finish_corpus(std::move(rules), std::move(split));
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ofstream r(dir / "rules.jsonl");
  write_rules(r, corpus.rules);
  std::ofstream e(dir / "examples.jsonl");
  write_examples(e, corpus.split);
  if (!r || !e) throw CorpusError("cannot write corpus to " + dir.string());
}

SeenUnseen partition_seen_unseen(const std::vector<DialogueExample>& eval,
                                 const std::set<std::string>& seen_doc_ids) {
  SeenUnseen out;
  for (const auto& e : eval) {
    (seen_doc_ids.contains(e.gold_doc_id) ? out.seen : out.unseen).push_back(e);
  }
  return out;
}

// ---- synthetic corpora -------------------------------------------------------------

namespace {

// Atomic conditions in "you <verb phrase>" form; every verb phrase takes
// do-support, so the follow-up question is "do " + condition.
const std::vector<std::string> kConditions = {
    "you live in scotland",        "you live in wales",
    "you have a disability",       "you have children under five",
    "you own a home",              "you own a car",
    "you work full time",          "you work part time",
    "you receive pension credit",  "you receive housing benefit",
    "you care for a relative",     "you earn under 200 pounds a week",
    "you pay council tax",         "you study at university",
    "you rent from a landlord",    "you serve in the armed forces",
    "you claim jobseekers allowance", "you need help with heating",
    "you travel to work by bus",   "you look after a foster child",
    "you run a small business",    "you hold a valid passport",
    "you attend a training course", "you support a dependent adult",
};

// Title words never occur in a condition, so a title alone identifies its rule.
// Both lists hold 20 words.
const std::vector<std::string> kTitleFirst = {
    "winter", "harvest", "coastal", "veteran", "childcare", "energy", "student", "rural",
    "family", "funeral", "maternity", "tenant", "water", "transport", "island", "mobility",
    "apprentice", "warmth", "garden", "broadband"};
const std::vector<std::string> kTitleSecond = {
    "payment", "grant", "subsidy", "bursary", "loan", "bonus", "relief", "stipend",
    "discount", "fund", "voucher", "rebate", "award", "pass", "premium", "exemption",
    "concession", "endowment", "reimbursement", "dividend"};
const std::vector<std::string> kIrrelevantTopics = {
    "fishing licence", "parking permit", "marriage certificate", "dog licence",
    "library card", "boat registration", "firearms certificate", "street trading licence"};

enum class Form { Single, And, Or };

std::string_view form_name(Form f) {
  return f == Form::Single ? "single" : f == Form::And ? "and" : "or";
}

struct SyntheticRule {
  std::string doc_id;
  std::string title;
  Form form = Form::Single;
  std::vector<std::string> conditions;
};

// 0 = unknown, 1 = yes, 2 = no
using States = std::vector<int>;

// Three-valued evaluation; `asked` is the first unknown condition on Inquire.
Decision evaluate(Form form, const States& s, int& asked) {
  asked = -1;
  const bool any_no = std::count(s.begin(), s.end(), 2) > 0;
  const bool any_yes = std::count(s.begin(), s.end(), 1) > 0;
  const bool all_yes = std::count(s.begin(), s.end(), 1) == static_cast<long>(s.size());
  const bool all_no = std::count(s.begin(), s.end(), 2) == static_cast<long>(s.size());
  Decision d;
  if (form == Form::Or) d = any_yes ? Decision::Yes : all_no ? Decision::No : Decision::Inquire;
  else d = any_no ? Decision::No : all_yes ? Decision::Yes : Decision::Inquire;
  if (d == Decision::Inquire) {
    asked = static_cast<int>(std::find(s.begin(), s.end(), 0) - s.begin());
  }
  return d;
}

std::string question_for(const std::string& condition) { return "Do " + condition + "?"; }

std::string scenario_sentence(const std::string& condition, bool holds) {
  const std::string rest = condition.substr(4);  // drop "you "
  return holds ? "I " + rest + "." : "I do not " + rest + ".";
}

// mt19937_64 output is fully specified, so modulo draws are reproducible
// across standard libraries (unlike the std distributions).
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[pick(rng, i)]);
}

std::vector<SyntheticRule> make_rules(std::mt19937_64& rng, std::size_t n_rules) {
  // Both title words are distinct across the first 20 rules.
  std::vector<std::string> first = kTitleFirst, second = kTitleSecond;
  shuffle(first, rng);
  shuffle(second, rng);
  std::vector<SyntheticRule> rules;
  for (std::size_t i = 0; i < n_rules; ++i) {
    SyntheticRule r;
    r.doc_id = "rule-" + std::to_string(i);
    r.title = first[i % first.size()] + " " + second[(i + i / first.size()) % second.size()];
    if (i >= first.size()) r.title += " scheme " + std::to_string(i / first.size() + 1);
    const std::size_t n_cond = 1 + pick(rng, 4);
    r.form = n_cond == 1 ? Form::Single : (pick(rng, 2) == 0 ? Form::And : Form::Or);
    std::vector<std::string> pool = kConditions;
    shuffle(pool, rng);
    r.conditions.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_cond));
    rules.push_back(std::move(r));
  }
  return rules;
}

std::string rule_text(const SyntheticRule& r) {
  std::string text = "You can get the " + r.title + " if " + r.conditions[0];
  const char* joiner = r.form == Form::Or ? " or " : " and ";
  for (std::size_t i = 1; i < r.conditions.size(); ++i) text += joiner + r.conditions[i];
  return text + ".";
}

DialogueExample make_example(std::mt19937_64& rng, const SyntheticRule& rule, std::size_t serial,
                             double irrelevant_fraction) {
  DialogueExample e;
  e.utterance_id = "syn-" + std::to_string(serial);
  e.tree_id = rule.doc_id;
  e.gold_doc_id = rule.doc_id;

  const std::size_t n = rule.conditions.size();
  States states(n, 0);
  int asked = -1;
  const bool irrelevant = unit(rng) < irrelevant_fraction;
  if (irrelevant) {
    e.question = "Can I get a " + kIrrelevantTopics[pick(rng, kIrrelevantTopics.size())] + "?";
    e.decision = Decision::Irrelevant;
  } else {
    e.question = "Can I get the " + rule.title + "?";
    // Draw the target class first so all three logical outcomes stay common.
    const auto target = static_cast<Decision>(pick(rng, 3));
    for (;;) {
      for (auto& s : states) s = static_cast<int>(pick(rng, 3));
      if (evaluate(rule.form, states, asked) == target) break;
    }
    e.decision = target;
  }

  std::vector<std::string> scenario;
  for (std::size_t i = 0; i < n; ++i) {
    if (states[i] == 0) continue;
    const bool holds = states[i] == 1;
    if (pick(rng, 2) == 0) {
      e.history.push_back({question_for(rule.conditions[i]), holds ? Answer::Yes : Answer::No});
    } else {
      scenario.push_back(scenario_sentence(rule.conditions[i], holds));
    }
  }
  for (std::size_t i = 0; i < scenario.size(); ++i) e.scenario += (i ? " " : "") + scenario[i];
  if (e.decision == Decision::Inquire) e.gold_follow_up = question_for(rule.conditions[asked]);

  json st = json::array();
  for (int s : states) st.push_back(s == 0 ? "unknown" : s == 1 ? "yes" : "no");
  e.extra["synthetic"] = {{"form", form_name(rule.form)},
                          {"conditions", rule.conditions},
                          {"states", st},
                          {"asked", asked},
                          {"irrelevant", irrelevant}};
  return e;
}

}  // namespace

Corpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticOptions& options) {
  if (options.n_rules == 0) throw CorpusError("synthetic corpus needs at least one rule");
  std::mt19937_64 rng(seed);
  const auto rules = make_rules(rng, options.n_rules);

  std::size_t n_unseen = static_cast<std::size_t>(
      static_cast<double>(options.n_rules) * options.unseen_rule_fraction + 0.5);
  if (n_unseen >= options.n_rules) n_unseen = options.n_rules - 1;
  const std::size_t n_seen = options.n_rules - n_unseen;

  Corpus corpus;
  for (const auto& r : rules) {
    RuleDocument doc{r.doc_id, r.title, rule_text(r), json::object()};
    doc.extra["synthetic"] = {{"form", form_name(r.form)}, {"conditions", r.conditions}};
    corpus.rules.push_back(std::move(doc));
  }

  std::size_t serial = 0;
  // Train cycles through the seen rules so each one is covered.
  for (std::size_t i = 0; i < options.n_train; ++i) {
    const auto& rule = rules[i % n_seen];
    corpus.split.train.push_back(make_example(rng, rule, serial++, options.irrelevant_fraction));
  }
  auto eval_set = [&](std::size_t count) {
    std::vector<DialogueExample> out;
    for (std::size_t i = 0; i < count; ++i) {
      const bool unseen = n_unseen > 0 && unit(rng) < options.unseen_example_fraction;
      const auto& rule = unseen ? rules[n_seen + pick(rng, n_unseen)] : rules[pick(rng, n_seen)];
      out.push_back(make_example(rng, rule, serial++, options.irrelevant_fraction));
    }
    return out;
  };
  corpus.split.dev = eval_set(options.n_dev);
  corpus.split.test = eval_set(options.n_test);
  corpus.split.refresh_seen();
  validate(corpus);
  corpus.reindex();
  return corpus;
}

Corpus generate_synthetic_corpus(std::uint64_t seed, std::size_t n_rules, std::size_t n_examples) {
  if (n_examples == 0) throw CorpusError("synthetic corpus needs at least one example");
  SyntheticOptions o;
  o.n_rules = n_rules;
  o.n_dev = n_examples * 15 / 100;
  o.n_test = n_examples * 15 / 100;
  o.n_train = n_examples - o.n_dev - o.n_test;
  return generate_synthetic_corpus(seed, o);
}

}  // namespace oscar
