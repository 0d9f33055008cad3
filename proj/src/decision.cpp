#include "oscar/decision.hpp"

#include "oscar/text.hpp"

#include <set>
#include <stdexcept>

namespace oscar {

std::string_view to_string(EntailmentState s) {
  switch (s) {
    case EntailmentState::Entailment: return "Entailment";
    case EntailmentState::Contradiction: return "Contradiction";
    case EntailmentState::Unmentioned: return "Unmentioned";
  }
  return "?";
}

void init_decision(ParameterStore& p, std::size_t hidden, Rng& rng) {
  const std::size_t joint = kNumEntailmentStates + hidden;
  p.weight("decision.wf", hidden, kNumEntailmentStates, rng);
  p.zeros("decision.bf", 1, kNumEntailmentStates);
  p.weight("decision.wa", joint, 1, rng);
  p.zeros("decision.ba", 1, 1);
  p.weight("decision.wz", joint, kNumDecisions, rng);
  p.zeros("decision.bz", 1, kNumDecisions);
}

Tensor entailment_head(const ParameterStore& p, const Tensor& conditions) {
  if (conditions.rows() == 0) throw std::invalid_argument("entailment_head: no conditions");
  return add(matmul(conditions, p.get("decision.wf")), p.get("decision.bf"));
}

Tensor entailment_loss(const Tensor& scores, const std::vector<int>& labels) {
  if (labels.size() != scores.rows()) {
    throw std::invalid_argument("entailment_loss: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(scores.rows()) + " conditions");
  }
  bool any = false;
  for (int l : labels) any = any || l != kUnlabeled;
  if (!any) return Tensor::scalar(0.0);
  return cross_entropy(scores, labels);
}

DecisionScores decision_head(const ParameterStore& p, const Tensor& entailment,
                             const Tensor& conditions) {
  const Tensor parts[2] = {entailment, conditions};
  const Tensor joint = concat_cols(parts);
  DecisionScores out;
  out.attention_logits = add(matmul(joint, p.get("decision.wa")), p.get("decision.ba"));
  out.attention = softmax(out.attention_logits, 0);
  const Tensor pooled = matmul(transpose(out.attention), joint);
  out.logits = add(matmul(pooled, p.get("decision.wz")), p.get("decision.bz"));
  return out;
}

Tensor decision_loss(const Tensor& logits, Decision gold) {
  return cross_entropy(logits, static_cast<int>(gold));
}

Tensor decision_total_loss(const Tensor& l_decision, const Tensor& l_entail, double lambda) {
  return add(l_decision, scale(l_entail, lambda));
}

// ---- label derivation -----------------------------------------------------------------

namespace {

const std::set<std::string> kFunctionWords = {
    "a",    "an",  "the", "i",    "you",  "your", "my",   "me",     "we",   "it",
    "if",   "or",  "and", "but",  "unless", "when", "provided", "that", "so",
    "do",   "does", "did", "to",  "of",   "in",   "on",   "at",     "by",   "for",
    "with", "is",  "are", "am",   "be",   "can",  "will", "s",      "t",
};
const std::set<std::string> kNegations = {"not", "no", "never", "don", "doesn", "didn", "cannot"};

std::set<std::string> content(const std::vector<std::string>& tokens) {
  std::set<std::string> out;
  for (const auto& t : tokens) {
    if (!kFunctionWords.contains(t) && !kNegations.contains(t)) out.insert(t);
  }
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t both = 0;
  for (const auto& w : a) both += b.contains(w);
  return static_cast<double>(both) / static_cast<double>(a.size() + b.size() - both);
}

std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '.' || c == '?' || c == '!' || c == '\n') {
      if (!trim(cur).empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(cur);
  return out;
}

}  // namespace

double token_overlap(std::string_view a, std::string_view b) {
  return jaccard(content(tokenize(a)), content(tokenize(b)));
}

std::vector<int> derive_entailment_labels(const DialogueExample& example, const ParsedRule& rule,
                                          const EntailmentLabelOptions& options) {
  struct Fact {
    std::set<std::string> words;
    EntailmentState state;
  };
  std::vector<Fact> facts;
  for (const auto& h : example.history) {
    facts.push_back({content(tokenize(h.follow_up_question)),
                     h.follow_up_answer == Answer::Yes ? EntailmentState::Entailment
                                                       : EntailmentState::Contradiction});
  }
  if (options.use_scenario) {
    for (const auto& s : sentences(example.scenario)) {
      const auto tokens = tokenize(s);
      bool negated = false;
      for (const auto& t : tokens) negated = negated || kNegations.contains(t);
      facts.push_back({content(tokens), negated ? EntailmentState::Contradiction
                                                : EntailmentState::Entailment});
    }
  }

  std::vector<int> labels;
  for (const auto& edu : rule.edus) {
    const auto words = content(tokenize(edu.text));
    double best = 0.0;
    auto state = EntailmentState::Unmentioned;
    for (const auto& f : facts) {
      const double o = jaccard(words, f.words);
      if (o >= options.threshold && o > best) {
        best = o;
        state = f.state;
      }
    }
    labels.push_back(static_cast<int>(state));
  }
  return labels;
}

}  // namespace oscar
