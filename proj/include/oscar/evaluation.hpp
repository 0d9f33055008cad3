#pragma once

#include "oscar/corpus.hpp"
#include "oscar/pipeline.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

struct Accuracy {
  double micro = 0;  // percent
  double macro = 0;  // percent, mean recall over classes present in gold
};

/// Throws std::invalid_argument on empty or mismatched input.
Accuracy micro_macro_accuracy(const std::vector<Decision>& predicted,
                              const std::vector<Decision>& gold);

/// Sentence BLEU in [0, 1]: clipped n-gram precisions for n = 1..max_n,
/// geometric mean, brevity penalty exp(1 - r/c) when c < r. Zero precisions
/// become 1e-9. An empty candidate scores 0.
double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n);

/// Matches and lengths summed over the corpus before combining.
double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, int max_n);

/// Mean sentence BLEU or corpus BLEU; 0 for an empty list.
double aggregate_bleu(const std::vector<std::vector<std::string>>& candidates,
                      const std::vector<std::vector<std::string>>& references, int max_n,
                      BleuAggregation how);

/// precision = sum(b) / |P|, recall = sum(b) / |G|, F1 = 2PR / (P + R) as a
/// percentage; `scores` holds b_e for every e in P and G.
double f1_from_scores(std::size_t n_predicted, std::size_t n_gold, const std::vector<double>& scores);

/// What evaluation needs to know about one example.
struct ExampleOutcome {
  std::string utterance_id;
  bool seen = false;
  Decision gold = Decision::Irrelevant;
  Decision predicted = Decision::Irrelevant;
  std::optional<std::vector<std::string>> question;   // generated tokens
  std::optional<std::vector<std::string>> reference;  // gold follow-up tokens
  std::vector<std::string> retrieved;                 // ranked doc ids
  std::string gold_doc_id;
};

/// F1_BLEU-n over outcomes: P = predicted Inquire, G = gold Inquire, b_e the
/// BLEU-n of e's question for e in both.
double f1_bleu(const std::vector<ExampleOutcome>& outcomes, int n);

inline const std::vector<std::size_t>& recall_depths() {
  static const std::vector<std::size_t> depths{1, 5, 10, 20};
  return depths;
}

/// All values are percentages; unset when the subset has nothing to score.
struct SubsetReport {
  std::size_t n = 0;
  std::size_t gold_inquire = 0;
  std::size_t predicted_inquire = 0;
  std::optional<double> micro, macro;
  std::optional<double> bleu1, bleu4;  // over gold-Inquire examples
  std::optional<double> f1_bleu1, f1_bleu4;
  std::map<std::size_t, double> recall;  // depth -> recall
};

enum class SpanMode { Predicted, Gold };
std::string_view to_string(SpanMode m);
SpanMode parse_span_mode(std::string_view s);

struct EvalReport {
  std::string split;
  SpanMode mode = SpanMode::Predicted;
  BleuAggregation aggregation = BleuAggregation::SentenceMean;
  SubsetReport all, seen, unseen;
};

SubsetReport score_subset(const std::vector<ExampleOutcome>& outcomes, BleuAggregation how);
/// Splits outcomes by their `seen` flag and scores the total and both parts.
EvalReport score(const std::vector<ExampleOutcome>& outcomes, BleuAggregation how);

nlohmann::json to_json(const SubsetReport& r);
nlohmann::json to_json(const EvalReport& r);
/// Aligned plain-text table, one row per subset.
std::string format_table(const EvalReport& r);

struct Evaluation {
  EvalReport report;
  std::vector<ExampleOutcome> outcomes;
  std::vector<Prediction> predictions;
};

/// Runs the pipeline over `examples`. Every gold-Inquire example gets a
/// question (generated even when the predicted decision differs) so BLEU can
/// be measured; Gold mode feeds the labelled span to the generator. Retrieval
/// recall uses the configured retrieval method at depth 20.
Evaluation evaluate(const Pipeline& pipeline, const std::vector<DialogueExample>& examples,
                    const std::set<std::string>& seen_doc_ids, SpanMode mode,
                    const std::string& split_name);

}  // namespace oscar
