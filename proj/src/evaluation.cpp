#include "oscar/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace oscar {

Accuracy micro_macro_accuracy(const std::vector<Decision>& predicted,
                              const std::vector<Decision>& gold) {
  if (predicted.size() != gold.size()) {
    throw std::invalid_argument("micro_macro_accuracy: prediction and gold counts differ");
  }
  if (gold.empty()) throw std::invalid_argument("micro_macro_accuracy: no examples");
  std::array<std::size_t, kNumDecisions> hit{}, count{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = static_cast<std::size_t>(gold[i]);
    ++count[g];
    if (predicted[i] == gold[i]) {
      ++hit[g];
      ++correct;
    }
  }
  double recall_sum = 0;
  std::size_t present = 0;
  for (int c = 0; c < kNumDecisions; ++c) {
    if (count[c] == 0) continue;
    recall_sum += static_cast<double>(hit[c]) / static_cast<double>(count[c]);
    ++present;
  }
  return {100.0 * static_cast<double>(correct) / static_cast<double>(gold.size()),
          100.0 * recall_sum / static_cast<double>(present)};
}

namespace {

constexpr double kZeroPrecision = 1e-9;

struct NgramStats {
  std::vector<std::size_t> matches, totals;  // per order 1..max_n
  std::size_t candidate_len = 0, reference_len = 0;
};

NgramStats ngram_stats(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                       int max_n) {
  NgramStats s;
  s.candidate_len = cand.size();
  s.reference_len = ref.size();
  for (int n = 1; n <= max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + un <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + un}];
    for (std::size_t i = 0; i + un <= cand.size(); ++i) ++cand_counts[{cand.begin() + i, cand.begin() + i + un}];
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(c, it->second);
    }
    s.matches.push_back(matched);
    s.totals.push_back(total);
  }
  return s;
}

double combine(const NgramStats& s, int max_n) {
  if (s.candidate_len == 0) return 0.0;
  // Effective order: orders the candidate is too short to have are left out,
  // so an exact match scores 1 at any length.
  double log_sum = 0;
  int orders = 0;
  for (int n = 0; n < max_n; ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (s.totals[i] == 0) continue;
    double p = static_cast<double>(s.matches[i]) / static_cast<double>(s.totals[i]);
    if (p == 0.0) p = kZeroPrecision;
    log_sum += std::log(p);
    ++orders;
  }
  const double c = static_cast<double>(s.candidate_len), r = static_cast<double>(s.reference_len);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / orders);
}

void check_order(int max_n) {
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must be in 1..4");
}

}  // namespace

double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
            int max_n) {
  check_order(max_n);
  return combine(ngram_stats(candidate, reference, max_n), max_n);
}

double corpus_bleu(const std::vector<std::vector<std::string>>& candidates,
                   const std::vector<std::vector<std::string>>& references, int max_n) {
  check_order(max_n);
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: candidate and reference counts differ");
  }
  NgramStats total;
  total.matches.assign(static_cast<std::size_t>(max_n), 0);
  total.totals.assign(static_cast<std::size_t>(max_n), 0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto s = ngram_stats(candidates[i], references[i], max_n);
    for (std::size_t n = 0; n < s.matches.size(); ++n) {
      total.matches[n] += s.matches[n];
      total.totals[n] += s.totals[n];
    }
    total.candidate_len += s.candidate_len;
    total.reference_len += s.reference_len;
  }
  return combine(total, max_n);
}

double aggregate_bleu(const std::vector<std::vector<std::string>>& candidates,
                      const std::vector<std::vector<std::string>>& references, int max_n,
                      BleuAggregation how) {
  if (candidates.empty()) return 0.0;
  if (how == BleuAggregation::Corpus) return corpus_bleu(candidates, references, max_n);
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("aggregate_bleu: candidate and reference counts differ");
  }
  double sum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += bleu(candidates[i], references[i], max_n);
  return sum / static_cast<double>(candidates.size());
}

double f1_from_scores(std::size_t n_predicted, std::size_t n_gold, const std::vector<double>& scores) {
  double sum = 0;
  for (double b : scores) sum += b;
  const double precision = n_predicted ? sum / static_cast<double>(n_predicted) : 0.0;
  const double recall = n_gold ? sum / static_cast<double>(n_gold) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double f1_bleu(const std::vector<ExampleOutcome>& outcomes, int n) {
  std::size_t predicted = 0, gold = 0;
  std::vector<double> scores;
  for (const auto& o : outcomes) {
    const bool p = o.predicted == Decision::Inquire, g = o.gold == Decision::Inquire;
    predicted += p;
    gold += g;
    if (p && g && o.question && o.reference) scores.push_back(bleu(*o.question, *o.reference, n));
  }
  return f1_from_scores(predicted, gold, scores);
}

std::string_view to_string(SpanMode m) { return m == SpanMode::Gold ? "gold-span" : "predicted-span"; }

SpanMode parse_span_mode(std::string_view s) {
  if (s == "predicted" || s == "predicted-span") return SpanMode::Predicted;
  if (s == "gold" || s == "gold-span") return SpanMode::Gold;
  throw std::invalid_argument("unknown span mode \"" + std::string(s) + "\"");
}

SubsetReport score_subset(const std::vector<ExampleOutcome>& outcomes, BleuAggregation how) {
  SubsetReport r;
  r.n = outcomes.size();
  if (outcomes.empty()) return r;

  std::vector<Decision> pred, gold;
  std::vector<std::vector<std::string>> cands, refs;
  std::vector<RankedList> ranked;
  std::vector<std::string> gold_docs;
  for (const auto& o : outcomes) {
    pred.push_back(o.predicted);
    gold.push_back(o.gold);
    r.gold_inquire += o.gold == Decision::Inquire;
    r.predicted_inquire += o.predicted == Decision::Inquire;
    if (o.gold == Decision::Inquire && o.reference) {
      cands.push_back(o.question.value_or(std::vector<std::string>{}));
      refs.push_back(*o.reference);
    }
    RankedList list;
    for (const auto& d : o.retrieved) list.push_back({d, 0.0});
    ranked.push_back(std::move(list));
    gold_docs.push_back(o.gold_doc_id);
  }
  const Accuracy acc = micro_macro_accuracy(pred, gold);
  r.micro = acc.micro;
  r.macro = acc.macro;
  if (!cands.empty()) {
    r.bleu1 = 100.0 * aggregate_bleu(cands, refs, 1, how);
    r.bleu4 = 100.0 * aggregate_bleu(cands, refs, 4, how);
  }
  if (r.gold_inquire + r.predicted_inquire > 0) {
    r.f1_bleu1 = f1_bleu(outcomes, 1);
    r.f1_bleu4 = f1_bleu(outcomes, 4);
  }
  for (std::size_t k : recall_depths()) r.recall[k] = 100.0 * recall_at_k(ranked, gold_docs, k);
  return r;
}

EvalReport score(const std::vector<ExampleOutcome>& outcomes, BleuAggregation how) {
  EvalReport r;
  r.aggregation = how;
  std::vector<ExampleOutcome> seen, unseen;
  for (const auto& o : outcomes) (o.seen ? seen : unseen).push_back(o);
  r.all = score_subset(outcomes, how);
  r.seen = score_subset(seen, how);
  r.unseen = score_subset(unseen, how);
  return r;
}

namespace {

nlohmann::json optional_value(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const SubsetReport& r) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [k, v] : r.recall) recall["recall@" + std::to_string(k)] = v;
  return {{"n", r.n},
          {"gold_inquire", r.gold_inquire},
          {"predicted_inquire", r.predicted_inquire},
          {"micro_acc", optional_value(r.micro)},
          {"macro_acc", optional_value(r.macro)},
          {"bleu1", optional_value(r.bleu1)},
          {"bleu4", optional_value(r.bleu4)},
          {"f1_bleu1", optional_value(r.f1_bleu1)},
          {"f1_bleu4", optional_value(r.f1_bleu4)},
          {"retrieval", recall}};
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"split", r.split},
          {"mode", std::string(to_string(r.mode))},
          {"bleu_aggregation", std::string(to_string(r.aggregation))},
          {"all", to_json(r.all)},
          {"seen", to_json(r.seen)},
          {"unseen", to_json(r.unseen)}};
}

std::string format_table(const EvalReport& r) {
  std::vector<std::string> header{"subset", "n", "Micro", "Macro", "F1_BLEU1", "F1_BLEU4", "BLEU1", "BLEU4"};
  for (std::size_t k : recall_depths()) header.push_back("R@" + std::to_string(k));
  std::vector<std::vector<std::string>> rows{header};
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << *v;
    return s.str();
  };
  for (const auto& [name, sub] : {std::pair<const char*, const SubsetReport*>{"all", &r.all},
                                  {"seen", &r.seen},
                                  {"unseen", &r.unseen}}) {
    std::vector<std::string> row{name, std::to_string(sub->n), cell(sub->micro), cell(sub->macro),
                                 cell(sub->f1_bleu1), cell(sub->f1_bleu4), cell(sub->bleu1),
                                 cell(sub->bleu4)};
    for (std::size_t k : recall_depths()) {
      row.push_back(sub->n ? cell(sub->recall.at(k)) : "-");
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  out << r.split << " (" << to_string(r.mode) << ", " << to_string(r.aggregation) << " BLEU)\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      else out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
    }
    out << '\n';
  }
  return out.str();
}

Evaluation evaluate(const Pipeline& pipeline, const std::vector<DialogueExample>& examples,
                    const std::set<std::string>& seen_doc_ids, SpanMode mode,
                    const std::string& split_name) {
  const TrainConfig& cfg = pipeline.model().config;
  const std::size_t depth = recall_depths().back();
  Evaluation ev;
  for (const auto& e : examples) {
    const auto prepared = pipeline.prepare(e);
    const bool gold_inquire = e.decision == Decision::Inquire;
    PredictOptions opts;
    opts.force_question = gold_inquire;
    opts.gold_span = mode == SpanMode::Gold;
    Prediction p = pipeline.predict(prepared, opts);

    ExampleOutcome o;
    o.utterance_id = e.utterance_id;
    o.seen = seen_doc_ids.contains(e.gold_doc_id);
    o.gold = e.decision;
    o.predicted = p.decision;
    o.gold_doc_id = e.gold_doc_id;
    if (p.question) o.question = tokenize(*p.question);
    if (e.gold_follow_up) o.reference = tokenize(*e.gold_follow_up);
    for (const auto& d : pipeline.retriever().retrieve(build_query(e), depth, cfg.retrieval)) {
      o.retrieved.push_back(d.doc_id);
    }
    // The stored prediction keeps the inference-time gating.
    if (p.decision != Decision::Inquire) {
      p.question.reset();
      p.span.reset();
      p.beam.clear();
    }
    ev.outcomes.push_back(std::move(o));
    ev.predictions.push_back(std::move(p));
  }
  ev.report = score(ev.outcomes, cfg.bleu_aggregation);
  ev.report.split = split_name;
  ev.report.mode = mode;
  return ev;
}

}  // namespace oscar
