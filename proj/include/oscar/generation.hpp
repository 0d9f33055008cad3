#pragma once

#include "oscar/encoder.hpp"
#include "oscar/params.hpp"
#include "oscar/tensor.hpp"
#include "oscar/text.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

// ---- spans -------------------------------------------------------------------------

struct SpanPrediction {
  std::size_t doc = 0;    // rank of the document among the kept ones
  std::size_t start = 0;  // token index within the document, inclusive
  std::size_t end = 0;    // inclusive
  double score = 0.0;
  bool operator==(const SpanPrediction&) const = default;
};

/// argmax over (k, i, j) of start[k][i] + end[k][j] with i <= j and
/// j - i < max_span. Ties go to the lexicographically smallest (k, i, j).
SpanPrediction predict_span(const std::vector<std::vector<double>>& start_scores,
                            const std::vector<std::vector<double>>& end_scores,
                            std::size_t max_span = 30);

/// Levenshtein distance over any pair of sequences (unit costs).
template <typename Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct GoldSpan {
  std::size_t doc = 0, start = 0, end = 0;  // inclusive token indices
  std::size_t distance = 0;
};

/// The contiguous span (over every document) with the smallest token edit
/// distance to the follow-up question; ties go to the shortest span, then the
/// earlier document, then the leftmost start. Throws on empty input.
GoldSpan label_gold_span(const std::vector<std::vector<std::string>>& docs,
                         std::string_view follow_up);

// ---- model ---------------------------------------------------------------------------

/// Registers the span scorers, generation-side encoder, fusion and decoder.
/// Expects "tok.emb" to exist already (shared with the decision encoder).
void init_generation(ParameterStore& p, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng);

/// Start and end scores w . t for every rule token, grouped by document.
struct SpanScores {
  Tensor start;  // 1 x n_rule_tokens, documents concatenated in rank order
  Tensor end;
  std::vector<std::size_t> offsets;  // first column of each document
};
SpanScores span_scores(const ParameterStore& p, const Tensor& tokens, const SerializedInput& input);
SpanPrediction predict_span(const SpanScores& scores, std::size_t max_span = 30);
/// CE of the gold start plus CE of the gold end over all rule tokens.
Tensor span_loss(const SpanScores& scores, std::size_t doc, std::size_t start, std::size_t end);

struct GenerationInput {
  std::vector<std::size_t> token_ids;  // [CLS] span [SEP] rule documents [SEP]
  std::vector<std::string> span_words;
};

/// Rule tokens are taken from every kept document in rank order and cut from
/// the end when the sequence would exceed `max_len`; the span is never cut.
GenerationInput build_generation_input(const SerializedInput& input, const SpanPrediction& span,
                                       const Vocabulary& vocab, std::size_t max_len);

/// H_e: shared token embedding, own positions and layers.
Tensor encode_generation_input(const ParameterStore& p, const ModelConfig& cfg,
                               const std::vector<std::size_t>& token_ids);

struct FusionTrace {
  Tensor attended;  // H^ (GatedAttention only)
  Tensor gate;      // lambda (GatedAttention only)
};

/// DirectConcatenation: [H_c; H_e]. GatedAttention: H^ = Attn(H_e, H_c, H_c),
/// lambda = sigmoid(H^ W_l + H_e U_l), H = H_e + lambda * H^. None: H_e.
Tensor fuse_states(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h_c,
                   const Tensor& h_e, FusionTrace* trace = nullptr);

/// Logits (one row per input position) for the next token after each prefix
/// of `inputs`, which starts with [BOS]: W_d tanh(W_w s_i) where s_i is the
/// decoder state (causal self-attention, cross-attention over H, FFN).
Tensor decoder_logits(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h,
                      const std::vector<std::size_t>& inputs);

/// Teacher-forced -sum_i log P(y_i | y_<i). `question` excludes [BOS]/[EOS];
/// it is capped at cfg.max_question_len tokens and [EOS] is appended.
Tensor generation_loss(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h,
                       const std::vector<std::size_t>& question);

// ---- decoding --------------------------------------------------------------------------

/// Log-probabilities of the next token given the tokens generated so far.
using StepFunction = std::function<std::vector<double>(const std::vector<std::size_t>&)>;

struct Hypothesis {
  std::vector<std::size_t> tokens;  // generated tokens, [EOS] excluded
  double log_prob = 0.0;
  std::size_t length = 0;           // generated steps, [EOS] included
  bool finished = false;            // ended with [EOS] (otherwise hit max_len)
  double score() const { return length ? log_prob / static_cast<double>(length) : 0.0; }
  bool operator==(const Hypothesis&) const = default;
};

/// Highest-probability token at every step (lowest id on ties).
Hypothesis greedy_decode(const StepFunction& step, std::size_t eos, std::size_t max_len);

/// Beam search ranked by length-normalized score (log-prob / length). The
/// greedy hypothesis is always a candidate, so the top score is never below
/// greedy. Returns at most beam_size hypotheses, best first.
std::vector<Hypothesis> beam_search(const StepFunction& step, std::size_t vocab_size,
                                    std::size_t eos, std::size_t beam_size, std::size_t max_len);

/// Step function over the trained decoder for a fused state H.
StepFunction decoder_step(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h);

}  // namespace oscar
