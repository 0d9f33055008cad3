#pragma once

#include "oscar/corpus.hpp"
#include "oscar/discourse.hpp"
#include "oscar/params.hpp"
#include "oscar/tensor.hpp"

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

enum class EntailmentState : int { Entailment = 0, Contradiction = 1, Unmentioned = 2 };
inline constexpr int kNumEntailmentStates = 3;
/// Marks a condition without derivable supervision (excluded from the loss).
inline constexpr int kUnlabeled = -1;

std::string_view to_string(EntailmentState s);

void init_decision(ParameterStore& p, std::size_t hidden, Rng& rng);

/// f_i = W_f r_i + b_f for every row of `conditions` (N x d -> N x 3).
Tensor entailment_head(const ParameterStore& p, const Tensor& conditions);

/// Mean NLL over conditions whose label is not kUnlabeled; 0 when none is.
Tensor entailment_loss(const Tensor& scores, const std::vector<int>& labels);

struct DecisionScores {
  Tensor attention_logits;  // N x 1, alpha_i
  Tensor attention;         // N x 1, softmax over conditions
  Tensor logits;            // 1 x 4, z
};

/// alpha_i = w_a . [f_i; r_i] + b_a, softmax over i;
/// z = W_z sum_i alpha~_i [f_i; r_i] + b_z.
DecisionScores decision_head(const ParameterStore& p, const Tensor& entailment,
                             const Tensor& conditions);

/// -log softmax(z)_gold.
Tensor decision_loss(const Tensor& logits, Decision gold);

/// L_decision + lambda * L_entail.
Tensor decision_total_loss(const Tensor& l_decision, const Tensor& l_entail, double lambda);

struct EntailmentLabelOptions {
  double threshold = 0.6;
  /// Also read facts stated in the scenario ("I do not ..." contradicts).
  bool use_scenario = true;
};

/// Jaccard overlap of content tokens (function words removed).
double token_overlap(std::string_view a, std::string_view b);

/// One label per EDU of `rule`. A condition matching a history question is
/// Entailment (Yes) or Contradiction (No); one matching a scenario sentence is
/// Entailment unless the sentence is negated. Otherwise Unmentioned.
std::vector<int> derive_entailment_labels(const DialogueExample& example, const ParsedRule& rule,
                                          const EntailmentLabelOptions& options = {});

}  // namespace oscar
