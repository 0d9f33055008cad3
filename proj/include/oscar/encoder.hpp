#pragma once

#include "oscar/corpus.hpp"
#include "oscar/discourse.hpp"
#include "oscar/params.hpp"
#include "oscar/tensor.hpp"
#include "oscar/text.hpp"

#include <array>
#include <string>
#include <vector>

namespace oscar {

enum class FusionStrategy { DirectConcatenation, GatedAttention, None };
std::string_view to_string(FusionStrategy f);
FusionStrategy parse_fusion(std::string_view s);

/// Sizes of every learned component. Desk-scale defaults.
struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;        // contextual transformer layers
  std::size_t ffn = 128;
  std::size_t max_len = 256;     // serialized input budget
  std::size_t rgcn_layers = 2;   // ungated layers before the gated one
  std::size_t fusion_heads = 4;
  std::size_t gen_layers = 1;    // generation-side encoder
  std::size_t decoder_layers = 1;
  std::size_t max_question_len = 24;
  std::size_t max_span = 30;
  FusionStrategy fusion = FusionStrategy::GatedAttention;
  /// Decoder logits from a state that ignores y_<i (the literal reading).
  bool static_logits = false;
};

// ---- serialization ------------------------------------------------------------------

enum class SegmentKind { Rule, Question, Scenario, History, Sep };

struct SegmentTag {
  SegmentKind kind = SegmentKind::Rule;
  int index = 0;  // doc rank for Rule, turn for History
};

/// A rule document's tokens as they sit in the serialized sequence.
struct RuleTokens {
  std::vector<std::size_t> positions;  // sequence positions (markers excluded)
  std::vector<std::string> words;
  std::vector<int> edu_of;             // EDU index (within the doc) of each token
};

struct SerializedInput {
  std::vector<std::size_t> token_ids;
  std::vector<SegmentTag> segments;
  std::vector<std::size_t> rule_markers;  // one per kept EDU, doc-major
  std::size_t question_marker = 0;
  std::size_t scenario_marker = 0;
  std::vector<std::size_t> history_markers;
  std::vector<RuleTokens> rules;          // per kept document, in rank order
  /// The documents as kept after truncation (relations restricted to kept EDUs).
  std::vector<ParsedRule> kept;
  std::size_t dropped_edus = 0;
  bool truncated() const { return dropped_edus > 0; }
};

/// [RULE] EDU ... (docs in rank order) [CLS] question [CLS] scenario
/// ([CLS] turn)* [SEP]. A history turn is its question followed by the answer
/// word. When over `max_len`, EDUs are dropped from the lowest-ranked document
/// backwards; question, scenario and history are never cut (std::length_error
/// if they alone do not fit).
SerializedInput serialize(const DialogueExample& example, const std::vector<ParsedRule>& docs,
                          const Vocabulary& vocab, std::size_t max_len);

// ---- building blocks ----------------------------------------------------------------

/// Post-LN transformer layer parameters under `prefix`.
void init_transformer_layer(ParameterStore& p, const std::string& prefix, std::size_t width,
                            std::size_t ffn, Rng& rng, bool cross_attention = false);
void init_attention(ParameterStore& p, const std::string& prefix, std::size_t width, Rng& rng);

/// (q_in Wq, kv Wk, kv Wv) through multi-head attention, then Wo.
Tensor attention(const ParameterStore& p, const std::string& prefix, const Tensor& q_in,
                 const Tensor& kv, std::size_t heads, const AttentionMask& mask = {});

/// x = LN(x + SelfAttn(x)); [x = LN(x + CrossAttn(x, memory))]; x = LN(x + FFN(x)).
Tensor transformer_layer(const ParameterStore& p, const std::string& prefix, const Tensor& x,
                         std::size_t heads, const AttentionMask& self_mask,
                         const Tensor* memory = nullptr);

// ---- encoder --------------------------------------------------------------------------

/// Registers every encoder parameter ("tok.emb" is shared with generation).
void init_encoder(ParameterStore& p, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng);

/// Token embedding + learned position, then cfg.layers transformer layers.
/// PAD tokens are excluded as attention keys.
Tensor contextual_encode(const ParameterStore& p, const ModelConfig& cfg,
                         const std::vector<std::size_t>& token_ids);

/// Dense per-edge-type operators: A_r[p][q] = 1/c_{p,r} for each edge q -> p
/// of type r, where c_{p,r} counts the r-edges into p.
std::array<Tensor, kNumEdgeTypes> normalized_adjacency(const LeviGraph& g);

/// EDU vertices take their [RULE] vector, the scenario vertex the scenario
/// [CLS] vector, relation vertices a lookup into "graph.rel_emb".
Tensor init_vertex_states(const ParameterStore& p, const Tensor& tokens, const LeviGraph& g,
                          const SerializedInput& input);

/// h' = ReLU(sum_r A_r h W_r), weights "<prefix>.w<r>".
Tensor rgcn_layer(const ParameterStore& p, const std::string& prefix, const Tensor& h,
                  const std::array<Tensor, kNumEdgeTypes>& adj);

/// Gate g = sigmoid(h W_g) (one column per edge type) scales each source
/// vertex's message: h' = ReLU(sum_r A_r diag(g_r) h W_r).
Tensor gated_rgcn_layer(const ParameterStore& p, const std::string& prefix, const Tensor& h,
                        const std::array<Tensor, kNumEdgeTypes>& adj);

/// cfg.rgcn_layers ungated layers followed by one gated layer.
Tensor graph_encode(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h0,
                    const LeviGraph& g);

/// H_c = X + SelfAttn(X) over X = [r_1..r_m; u_q; u_s; h_1..h_n].
Tensor fuse(const ParameterStore& p, const ModelConfig& cfg, const Tensor& graph_states,
            const Tensor& tokens, const SerializedInput& input);

struct EncoderOutput {
  Tensor tokens;       // contextual token vectors
  LeviGraph graph;
  Tensor fused;        // H_c
  std::vector<std::size_t> edu_rows;  // rows of H_c holding EDU (condition) vertices
};

EncoderOutput encode(const ParameterStore& p, const ModelConfig& cfg, const SerializedInput& input);

}  // namespace oscar
