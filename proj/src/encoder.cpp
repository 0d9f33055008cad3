#include "oscar/encoder.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace oscar {

std::string_view to_string(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::DirectConcatenation: return "direct";
    case FusionStrategy::GatedAttention: return "gated";
    case FusionStrategy::None: return "none";
  }
  return "?";
}

FusionStrategy parse_fusion(std::string_view s) {
  if (s == "direct" || s == "DirectConcatenation") return FusionStrategy::DirectConcatenation;
  if (s == "gated" || s == "GatedAttention") return FusionStrategy::GatedAttention;
  if (s == "none" || s == "NoFusion") return FusionStrategy::None;
  throw std::invalid_argument("unknown fusion strategy \"" + std::string(s) + "\"");
}

// ---- serialization ------------------------------------------------------------------

namespace {

struct Piece {
  std::vector<std::size_t> ids;
  std::vector<std::string> words;
};

Piece piece(const Vocabulary& vocab, std::string_view text) {
  Piece p;
  p.words = tokenize(text);
  p.ids = vocab.encode(p.words);
  return p;
}

}  // namespace

SerializedInput serialize(const DialogueExample& example, const std::vector<ParsedRule>& docs,
                          const Vocabulary& vocab, std::size_t max_len) {
  std::size_t total_edus = 0;
  for (const auto& d : docs) total_edus += d.edus.size();
  if (total_edus == 0) throw std::invalid_argument("serialize: no EDUs to encode");

  const Piece question = piece(vocab, example.question);
  const Piece scenario = piece(vocab, example.scenario);
  std::vector<Piece> turns;
  for (const auto& h : example.history) {
    Piece t = piece(vocab, h.follow_up_question);
    const std::string answer(to_string(h.follow_up_answer));
    for (const auto& w : tokenize(answer)) {
      t.words.push_back(w);
      t.ids.push_back(vocab.id(w));
    }
    turns.push_back(std::move(t));
  }

  std::size_t fixed = 1 + question.ids.size() + 1 + scenario.ids.size() + 1;  // + final [SEP]
  for (const auto& t : turns) fixed += 1 + t.ids.size();
  if (fixed + 2 > max_len) {
    throw std::length_error("serialize: question, scenario and history need " +
                            std::to_string(fixed) + " of " + std::to_string(max_len) + " tokens");
  }

  std::vector<std::vector<Piece>> edu_pieces(docs.size());
  std::size_t rule_len = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (const auto& e : docs[d].edus) {
      edu_pieces[d].push_back(piece(vocab, e.text));
      rule_len += 1 + edu_pieces[d].back().ids.size();
    }
  }

  // Drop trailing EDUs of the lowest-ranked documents until everything fits.
  std::vector<std::size_t> keep(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) keep[d] = docs[d].edus.size();
  SerializedInput out;
  std::size_t kept_edus = total_edus;
  for (std::size_t d = docs.size(); d-- > 0 && fixed + rule_len > max_len;) {
    while (keep[d] > 0 && fixed + rule_len > max_len && kept_edus > 1) {
      rule_len -= 1 + edu_pieces[d][keep[d] - 1].ids.size();
      --keep[d];
      --kept_edus;
      ++out.dropped_edus;
    }
  }
  // A lone EDU that is still too long keeps only its leading tokens.
  if (fixed + rule_len > max_len) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      if (keep[d] == 0) continue;
      auto& p = edu_pieces[d][0];
      const std::size_t room = max_len - fixed - 1;
      p.ids.resize(room);
      p.words.resize(room);
    }
  }

  auto push = [&](std::size_t id, SegmentTag tag) {
    out.token_ids.push_back(id);
    out.segments.push_back(tag);
  };
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (keep[d] == 0) continue;
    const int rank = static_cast<int>(out.kept.size());
    ParsedRule kept;
    kept.doc_id = docs[d].doc_id;
    kept.edus.assign(docs[d].edus.begin(), docs[d].edus.begin() + static_cast<long>(keep[d]));
    std::set<int> ids;
    for (const auto& e : kept.edus) ids.insert(e.edu_id);
    for (const auto& r : docs[d].relations) {
      if (ids.contains(r.source_edu) && ids.contains(r.target_edu)) kept.relations.push_back(r);
    }
    RuleTokens toks;
    for (std::size_t e = 0; e < keep[d]; ++e) {
      out.rule_markers.push_back(out.token_ids.size());
      push(Vocabulary::kRule, {SegmentKind::Rule, rank});
      const auto& p = edu_pieces[d][e];
      for (std::size_t t = 0; t < p.ids.size(); ++t) {
        toks.positions.push_back(out.token_ids.size());
        toks.words.push_back(p.words[t]);
        toks.edu_of.push_back(static_cast<int>(e));
        push(p.ids[t], {SegmentKind::Rule, rank});
      }
    }
    out.rules.push_back(std::move(toks));
    out.kept.push_back(std::move(kept));
  }

  out.question_marker = out.token_ids.size();
  push(Vocabulary::kCls, {SegmentKind::Question, 0});
  for (auto id : question.ids) push(id, {SegmentKind::Question, 0});
  out.scenario_marker = out.token_ids.size();
  push(Vocabulary::kCls, {SegmentKind::Scenario, 0});
  for (auto id : scenario.ids) push(id, {SegmentKind::Scenario, 0});
  for (std::size_t j = 0; j < turns.size(); ++j) {
    out.history_markers.push_back(out.token_ids.size());
    push(Vocabulary::kCls, {SegmentKind::History, static_cast<int>(j)});
    for (auto id : turns[j].ids) push(id, {SegmentKind::History, static_cast<int>(j)});
  }
  push(Vocabulary::kSep, {SegmentKind::Sep, 0});
  return out;
}

// ---- building blocks ----------------------------------------------------------------

void init_attention(ParameterStore& p, const std::string& prefix, std::size_t width, Rng& rng) {
  for (const char* m : {".wq", ".wk", ".wv", ".wo"}) p.weight(prefix + m, width, width, rng);
}

namespace {

void init_norm(ParameterStore& p, const std::string& prefix, std::size_t width) {
  p.ones(prefix + ".gain", 1, width);
  p.zeros(prefix + ".bias", 1, width);
}

Tensor norm(const ParameterStore& p, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, p.get(prefix + ".gain"), p.get(prefix + ".bias"));
}

}  // namespace

void init_transformer_layer(ParameterStore& p, const std::string& prefix, std::size_t width,
                            std::size_t ffn, Rng& rng, bool cross_attention) {
  init_attention(p, prefix + ".self", width, rng);
  init_norm(p, prefix + ".ln1", width);
  if (cross_attention) {
    init_attention(p, prefix + ".cross", width, rng);
    init_norm(p, prefix + ".ln_cross", width);
  }
  p.weight(prefix + ".ff.w1", width, ffn, rng);
  p.zeros(prefix + ".ff.b1", 1, ffn);
  p.weight(prefix + ".ff.w2", ffn, width, rng);
  p.zeros(prefix + ".ff.b2", 1, width);
  init_norm(p, prefix + ".ln2", width);
}

Tensor attention(const ParameterStore& p, const std::string& prefix, const Tensor& q_in,
                 const Tensor& kv, std::size_t heads, const AttentionMask& mask) {
  const Tensor q = matmul(q_in, p.get(prefix + ".wq"));
  const Tensor k = matmul(kv, p.get(prefix + ".wk"));
  const Tensor v = matmul(kv, p.get(prefix + ".wv"));
  return matmul(multi_head_attention(q, k, v, heads, mask), p.get(prefix + ".wo"));
}

Tensor transformer_layer(const ParameterStore& p, const std::string& prefix, const Tensor& x,
                         std::size_t heads, const AttentionMask& self_mask, const Tensor* memory) {
  Tensor h = norm(p, prefix + ".ln1", add(x, attention(p, prefix + ".self", x, x, heads, self_mask)));
  if (memory) {
    h = norm(p, prefix + ".ln_cross", add(h, attention(p, prefix + ".cross", h, *memory, heads)));
  }
  Tensor ff = relu(add(matmul(h, p.get(prefix + ".ff.w1")), p.get(prefix + ".ff.b1")));
  ff = add(matmul(ff, p.get(prefix + ".ff.w2")), p.get(prefix + ".ff.b2"));
  return norm(p, prefix + ".ln2", add(h, ff));
}

// ---- encoder --------------------------------------------------------------------------

void init_encoder(ParameterStore& p, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng) {
  p.weight("tok.emb", vocab_size, cfg.hidden, rng);
  p.weight("enc.pos", cfg.max_len, cfg.hidden, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    init_transformer_layer(p, "enc.layer" + std::to_string(l), cfg.hidden, cfg.ffn, rng);
  }
  p.weight("graph.rel_emb", kNumRelations, cfg.hidden, rng);
  for (std::size_t l = 0; l <= cfg.rgcn_layers; ++l) {
    const std::string prefix = "graph.rgcn" + std::to_string(l);
    for (std::size_t r = 0; r < kNumEdgeTypes; ++r) {
      p.weight(prefix + ".w" + std::to_string(r), cfg.hidden, cfg.hidden, rng);
    }
  }
  p.weight("graph.rgcn" + std::to_string(cfg.rgcn_layers) + ".wg", cfg.hidden, kNumEdgeTypes, rng);
  init_attention(p, "fuse.attn", cfg.hidden, rng);
}

Tensor contextual_encode(const ParameterStore& p, const ModelConfig& cfg,
                         const std::vector<std::size_t>& token_ids) {
  if (token_ids.empty()) throw std::invalid_argument("contextual_encode: empty input");
  if (token_ids.size() > cfg.max_len) {
    throw std::length_error("contextual_encode: " + std::to_string(token_ids.size()) +
                            " tokens exceed max_len " + std::to_string(cfg.max_len));
  }
  std::vector<std::size_t> positions(token_ids.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Tensor x = add(embedding_lookup(p.get("tok.emb"), token_ids),
                 gather_rows(p.get("enc.pos"), positions));
  AttentionMask mask;
  if (std::find(token_ids.begin(), token_ids.end(), Vocabulary::kPad) != token_ids.end()) {
    for (auto id : token_ids) mask.key_valid.push_back(id != Vocabulary::kPad);
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    x = transformer_layer(p, "enc.layer" + std::to_string(l), x, cfg.heads, mask);
  }
  return x;
}

std::array<Tensor, kNumEdgeTypes> normalized_adjacency(const LeviGraph& g) {
  const std::size_t n = g.vertices.size();
  std::array<std::vector<double>, kNumEdgeTypes> a;
  std::array<std::vector<double>, kNumEdgeTypes> count;
  for (std::size_t r = 0; r < kNumEdgeTypes; ++r) {
    a[r].assign(n * n, 0.0);
    count[r].assign(n, 0.0);
  }
  for (const auto& e : g.edges) {
    const auto r = static_cast<std::size_t>(e.type);
    a[r][e.to * n + e.from] += 1.0;
    count[r][e.to] += 1.0;
  }
  std::array<Tensor, kNumEdgeTypes> out;
  for (std::size_t r = 0; r < kNumEdgeTypes; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      if (count[r][i] == 0) continue;
      for (std::size_t j = 0; j < n; ++j) a[r][i * n + j] /= count[r][i];
    }
    out[r] = Tensor::from(n, n, std::move(a[r]));
  }
  return out;
}

Tensor init_vertex_states(const ParameterStore& p, const Tensor& tokens, const LeviGraph& g,
                          const SerializedInput& input) {
  const auto edus = g.edu_vertices();
  if (edus.size() != input.rule_markers.size()) {
    throw std::invalid_argument("init_vertex_states: " + std::to_string(edus.size()) +
                                " EDU vertices but " + std::to_string(input.rule_markers.size()) +
                                " [RULE] markers");
  }
  const std::size_t t = tokens.rows();
  const Tensor both[2] = {tokens, p.get("graph.rel_emb")};
  const Tensor table = concat_rows(both);
  std::vector<std::size_t> rows;
  std::size_t next_edu = 0;
  for (const auto& v : g.vertices) {
    switch (v.kind) {
      case VertexKind::Edu: rows.push_back(input.rule_markers.at(next_edu++)); break;
      case VertexKind::Relation: rows.push_back(t + static_cast<std::size_t>(v.relation)); break;
      case VertexKind::Scenario: rows.push_back(input.scenario_marker); break;
    }
  }
  return gather_rows(table, rows);
}

namespace {

template <typename Message>
Tensor aggregate(const std::array<Tensor, kNumEdgeTypes>& adj, Message message) {
  Tensor total;
  for (std::size_t r = 0; r < kNumEdgeTypes; ++r) {
    const Tensor m = matmul(adj[r], message(r));
    total = total.defined() ? add(total, m) : m;
  }
  return relu(total);
}

}  // namespace

Tensor rgcn_layer(const ParameterStore& p, const std::string& prefix, const Tensor& h,
                  const std::array<Tensor, kNumEdgeTypes>& adj) {
  return aggregate(adj, [&](std::size_t r) {
    return matmul(h, p.get(prefix + ".w" + std::to_string(r)));
  });
}

Tensor gated_rgcn_layer(const ParameterStore& p, const std::string& prefix, const Tensor& h,
                        const std::array<Tensor, kNumEdgeTypes>& adj) {
  const Tensor gates = sigmoid(matmul(h, p.get(prefix + ".wg")));
  return aggregate(adj, [&](std::size_t r) {
    return row_scale(matmul(h, p.get(prefix + ".w" + std::to_string(r))), slice_cols(gates, r, 1));
  });
}

Tensor graph_encode(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h0,
                    const LeviGraph& g) {
  const auto adj = normalized_adjacency(g);
  Tensor h = h0;
  for (std::size_t l = 0; l < cfg.rgcn_layers; ++l) {
    h = rgcn_layer(p, "graph.rgcn" + std::to_string(l), h, adj);
  }
  return gated_rgcn_layer(p, "graph.rgcn" + std::to_string(cfg.rgcn_layers), h, adj);
}

Tensor fuse(const ParameterStore& p, const ModelConfig& cfg, const Tensor& graph_states,
            const Tensor& tokens, const SerializedInput& input) {
  std::vector<std::size_t> markers{input.question_marker, input.scenario_marker};
  markers.insert(markers.end(), input.history_markers.begin(), input.history_markers.end());
  const Tensor parts[2] = {graph_states, gather_rows(tokens, markers)};
  const Tensor x = concat_rows(parts);
  return add(x, attention(p, "fuse.attn", x, x, cfg.fusion_heads));
}

EncoderOutput encode(const ParameterStore& p, const ModelConfig& cfg, const SerializedInput& input) {
  EncoderOutput out;
  out.tokens = contextual_encode(p, cfg, input.token_ids);
  out.graph = build_levi_graph(input.kept);
  const Tensor h0 = init_vertex_states(p, out.tokens, out.graph, input);
  out.fused = fuse(p, cfg, graph_encode(p, cfg, h0, out.graph), out.tokens, input);
  out.edu_rows = out.graph.edu_vertices();
  return out;
}

}  // namespace oscar
