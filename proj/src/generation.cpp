#include "oscar/generation.hpp"

#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace oscar {

// ---- spans -------------------------------------------------------------------------

SpanPrediction predict_span(const std::vector<std::vector<double>>& start_scores,
                            const std::vector<std::vector<double>>& end_scores,
                            std::size_t max_span) {
  if (start_scores.size() != end_scores.size()) {
    throw std::invalid_argument("predict_span: start/end document counts differ");
  }
  if (max_span == 0) throw std::invalid_argument("predict_span: max_span must be positive");
  SpanPrediction best;
  bool found = false;
  for (std::size_t k = 0; k < start_scores.size(); ++k) {
    const auto& s = start_scores[k];
    const auto& e = end_scores[k];
    if (s.size() != e.size()) throw std::invalid_argument("predict_span: start/end lengths differ");
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t j = i; j < s.size() && j - i < max_span; ++j) {
        const double score = s[i] + e[j];
        if (!found || score > best.score) {
          best = {k, i, j, score};
          found = true;
        }
      }
    }
  }
  if (!found) throw std::invalid_argument("predict_span: no rule tokens");
  return best;
}

GoldSpan label_gold_span(const std::vector<std::vector<std::string>>& docs,
                         std::string_view follow_up) {
  const auto q = tokenize(follow_up);
  const std::size_t m = q.size();
  GoldSpan best;
  bool found = false;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t k = 0; k < docs.size(); ++k) {
    const auto& d = docs[k];
    for (std::size_t i = 0; i < d.size(); ++i) {
      // prev holds the distance of d[i..j-1] against every prefix of q.
      std::iota(prev.begin(), prev.end(), std::size_t{0});
      for (std::size_t j = i; j < d.size(); ++j) {
        cur[0] = j - i + 1;
        for (std::size_t c = 1; c <= m; ++c) {
          cur[c] = std::min({prev[c - 1] + (d[j] == q[c - 1] ? 0 : 1), prev[c] + 1, cur[c - 1] + 1});
        }
        std::swap(prev, cur);
        const std::size_t dist = prev[m];
        const auto key = std::make_tuple(dist, j - i, k, i);
        if (!found || key < std::make_tuple(best.distance, best.end - best.start, best.doc, best.start)) {
          best = {k, i, j, dist};
          found = true;
        }
      }
    }
  }
  if (!found) throw std::invalid_argument("label_gold_span: empty rule text");
  return best;
}

// ---- model ---------------------------------------------------------------------------

void init_generation(ParameterStore& p, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng) {
  if (!p.contains("tok.emb")) throw std::logic_error("init_generation: token embedding missing");
  const std::size_t d = cfg.hidden;
  p.weight("span.ws", d, 1, rng);
  p.weight("span.we", d, 1, rng);
  p.weight("gen.pos", cfg.max_len, d, rng);
  for (std::size_t l = 0; l < cfg.gen_layers; ++l) {
    init_transformer_layer(p, "gen.layer" + std::to_string(l), d, cfg.ffn, rng);
  }
  if (cfg.fusion == FusionStrategy::GatedAttention) {
    init_attention(p, "gen.fuse.attn", d, rng);
    p.weight("gen.fuse.wl", d, d, rng);
    p.weight("gen.fuse.ul", d, d, rng);
  }
  p.weight("dec.pos", cfg.max_question_len + 1, d, rng);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    init_transformer_layer(p, "dec.layer" + std::to_string(l), d, cfg.ffn, rng, true);
  }
  p.weight("dec.ww", d, d, rng);
  p.weight("dec.wd", d, vocab_size, rng);
}

SpanScores span_scores(const ParameterStore& p, const Tensor& tokens, const SerializedInput& input) {
  SpanScores out;
  std::vector<std::size_t> rows;
  for (const auto& r : input.rules) {
    out.offsets.push_back(rows.size());
    rows.insert(rows.end(), r.positions.begin(), r.positions.end());
  }
  if (rows.empty()) throw std::invalid_argument("span_scores: no rule tokens");
  const Tensor t = gather_rows(tokens, rows);
  out.start = transpose(matmul(t, p.get("span.ws")));
  out.end = transpose(matmul(t, p.get("span.we")));
  return out;
}

SpanPrediction predict_span(const SpanScores& scores, std::size_t max_span) {
  std::vector<std::vector<double>> s, e;
  const std::size_t n = scores.start.cols();
  for (std::size_t k = 0; k < scores.offsets.size(); ++k) {
    const std::size_t lo = scores.offsets[k];
    const std::size_t hi = k + 1 < scores.offsets.size() ? scores.offsets[k + 1] : n;
    s.emplace_back(scores.start.data().begin() + static_cast<long>(lo),
                   scores.start.data().begin() + static_cast<long>(hi));
    e.emplace_back(scores.end.data().begin() + static_cast<long>(lo),
                   scores.end.data().begin() + static_cast<long>(hi));
  }
  return predict_span(s, e, max_span);
}

Tensor span_loss(const SpanScores& scores, std::size_t doc, std::size_t start, std::size_t end) {
  const std::size_t base = scores.offsets.at(doc);
  return add(cross_entropy(scores.start, static_cast<int>(base + start)),
             cross_entropy(scores.end, static_cast<int>(base + end)));
}

GenerationInput build_generation_input(const SerializedInput& input, const SpanPrediction& span,
                                       const Vocabulary& vocab, std::size_t max_len) {
  const auto& words = input.rules.at(span.doc).words;
  if (span.start > span.end || span.end >= words.size()) {
    throw std::out_of_range("build_generation_input: span outside its document");
  }
  GenerationInput out;
  out.span_words.assign(words.begin() + static_cast<long>(span.start),
                        words.begin() + static_cast<long>(span.end) + 1);
  if (out.span_words.size() + 3 > max_len) {
    throw std::length_error("build_generation_input: span longer than the input budget");
  }
  out.token_ids.push_back(Vocabulary::kCls);
  for (const auto& w : out.span_words) out.token_ids.push_back(vocab.id(w));
  out.token_ids.push_back(Vocabulary::kSep);
  for (const auto& r : input.rules) {
    for (const auto& w : r.words) {
      if (out.token_ids.size() + 1 >= max_len) break;
      out.token_ids.push_back(vocab.id(w));
    }
  }
  out.token_ids.push_back(Vocabulary::kSep);
  return out;
}

Tensor encode_generation_input(const ParameterStore& p, const ModelConfig& cfg,
                               const std::vector<std::size_t>& token_ids) {
  if (token_ids.empty() || token_ids.size() > cfg.max_len) {
    throw std::length_error("encode_generation_input: length " + std::to_string(token_ids.size()));
  }
  std::vector<std::size_t> positions(token_ids.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Tensor x = add(embedding_lookup(p.get("tok.emb"), token_ids), gather_rows(p.get("gen.pos"), positions));
  for (std::size_t l = 0; l < cfg.gen_layers; ++l) {
    x = transformer_layer(p, "gen.layer" + std::to_string(l), x, cfg.heads, {});
  }
  return x;
}

Tensor fuse_states(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h_c,
                   const Tensor& h_e, FusionTrace* trace) {
  if (h_c.cols() != h_e.cols()) throw ShapeError("fuse_states", h_c.shape(), h_e.shape());
  switch (cfg.fusion) {
    case FusionStrategy::None: return h_e;
    case FusionStrategy::DirectConcatenation: {
      const Tensor parts[2] = {h_c, h_e};
      return concat_rows(parts);
    }
    case FusionStrategy::GatedAttention: {
      const Tensor attended = attention(p, "gen.fuse.attn", h_e, h_c, cfg.fusion_heads);
      const Tensor gate = sigmoid(add(matmul(attended, p.get("gen.fuse.wl")),
                                      matmul(h_e, p.get("gen.fuse.ul"))));
      if (trace) *trace = {attended, gate};
      return add(h_e, mul(gate, attended));
    }
  }
  throw std::logic_error("fuse_states: unknown strategy");
}

Tensor decoder_logits(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h,
                      const std::vector<std::size_t>& inputs) {
  if (inputs.empty() || inputs.size() > cfg.max_question_len + 1) {
    throw std::length_error("decoder_logits: " + std::to_string(inputs.size()) + " inputs");
  }
  Tensor state;
  if (cfg.static_logits) {
    const std::vector<std::size_t> same(inputs.size(), 0);
    state = gather_rows(mean_rows(h), same);
  } else {
    std::vector<std::size_t> positions(inputs.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    state = add(embedding_lookup(p.get("tok.emb"), inputs), gather_rows(p.get("dec.pos"), positions));
    AttentionMask causal;
    causal.causal = true;
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
      state = transformer_layer(p, "dec.layer" + std::to_string(l), state, cfg.heads, causal, &h);
    }
  }
  return matmul(tanh(matmul(state, p.get("dec.ww"))), p.get("dec.wd"));
}

Tensor generation_loss(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h,
                       const std::vector<std::size_t>& question) {
  const std::size_t n = std::min(question.size(), cfg.max_question_len);
  std::vector<std::size_t> inputs{Vocabulary::kBos};
  std::vector<int> targets;
  for (std::size_t i = 0; i < n; ++i) {
    inputs.push_back(question[i]);
    targets.push_back(static_cast<int>(question[i]));
  }
  targets.push_back(static_cast<int>(Vocabulary::kEos));
  return cross_entropy_sum(decoder_logits(p, cfg, h, inputs), targets);
}

// ---- decoding --------------------------------------------------------------------------

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Best first: score, then log-probability, then tokens.
bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis greedy_decode(const StepFunction& step, std::size_t eos, std::size_t max_len) {
  Hypothesis h;
  while (h.length < max_len) {
    const auto lp = step(h.tokens);
    const std::size_t t = argmax(lp);
    h.log_prob += lp[t];
    ++h.length;
    if (t == eos) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(t);
  }
  return h;
}

std::vector<Hypothesis> beam_search(const StepFunction& step, std::size_t vocab_size,
                                    std::size_t eos, std::size_t beam_size, std::size_t max_len) {
  if (beam_size == 0) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> done;
  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    struct Candidate {
      double log_prob;
      std::size_t beam, token;
    };
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = step(live[b].tokens);
      if (lp.size() != vocab_size) throw std::invalid_argument("beam_search: step returned wrong size");
      for (std::size_t v = 0; v < vocab_size; ++v) cands.push_back({live[b].log_prob + lp[v], b, v});
    }
    const std::size_t keep = std::min(beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        return std::tie(a.beam, a.token) < std::tie(b.beam, b.token);
                      });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      Hypothesis h = live[cands[c].beam];
      h.log_prob = cands[c].log_prob;
      ++h.length;
      if (cands[c].token == eos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(cands[c].token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) done.push_back(std::move(h));
  const Hypothesis greedy = greedy_decode(step, eos, max_len);
  if (std::find(done.begin(), done.end(), greedy) == done.end()) done.push_back(greedy);
  std::sort(done.begin(), done.end(), ranks_before);
  if (done.size() > beam_size) done.resize(beam_size);
  return done;
}

StepFunction decoder_step(const ParameterStore& p, const ModelConfig& cfg, const Tensor& h) {
  return [&p, cfg, h](const std::vector<std::size_t>& prefix) {
    NoGradGuard no_grad;
    std::vector<std::size_t> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), prefix.begin(), prefix.end());
    const Tensor logits = decoder_logits(p, cfg, h, inputs);
    const Tensor last = log_softmax(slice_rows(logits, logits.rows() - 1, 1));
    return std::vector<double>(last.data().begin(), last.data().end());
  };
}

}  // namespace oscar
