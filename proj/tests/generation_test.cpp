#include "oracles.hpp"

#include "oscar/corpus.hpp"
#include "oscar/generation.hpp"
#include "oscar/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

using namespace oscar;
using oracle::Mat;

namespace {

void set(ParameterStore& p, const std::string& name, const Mat& m) {
  p.add(name, oracle::to_tensor(m, true));
}

Mat identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
  return m;
}

std::vector<std::string> words(std::string_view s) { return tokenize(s); }

ModelConfig tiny_config(FusionStrategy f = FusionStrategy::GatedAttention) {
  ModelConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.fusion_heads = 2;
  c.ffn = 12;
  c.layers = 1;
  c.gen_layers = 1;
  c.max_len = 48;
  c.max_question_len = 8;
  c.fusion = f;
  return c;
}

ParameterStore tiny_model(const ModelConfig& cfg, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore p;
  init_encoder(p, cfg, vocab, rng);
  init_generation(p, cfg, vocab, rng);
  return p;
}

// A deterministic pseudo-random next-token distribution for every prefix.
StepFunction random_model(std::uint64_t seed, std::size_t vocab, double sharpness) {
  return [=](const std::vector<std::size_t>& prefix) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ull + 17;
    for (auto t : prefix) h = (h ^ (t + 1)) * 0x100000001B3ull;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> d(0.0, sharpness);
    std::vector<double> logits(vocab);
    for (auto& x : logits) x = d(rng);
    const auto p = oracle::softmax(logits);
    std::vector<double> lp;
    for (double x : p) lp.push_back(std::log(x));
    return lp;
  };
}

}  // namespace

// ---- predict_span ---------------------------------------------------------------------

TEST(PredictSpan, PeakedStartAndEndAtSamePosition) {
  std::vector<double> s(10, 0.0), e(10, 0.0);
  s[6] = 5;
  e[6] = 5;
  const auto span = predict_span({s}, {e});
  EXPECT_EQ(span.start, 6u);
  EXPECT_EQ(span.end, 6u);
  EXPECT_EQ(span.score, 10.0);
}

TEST(PredictSpan, AllEqualScoresTieBreakToOrigin) {
  const std::vector<std::vector<double>> s{{1, 1, 1}, {1, 1}}, e{{2, 2, 2}, {2, 2}};
  EXPECT_EQ(predict_span(s, e), (SpanPrediction{0, 0, 0, 3.0}));
}

TEST(PredictSpan, EndBeforeStartIsNeverChosen) {
  // The best unordered pair would be start 3, end 1.
  const auto span = predict_span({{0, 0, 0, 9}}, {{0, 9, 0, 1}});
  EXPECT_LE(span.start, span.end);
  EXPECT_EQ(span.start, 3u);
  EXPECT_EQ(span.end, 3u);
}

TEST(PredictSpan, RespectsMaxSpan) {
  std::vector<double> s(50, 0.0), e(50, 0.0);
  s[0] = 10;
  e[45] = 10;
  const auto span = predict_span({s}, {e}, 30);
  EXPECT_LT(span.end - span.start, 30u);
}

TEST(PredictSpan, AgreesWithExhaustiveEnumeration) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<std::vector<double>> s, e;
    const std::size_t docs = 1 + seed % 3;
    for (std::size_t k = 0; k < docs; ++k) {
      const std::size_t n = 1 + rng() % 12;
      s.emplace_back();
      e.emplace_back();
      for (std::size_t i = 0; i < n; ++i) {
        // coarse values so ties actually happen
        s.back().push_back(std::round(d(rng) * 2) / 2);
        e.back().push_back(std::round(d(rng) * 2) / 2);
      }
    }
    const std::size_t max_span = 1 + seed % 8;
    const auto got = predict_span(s, e, max_span);
    const auto want = oracle::best_span(s, e, max_span);
    EXPECT_EQ(got.doc, want.doc) << seed;
    EXPECT_EQ(got.start, want.start) << seed;
    EXPECT_EQ(got.end, want.end) << seed;
  }
}

TEST(PredictSpan, EmptyInputThrows) {
  EXPECT_THROW(predict_span({{}}, {{}}), std::invalid_argument);
}

// ---- edit distance and gold spans -------------------------------------------------------

TEST(EditDistance, KittenSitting) {
  EXPECT_EQ(edit_distance(std::string("kitten"), std::string("sitting")), 3u);
  EXPECT_EQ(edit_distance(words("the cat sat"), words("the cat sat")), 0u);
  EXPECT_EQ(edit_distance(words(""), words("a b")), 2u);
}

TEST(LabelGoldSpan, IdenticalClause) {
  const auto g = label_gold_span({words("you can get it if you own a home or you rent")},
                                 "you own a home");
  EXPECT_EQ(g.distance, 0u);
  EXPECT_EQ(g.start, 5u);
  EXPECT_EQ(g.end, 8u);
}

TEST(LabelGoldSpan, ShortestThenLeftmost) {
  // Against "x" every single token ties at distance 1; the leftmost wins.
  const auto g = label_gold_span({words("a b a b")}, "x");
  EXPECT_EQ(g.distance, 1u);
  EXPECT_EQ(g.start, 0u);
  EXPECT_EQ(g.end, 0u);
  // Across documents the earlier document wins a full tie.
  const auto g2 = label_gold_span({words("p q"), words("r s")}, "s q");
  EXPECT_EQ(g2.distance, 1u);
  EXPECT_EQ(g2.doc, 0u);
  EXPECT_EQ(g2.start, 1u);
}

TEST(LabelGoldSpan, MatchesAllSpansOracle) {
  const std::vector<std::string> pool{"a", "b", "c", "d", "e"};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::string>> docs(1 + seed % 2);
    for (auto& d : docs)
      for (std::size_t i = 0, n = 1 + rng() % 10; i < n; ++i) d.push_back(pool[rng() % pool.size()]);
    std::vector<std::string> q;
    for (std::size_t i = 0, n = rng() % 5; i < n; ++i) q.push_back(pool[rng() % pool.size()]);
    const auto got = label_gold_span(docs, join(q));

    std::size_t best = std::numeric_limits<std::size_t>::max(), best_len = 0;
    for (const auto& d : docs)
      for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = i; j < d.size(); ++j) {
          const std::vector<std::string> span(d.begin() + static_cast<long>(i), d.begin() + static_cast<long>(j) + 1);
          const auto dist = oracle::levenshtein(span, q);
          if (dist < best || (dist == best && span.size() < best_len)) {
            best = dist;
            best_len = span.size();
          }
        }
    EXPECT_EQ(got.distance, best) << seed;
    EXPECT_EQ(got.end - got.start + 1, best_len) << seed;
    const auto& d = docs[got.doc];
    const std::vector<std::string> span(d.begin() + static_cast<long>(got.start), d.begin() + static_cast<long>(got.end) + 1);
    EXPECT_EQ(oracle::levenshtein(span, q), got.distance) << seed;
  }
}

TEST(LabelGoldSpan, RecoversSyntheticConditionSpan) {
  const auto corpus = generate_synthetic_corpus(3, 20, 300);
  std::size_t checked = 0;
  for (const auto& e : corpus.split.train) {
    if (!e.gold_follow_up) continue;
    const auto& syn = e.extra.at("synthetic");
    const std::string cond = syn.at("conditions")[syn.at("asked").get<std::size_t>()];
    const auto rule = words(corpus.rule(e.gold_doc_id).text);
    const auto g = label_gold_span({rule}, *e.gold_follow_up);
    const std::vector<std::string> span(rule.begin() + static_cast<long>(g.start), rule.begin() + static_cast<long>(g.end) + 1);
    EXPECT_EQ(join(span), cond);
    ++checked;
  }
  EXPECT_GT(checked, 30u);
}

TEST(LabelGoldSpan, EmptyRuleThrows) {
  EXPECT_THROW(label_gold_span({}, "q"), std::invalid_argument);
  EXPECT_THROW(label_gold_span({{}}, "q"), std::invalid_argument);
}

// ---- generation input ------------------------------------------------------------------

TEST(GenerationInput, LayoutAndSpanContiguity) {
  Vocabulary v;
  v.add_text("you can get it if you own a home or rent a flat");
  SerializedInput s;
  s.rules.push_back({{}, words("you can get it if you own a home"), {}});
  s.rules.push_back({{}, words("or rent a flat"), {}});
  const auto x = build_generation_input(s, {0, 5, 8, 0.0}, v, 64);
  EXPECT_EQ(x.token_ids.front(), Vocabulary::kCls);
  EXPECT_EQ(std::count(x.token_ids.begin(), x.token_ids.end(), Vocabulary::kSep), 2);
  EXPECT_EQ(x.token_ids.back(), Vocabulary::kSep);
  EXPECT_EQ(join(x.span_words), "you own a home");
  EXPECT_EQ(x.token_ids.size(), 1 + 4 + 1 + 13 + 1);
  // span sits contiguously inside the rule tokens
  const auto rule = v.encode(join(s.rules[0].words));
  const std::vector<std::size_t> span(x.token_ids.begin() + 1, x.token_ids.begin() + 5);
  EXPECT_NE(std::search(rule.begin(), rule.end(), span.begin(), span.end()), rule.end());

  const auto cut = build_generation_input(s, {1, 0, 1, 0.0}, v, 10);
  EXPECT_EQ(cut.token_ids.size(), 10u);
  EXPECT_EQ(std::count(cut.token_ids.begin(), cut.token_ids.end(), Vocabulary::kSep), 2);
  EXPECT_THROW(build_generation_input(s, {1, 2, 9, 0.0}, v, 64), std::out_of_range);
}

TEST(GenerationEncoder, ShapeDeterminismAndSensitivity) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 1);
  const std::vector<std::size_t> x{3, 9, 10, 4, 11, 12, 9, 10, 4};
  const auto a = encode_generation_input(p, cfg, x);
  EXPECT_EQ(a.rows(), x.size());
  const auto b = encode_generation_input(p, cfg, x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  auto y = x;
  y[1] = 13;
  const auto c = encode_generation_input(p, cfg, y);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a.data()[i] - c.data()[i]);
  EXPECT_GT(diff, 1e-6);
}

// ---- fusion -----------------------------------------------------------------------------

TEST(FuseStates, DirectConcatenationStacks) {
  const auto cfg = tiny_config(FusionStrategy::DirectConcatenation);
  auto p = tiny_model(cfg, 20, 2);
  const auto h = fuse_states(p, cfg, Tensor::filled(7, 8, 1.0), Tensor::filled(5, 8, 2.0));
  EXPECT_EQ(h.rows(), 12u);
  EXPECT_EQ(h.at(6, 0), 1.0);
  EXPECT_EQ(h.at(7, 0), 2.0);
}

TEST(FuseStates, NoFusionIsGenerationStatesAlone) {
  const auto cfg = tiny_config(FusionStrategy::None);
  auto p = tiny_model(cfg, 20, 2);
  const auto he = Tensor::filled(5, 8, 2.0);
  EXPECT_EQ(fuse_states(p, cfg, Tensor::filled(7, 8, 1.0), he).node(), he.node());
}

TEST(FuseStates, WidthMismatchThrows) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 2);
  EXPECT_THROW(fuse_states(p, cfg, Tensor::zeros(2, 4), Tensor::zeros(2, 8)), ShapeError);
}

TEST(FuseStates, ZeroGateWeightsHalveTheAttention) {
  auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 3);
  for (const char* n : {"gen.fuse.wl", "gen.fuse.ul"})
    for (auto& x : p.get(n).mutable_data()) x = 0;
  std::mt19937_64 rng(3);
  const auto hc = oracle::to_tensor(oracle::random_mat(6, 8, rng));
  const auto he = oracle::to_tensor(oracle::random_mat(4, 8, rng));
  FusionTrace trace;
  const auto h = fuse_states(p, cfg, hc, he, &trace);
  for (double g : trace.gate.data()) EXPECT_EQ(g, 0.5);
  for (std::size_t i = 0; i < h.size(); ++i)
    EXPECT_NEAR(h.data()[i], he.data()[i] + 0.5 * trace.attended.data()[i], 1e-15);
}

TEST(FuseStates, TwoDimensionalHandEvaluation) {
  // One H_c row means every query attends to it with weight 1, so with
  // Wv = Wo = I, H^ = (1, 0). W_l = I, U_l = 0: lambda = (sigmoid(1), 1/2).
  auto cfg = tiny_config();
  cfg.hidden = 2;
  cfg.fusion_heads = 1;
  ParameterStore p;
  set(p, "gen.fuse.attn.wq", identity(2));
  set(p, "gen.fuse.attn.wk", identity(2));
  set(p, "gen.fuse.attn.wv", identity(2));
  set(p, "gen.fuse.attn.wo", identity(2));
  set(p, "gen.fuse.wl", identity(2));
  set(p, "gen.fuse.ul", Mat(2, 2));
  const auto h = fuse_states(p, cfg, Tensor::row({1, 0}), Tensor::from(2, 2, {0, 1, 3, -2}));
  const double s1 = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(h.at(0, 0), s1, 1e-12);
  EXPECT_NEAR(h.at(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(h.at(1, 0), 3.0 + s1, 1e-12);
  EXPECT_NEAR(h.at(1, 1), -2.0, 1e-12);
}

TEST(FuseStates, GatedMatchesLoopOracleAndGatesAreOpenInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto cfg = tiny_config();
    cfg.hidden = 2 + 2 * (seed % 3);
    cfg.fusion_heads = 1 + seed % 2;
    const std::size_t d = cfg.hidden;
    ParameterStore p;
    std::map<std::string, Mat> w;
    for (const char* n : {"gen.fuse.attn.wq", "gen.fuse.attn.wk", "gen.fuse.attn.wv", "gen.fuse.attn.wo",
                          "gen.fuse.wl", "gen.fuse.ul"}) {
      w[n] = oracle::random_mat(d, d, rng);
      set(p, n, w[n]);
    }
    const auto hc = oracle::random_mat(1 + seed % 5, d, rng);
    const auto he = oracle::random_mat(1 + seed % 4, d, rng);
    const auto att = oracle::projected_attention(he, hc, w["gen.fuse.attn.wq"], w["gen.fuse.attn.wk"],
                                                 w["gen.fuse.attn.wv"], w["gen.fuse.attn.wo"],
                                                 cfg.fusion_heads);
    const auto a = oracle::matmul(att, w["gen.fuse.wl"]);
    const auto b = oracle::matmul(he, w["gen.fuse.ul"]);
    Mat want(he.rows, d);
    for (std::size_t i = 0; i < want.v.size(); ++i)
      want.v[i] = he.v[i] + oracle::sigmoid(a.v[i] + b.v[i]) * att.v[i];
    FusionTrace trace;
    const auto got = fuse_states(p, cfg, oracle::to_tensor(hc), oracle::to_tensor(he), &trace);
    EXPECT_LT(oracle::max_abs_diff(want, got), 1e-9) << seed;
    for (double g : trace.gate.data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
  }
}

// ---- decoder ---------------------------------------------------------------------------

TEST(Decoder, DistributionsSumToOne) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 4);
  std::mt19937_64 rng(4);
  const auto h = oracle::to_tensor(oracle::random_mat(9, 8, rng));
  const auto logits = decoder_logits(p, cfg, h, {Vocabulary::kBos, 9, 12});
  ASSERT_EQ(logits.rows(), 3u);
  const auto probs = softmax(logits);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 20; ++c) s += probs.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Decoder, CausalPrefixesDoNotSeeTheFuture) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 5);
  std::mt19937_64 rng(5);
  const auto h = oracle::to_tensor(oracle::random_mat(6, 8, rng));
  const auto a = decoder_logits(p, cfg, h, {Vocabulary::kBos, 9, 12});
  const auto b = decoder_logits(p, cfg, h, {Vocabulary::kBos, 9, 15});
  for (std::size_t c = 0; c < 20; ++c) {
    EXPECT_NEAR(a.at(0, c), b.at(0, c), 1e-12);
    EXPECT_NEAR(a.at(1, c), b.at(1, c), 1e-12);
  }
}

TEST(Decoder, ZeroOutputWeightsGiveUniform) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 6);
  for (auto& x : p.get("dec.wd").mutable_data()) x = 0;
  const auto h = Tensor::filled(3, 8, 0.3);
  const auto probs = softmax(decoder_logits(p, cfg, h, {Vocabulary::kBos, 7}));
  for (double x : probs.data()) EXPECT_NEAR(x, 1.0 / 20, 1e-15);
  // L_g = I ln V with I = 3 tokens + [EOS]
  EXPECT_NEAR(generation_loss(p, cfg, h, {8, 9, 10}).item(), 4 * std::log(20.0), 1e-12);
}

TEST(Decoder, StaticLogitsHandEvaluation) {
  // V = 7 (just the special ids), I = 2; the literal reading uses mean(H).
  auto cfg = tiny_config();
  cfg.static_logits = true;
  cfg.hidden = 2;
  ParameterStore p;
  p.add("tok.emb", Tensor::zeros(7, 2));
  set(p, "dec.ww", identity(2));
  Mat wd(2, 7);
  wd.v = {1, 0, 0, 0, 0, 2, 0,  //
          0, 1, 0, 0, 0, 0, -1};
  set(p, "dec.wd", wd);
  p.add("dec.pos", Tensor::zeros(cfg.max_question_len + 1, 2));
  const auto h = Tensor::from(2, 2, {0.2, 1.0, 0.6, 0.0});  // mean (0.4, 0.5)
  const double a = std::tanh(0.4), b = std::tanh(0.5);
  const std::vector<double> logits{a, b, 0, 0, 0, 2 * a, -b};
  const double want = oracle::nll(logits, 5) + oracle::nll(logits, 6);
  EXPECT_NEAR(generation_loss(p, cfg, h, {5}).item(), want, 1e-12);
}

TEST(Decoder, TeacherForcedLossDecreasesMonotonically) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 7);
  std::mt19937_64 rng(7);
  const auto h = oracle::to_tensor(oracle::random_mat(5, 8, rng));
  const std::vector<std::size_t> q{9, 14, 11};
  OptimizerState state;
  AdamConfig adam;
  adam.learning_rate = 1e-3;
  double last = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    p.zero_grad();
    const auto loss = generation_loss(p, cfg, h, q);
    EXPECT_LT(loss.item(), last) << "step " << step;
    last = loss.item();
    loss.backward();
    adam_step(p, state, adam);
  }
}

TEST(GenerationGradients, PassThroughEveryFusion) {
  for (auto strategy : {FusionStrategy::GatedAttention, FusionStrategy::DirectConcatenation,
                        FusionStrategy::None}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto cfg = tiny_config(strategy);
      auto p = tiny_model(cfg, 12, seed);
      std::mt19937_64 rng(seed);
      const auto hc = oracle::to_tensor(oracle::random_mat(3, cfg.hidden, rng), true);
      const std::vector<std::size_t> x{3, 8, 9, 4, 7, 8, 9, 10, 4};
      auto loss = [&] {
        const auto he = encode_generation_input(p, cfg, x);
        return generation_loss(p, cfg, fuse_states(p, cfg, hc, he), {8, 9, 11});
      };
      GradCheckOptions opts;
      opts.max_per_tensor = 6;
      opts.floor = oracle::kModelGradFloor;
      const auto report = finite_diff_check(loss, p, opts);
      EXPECT_TRUE(report.passed) << to_string(strategy) << " seed " << seed << " " << report.worst
                                 << " " << report.max_relative_error << " abs " << report.max_absolute_error;
      const auto through_hc = finite_diff_check(loss, {{"hc", hc}}, opts);
      EXPECT_TRUE(through_hc.passed || strategy == FusionStrategy::None) << seed;
    }
  }
}

// ---- decoding -----------------------------------------------------------------------------

TEST(BeamSearch, BeamOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto step = random_model(seed, 6, 1.5);
    const auto greedy = greedy_decode(step, 0, 8);
    const auto beams = beam_search(step, 6, 0, 1, 8);
    ASSERT_EQ(beams.size(), 1u);
    EXPECT_EQ(beams[0], greedy) << seed;
  }
}

TEST(BeamSearch, TopScoreNeverBelowGreedy) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto step = random_model(seed + 1000, 7, 1.0);
    const auto greedy = greedy_decode(step, 0, 6);
    for (std::size_t k : {2u, 3u, 10u}) {
      const auto beams = beam_search(step, 7, 0, k, 6);
      EXPECT_GE(beams[0].score(), greedy.score()) << seed;
      for (std::size_t i = 1; i < beams.size(); ++i) EXPECT_GE(beams[i - 1].score(), beams[i].score());
      EXPECT_LE(beams.size(), k);
    }
  }
}

TEST(BeamSearch, ToyVocabularyMatchesExhaustiveSearch) {
  // tokens: a = 0, b = 1, [EOS] = 2; greedy takes "a" first, the best sequence is "b".
  const StepFunction step = [](const std::vector<std::size_t>& prefix) {
    std::vector<double> p;
    if (prefix.empty()) p = {0.5, 0.4, 0.1};
    else if (prefix == std::vector<std::size_t>{0}) p = {0.3, 0.3, 0.4};
    else if (prefix == std::vector<std::size_t>{1}) p = {0.05, 0.05, 0.9};
    else p = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    for (auto& x : p) x = std::log(x);
    return p;
  };
  const auto best = oracle::best_sequence(step, 3, 2, 3);
  const auto beams = beam_search(step, 3, 2, 2, 3);
  EXPECT_EQ(beams[0].tokens, best.tokens);
  EXPECT_NEAR(beams[0].score(), best.score(), 1e-12);
  EXPECT_EQ(beams[0].tokens, std::vector<std::size_t>{1});
  EXPECT_EQ(greedy_decode(step, 2, 3).tokens, std::vector<std::size_t>{0});
}

TEST(BeamSearch, Deterministic) {
  const auto step = random_model(42, 9, 1.0);
  EXPECT_EQ(beam_search(step, 9, 0, 5, 7), beam_search(step, 9, 0, 5, 7));
}

TEST(BeamSearch, StopsAtMaxLength) {
  // [EOS] is never likely: every hypothesis runs to max_len unfinished.
  const StepFunction step = [](const std::vector<std::size_t>&) {
    return std::vector<double>{std::log(1e-6), std::log(0.6), std::log(0.4 - 1e-6)};
  };
  for (const auto& h : beam_search(step, 3, 0, 3, 4)) {
    EXPECT_EQ(h.length, 4u);
    EXPECT_FALSE(h.finished);
  }
  EXPECT_THROW(beam_search(step, 3, 0, 0, 4), std::invalid_argument);
}

TEST(BeamSearch, RunsOverTheTrainedDecoder) {
  const auto cfg = tiny_config();
  auto p = tiny_model(cfg, 20, 8);
  std::mt19937_64 rng(8);
  const auto h = oracle::to_tensor(oracle::random_mat(5, 8, rng));
  const auto step = decoder_step(p, cfg, h);
  const auto beams = beam_search(step, 20, Vocabulary::kEos, 4, cfg.max_question_len + 1);
  ASSERT_FALSE(beams.empty());
  EXPECT_EQ(beams[0], beam_search(step, 20, Vocabulary::kEos, 4, cfg.max_question_len + 1)[0]);
  const auto greedy = greedy_decode(step, Vocabulary::kEos, cfg.max_question_len + 1);
  EXPECT_EQ(beam_search(step, 20, Vocabulary::kEos, 1, cfg.max_question_len + 1)[0], greedy);
}
