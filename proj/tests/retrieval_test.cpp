#include "oscar/retrieval.hpp"

#include <gtest/gtest.h>

#include <cctype>
#include <cmath>
#include <random>
#include <set>

using namespace oscar;

namespace {

RuleDocument rule(std::string id, std::string text) { return {std::move(id), "", std::move(text), {}}; }

// Independent tokenizer and formula: every score recomputed from raw text.
std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + " ") {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  return out;
}

double oracle_score(const std::vector<RuleDocument>& docs, const std::string& query, std::size_t d) {
  auto count = [](const std::vector<std::string>& ws, const std::string& t) {
    return static_cast<double>(std::count(ws.begin(), ws.end(), t));
  };
  auto idf = [&](const std::string& t) {
    double df = 0;
    for (const auto& doc : docs) df += count(words(doc.text), t) > 0;
    return std::log((1.0 + static_cast<double>(docs.size())) / (1.0 + df)) + 1.0;
  };
  const auto dw = words(docs[d].text);
  double norm = 0;
  std::vector<std::string> distinct = dw;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  for (const auto& t : distinct) norm += std::pow(count(dw, t) * idf(t), 2);
  const auto qw = words(query);
  std::vector<std::string> qd = qw;
  std::sort(qd.begin(), qd.end());
  qd.erase(std::unique(qd.begin(), qd.end()), qd.end());
  double s = 0;
  for (const auto& t : qd) s += count(qw, t) * count(dw, t) * idf(t);
  return s / std::sqrt(norm);
}

std::string random_text(std::mt19937_64& rng, std::size_t vocab, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += "w" + std::to_string(rng() % vocab) + (i % 4 == 3 ? ", " : " ");
  return s;
}

}  // namespace

TEST(Query, ConcatenatesQuestionAndScenario) {
  DialogueExample e;
  e.question = "Do I qualify?";
  e.scenario = "I am 70.";
  EXPECT_EQ(build_query(e), "Do I qualify? I am 70.");
  e.question = "Q";
  e.scenario = "";
  EXPECT_EQ(build_query(e), "Q ");
}

TEST(TfIdf, ThreeDocumentHandCount) {
  // tf: d0 {apple:2, pie:1}, d1 {apple:1, tart:1}, d2 {pear:1, pie:1}
  // df: apple 2, pie 2, tart 1, pear 1; idf = ln(4/(1+df)) + 1
  const std::vector<RuleDocument> docs = {rule("d0", "Apple apple pie"), rule("d1", "apple tart."),
                                          rule("d2", "pear, pie")};
  auto idx = TfIdfIndex::build(docs);
  const double i2 = std::log(4.0 / 3.0) + 1, i1 = std::log(2.0) + 1;
  EXPECT_NEAR(idx.idf(*idx.term_id("apple")), i2, 1e-15);
  EXPECT_NEAR(idx.idf(*idx.term_id("tart")), i1, 1e-15);
  EXPECT_EQ(idx.doc_freq(*idx.term_id("pie")), 2u);
  const double n0 = std::sqrt(std::pow(2 * i2, 2) + std::pow(i2, 2));
  EXPECT_NEAR(idx.doc_norm(0), n0, 1e-12);
  // query "apple pie apple": qtf apple 2, pie 1
  EXPECT_NEAR(idx.score("apple pie apple", "d0"), (2 * 2 * i2 + 1 * 1 * i2) / n0, 1e-9);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_NEAR(idx.score("apple pie apple tart", docs[d].doc_id),
                oracle_score(docs, "apple pie apple tart", d), 1e-9);
  }
}

TEST(TfIdf, MatchesBruteForceOnRandomCorpora) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<RuleDocument> docs;
    const std::size_t n = 2 + rng() % 8;
    for (std::size_t d = 0; d < n; ++d) docs.push_back(rule("d" + std::to_string(d), random_text(rng, 15, 3 + rng() % 20)));
    auto idx = TfIdfIndex::build(docs);
    const auto q = random_text(rng, 20, 1 + rng() % 6);
    const auto all = idx.scores(q);
    for (std::size_t d = 0; d < n; ++d) EXPECT_NEAR(all[d], oracle_score(docs, q, d), 1e-9);
  }
}

TEST(TfIdf, UniqueWordDocumentWins) {
  auto idx = TfIdfIndex::build({rule("a", "the cat sat"), rule("b", "zebra"), rule("c", "the dog")});
  auto r = idx.retrieve("zebra", 3);
  EXPECT_EQ(r[0].doc_id, "b");
  EXPECT_GT(r[0].score, r[1].score);
}

TEST(TfIdf, NoSharedTermsScoresZero) {
  auto idx = TfIdfIndex::build({rule("a", "the cat sat"), rule("b", "zebra")});
  for (double s : idx.scores("unrelated words only")) EXPECT_EQ(s, 0.0);
  // All-zero scores tie, broken by doc_id.
  auto r = idx.retrieve("nothing", 2);
  EXPECT_EQ(r[0].doc_id, "a");
}

TEST(TfIdf, JsonRoundTripIsExact) {
  std::mt19937_64 rng(4);
  std::vector<RuleDocument> docs;
  for (int d = 0; d < 6; ++d) docs.push_back(rule("d" + std::to_string(d), random_text(rng, 12, 10)));
  auto idx = TfIdfIndex::build(docs);
  auto back = TfIdfIndex::from_json(nlohmann::json::parse(idx.to_json().dump()));
  for (int t = 0; t < 10; ++t) {
    const auto q = random_text(rng, 12, 4);
    EXPECT_EQ(idx.scores(q), back.scores(q));
  }
  EXPECT_THROW(TfIdfIndex::from_json({{"format", "other"}}), std::runtime_error);
}

// Adding a document that shares no term with the query changes N, which
// shifts every idf by ln((N+2)/(N+1)) and so every document norm. What the
// declared formula guarantees is that the matching/non-matching split and the
// order within the non-matching (tied at 0) block are preserved.
TEST(TfIdfProperty, UnrelatedDocumentKeepsMatchingSet) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RuleDocument> docs;
    for (int d = 0; d < 6; ++d) docs.push_back(rule("d" + std::to_string(d), random_text(rng, 10, 2 + rng() % 12)));
    const auto q = random_text(rng, 14, 3);
    auto before = TfIdfIndex::build(docs).retrieve(q, docs.size());
    docs.push_back(rule("zz", "x" + std::to_string(rng() % 5) + " y" + std::to_string(rng() % 5)));
    auto after = TfIdfIndex::build(docs).retrieve(q, docs.size());
    std::vector<std::string> zero_a, zero_b;
    std::set<std::string> pos_a, pos_b;
    for (const auto& r : before) r.score > 0 ? void(pos_a.insert(r.doc_id)) : zero_a.push_back(r.doc_id);
    for (const auto& r : after) {
      if (r.doc_id == "zz") {
        EXPECT_EQ(r.score, 0.0);
        continue;
      }
      r.score > 0 ? void(pos_b.insert(r.doc_id)) : zero_b.push_back(r.doc_id);
    }
    EXPECT_EQ(pos_a, pos_b);
    EXPECT_EQ(zero_a, zero_b);
  }
}

// The stronger "relative order never changes" reading does not hold for
// smoothed idf with cosine normalization: a single-term query ranks documents
// by tf / norm, and norms move non-uniformly when N grows.
TEST(TfIdfProperty, StrictOrderPreservationFailsForCosineNormalization) {
  std::mt19937_64 rng(8);
  int reordered = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RuleDocument> docs;
    for (int d = 0; d < 6; ++d) docs.push_back(rule("d" + std::to_string(d), random_text(rng, 10, 2 + rng() % 12)));
    const auto q = random_text(rng, 10, 3);
    auto before = TfIdfIndex::build(docs).retrieve(q, docs.size());
    docs.push_back(rule("zz", "x" + std::to_string(rng() % 5) + " y" + std::to_string(rng() % 5)));
    auto after = TfIdfIndex::build(docs).retrieve(q, docs.size());
    std::vector<std::string> a, b;
    for (const auto& r : before) a.push_back(r.doc_id);
    for (const auto& r : after) {
      if (r.doc_id != "zz") b.push_back(r.doc_id);
    }
    reordered += a != b;
  }
  EXPECT_GT(reordered, 0);
}

TEST(Retrieve, ReturnsMinOfKAndCorpusSize) {
  Retriever r;
  r.tfidf = TfIdfIndex::build({rule("a", "x y"), rule("b", "y z"), rule("c", "z")});
  EXPECT_EQ(r.retrieve("y", 3, RetrievalMethod::TfIdf).size(), 3u);
  EXPECT_EQ(r.retrieve("y", 10, RetrievalMethod::TfIdf).size(), 3u);
  EXPECT_THROW(r.retrieve("y", 0, RetrievalMethod::TfIdf), std::invalid_argument);
  EXPECT_THROW(r.retrieve("y", 1, RetrievalMethod::Dense), std::logic_error);
  auto list = r.retrieve("y z", 3, RetrievalMethod::TfIdf);
  for (std::size_t i = 1; i < list.size(); ++i) EXPECT_GE(list[i - 1].score, list[i].score);
}

TEST(Recall, HandEnumeration) {
  // Gold at ranks 1, 2, 6, 30.
  std::vector<RankedList> ranked;
  std::vector<std::string> gold;
  for (std::size_t g : {1u, 2u, 6u, 30u}) {
    RankedList l;
    for (std::size_t i = 1; i <= 40; ++i) l.push_back({i == g ? "gold" : "n" + std::to_string(i), 40.0 - i});
    ranked.push_back(l);
    gold.push_back("gold");
  }
  EXPECT_DOUBLE_EQ(100 * recall_at_k(ranked, gold, 1), 25.0);
  EXPECT_DOUBLE_EQ(100 * recall_at_k(ranked, gold, 5), 50.0);
  EXPECT_DOUBLE_EQ(100 * recall_at_k(ranked, gold, 10), 75.0);
  EXPECT_DOUBLE_EQ(100 * recall_at_k(ranked, gold, 20), 75.0);
}

TEST(Recall, AlwaysFirstAndAlwaysAbsent) {
  std::vector<RankedList> ranked = {{{"a", 1}, {"b", 0}}, {{"c", 1}}};
  for (std::size_t k : {1u, 5u, 10u, 20u}) {
    EXPECT_DOUBLE_EQ(recall_at_k(ranked, {"a", "c"}, k), 1.0);
    EXPECT_DOUBLE_EQ(recall_at_k(ranked, {"x", "y"}, k), 0.0);
  }
}

// ---- dense -------------------------------------------------------------------------

TEST(Dense, ScoreIsDotProduct) {
  DenseConfig cfg;
  cfg.dim = 2;
  DenseIndex idx(Vocabulary(), cfg);
  idx.set_doc_vector("d", {3, 4});
  auto q = idx.encode_query("anything").detach();
  idx.set_doc_vector("same", {q.data()[0], q.data()[1]});
  idx.set_doc_vector("orth", {-q.data()[1], q.data()[0]});
  const double qd = 3 * q.data()[0] + 4 * q.data()[1];
  EXPECT_NEAR(idx.score("anything", "d"), qd, 1e-12);
  EXPECT_NEAR(idx.score("anything", "same"), q.data()[0] * q.data()[0] + q.data()[1] * q.data()[1], 1e-12);
  EXPECT_NEAR(idx.score("anything", "orth"), 0.0, 1e-12);
  EXPECT_THROW(idx.score("anything", "missing"), std::out_of_range);
  EXPECT_THROW(idx.set_doc_vector("bad", {1, 2, 3}), ShapeError);
}

TEST(Dense, HandSetVectors) {
  // q = (1, 2) and d = (3, 4) through an identity tower.
  DenseConfig cfg;
  cfg.dim = 2;
  Vocabulary v;
  v.add("q");
  DenseIndex idx(v, cfg);
  auto& p = idx.params();
  auto set = [](Tensor& t, std::vector<double> vals) { std::copy(vals.begin(), vals.end(), t.mutable_data().begin()); };
  auto emb = p.get("emb");
  for (auto& x : emb.mutable_data()) x = 0;
  const auto id = v.id("q");
  emb.mutable_data()[id * 2] = 1;
  emb.mutable_data()[id * 2 + 1] = 2;
  for (const char* w : {"q.w1", "q.w2"}) set(p.get(w), {1, 0, 0, 1});
  idx.set_doc_vector("d", {3, 4});
  EXPECT_DOUBLE_EQ(idx.score("q", "d"), 11.0);
}

TEST(Dense, ContrastiveLossEdgeCases) {
  EXPECT_EQ(contrastive_loss(Tensor::zeros(1, 1)).item(), 0.0);
  EXPECT_NEAR(contrastive_loss(Tensor::zeros(1, 4)).item(), std::log(4.0), 1e-15);
}

TEST(Dense, TrainingWithoutGoldDocsIsAnError) {
  Corpus c;
  c.rules = {rule("a", "x")};
  DialogueExample e;
  e.utterance_id = "u";
  e.question = "x";
  c.split.train = {e};
  c.reindex();
  EXPECT_THROW(train_dense(c, TfIdfIndex::build(c.rules), {}), CorpusError);
}

TEST(Dense, OverfitsFiveDocumentCorpus) {
  // Every query names its rule; irrelevant questions name none.
  SyntheticOptions o;
  o.n_rules = 5;
  o.n_train = 40;
  o.unseen_rule_fraction = 0;
  o.irrelevant_fraction = 0;
  auto corpus = generate_synthetic_corpus(2, o);
  auto tfidf = TfIdfIndex::build(corpus.rules);
  DenseConfig cfg;
  cfg.epochs = 60;
  DenseTrainLog log;
  auto dense = train_dense(corpus, tfidf, cfg, &log);
  std::vector<RankedList> ranked;
  std::vector<std::string> gold;
  for (const auto& e : corpus.split.train) {
    ranked.push_back(dense.retrieve(build_query(e), 5));
    gold.push_back(e.gold_doc_id);
  }
  EXPECT_GE(recall_at_k(ranked, gold, 1), 0.9);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
}

TEST(DenseProperty, FullBatchLossIsNonIncreasing) {
  auto corpus = generate_synthetic_corpus(6, 5, 20);
  DenseConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 1000;
  cfg.learning_rate = 1e-3;
  DenseTrainLog log;
  train_dense(corpus, TfIdfIndex::build(corpus.rules), cfg, &log);
  for (std::size_t i = 1; i < log.epoch_loss.size(); ++i) {
    EXPECT_LE(log.epoch_loss[i], log.epoch_loss[i - 1] * (1 + 1e-12)) << "epoch " << i;
  }
}

TEST(Dense, DeterministicAndRoundTrips) {
  auto corpus = generate_synthetic_corpus(3, 6, 30);
  auto tfidf = TfIdfIndex::build(corpus.rules);
  DenseConfig cfg;
  cfg.epochs = 3;
  auto a = train_dense(corpus, tfidf, cfg);
  auto b = train_dense(corpus, tfidf, cfg);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  auto back = DenseIndex::from_json(nlohmann::json::parse(a.to_json().dump()));
  const auto q = build_query(corpus.split.dev.at(0));
  EXPECT_EQ(a.scores(q), back.scores(q));
}

// ---- hybrid ------------------------------------------------------------------------

TEST(Hybrid, CombineArithmetic) {
  EXPECT_DOUBLE_EQ(combine_scores(0.2, 0.9, 1.0), 1.1);
  EXPECT_DOUBLE_EQ(combine_scores(0.2, 0.9, 0.0), 0.2);
}

TEST(HybridProperty, ZeroWeightReproducesTfIdfOrder) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto corpus = generate_synthetic_corpus(seed, 12, 40);
    auto tfidf = TfIdfIndex::build(corpus.rules);
    DenseConfig cfg;
    cfg.epochs = 1;
    auto dense = train_dense(corpus, tfidf, cfg);
    for (const auto& e : corpus.split.dev) {
      const auto q = build_query(e);
      auto t = tfidf.retrieve(q, 12);
      auto h = hybrid_retrieve(tfidf, dense, q, 12, 0.0);
      ASSERT_EQ(t.size(), h.size());
      for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].doc_id, h[i].doc_id);
    }
  }
}

TEST(RecallProperty, NonDecreasingInK) {
  auto corpus = generate_synthetic_corpus(9, 15, 100);
  auto tfidf = TfIdfIndex::build(corpus.rules);
  std::vector<RankedList> ranked;
  std::vector<std::string> gold;
  for (const auto& e : corpus.split.dev) {
    ranked.push_back(tfidf.retrieve(build_query(e), 15));
    gold.push_back(e.gold_doc_id);
  }
  double prev = 0;
  for (std::size_t k = 1; k <= 15; ++k) {
    const double r = recall_at_k(ranked, gold, k);
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

// Oracle corpus: every query repeats its gold rule's title.
TEST(TfIdfOracle, TitleQueriesRetrieveTheirRule) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto corpus = generate_synthetic_corpus(seed, 20, 40);
    auto tfidf = TfIdfIndex::build(corpus.rules);
    std::vector<RankedList> ranked;
    std::vector<std::string> gold;
    for (const auto& r : corpus.rules) {
      DialogueExample e;
      e.question = "Can I get the " + r.title + "?";
      ranked.push_back(tfidf.retrieve(build_query(e), 5));
      gold.push_back(r.doc_id);
    }
    EXPECT_DOUBLE_EQ(recall_at_k(ranked, gold, 1), 1.0) << "seed " << seed;
  }
}
