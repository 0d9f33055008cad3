#include "oscar/discourse.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <queue>
#include <random>

using namespace oscar;

namespace {

std::vector<std::string> texts(const std::vector<Edu>& edus) {
  std::vector<std::string> out;
  for (const auto& e : edus) out.push_back(e.text);
  return out;
}

std::vector<Edu> edus_of(const std::vector<std::string>& parts) {
  std::vector<Edu> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.push_back({static_cast<int>(i), "d", parts[i], 0, parts[i].size()});
  }
  return out;
}

ParsedRule doc(std::size_t n_edus, std::vector<DiscourseRelation> rels = {}) {
  ParsedRule r;
  r.doc_id = "d";
  r.edus = edus_of(std::vector<std::string>(n_edus, "x"));
  r.relations = std::move(rels);
  return r;
}

std::string strip_space(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  }
  return out;
}

// Whitespace, clause separators and bullet markers ("*", "-", "1.").
bool droppable(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isspace(u) || std::isdigit(u) || c == ',' || c == ';' || c == '*' || c == '-' ||
         c == '.' || c == ')';
}

}  // namespace

TEST(Segment, SingleClause) {
  EXPECT_EQ(texts(segment_edus("You must pay the fee.")),
            std::vector<std::string>{"You must pay the fee."});
}

TEST(Segment, ConditionalWithAlternative) {
  EXPECT_EQ(texts(segment_edus("You qualify if you are over 65 or you are disabled")),
            (std::vector<std::string>{"You qualify", "if you are over 65", "or you are disabled"}));
}

TEST(Segment, BulletedListWithStem) {
  const std::string text =
      "You can apply if:\n* you are a carer\n* you live in Wales\n* you receive pension credit";
  auto edus = segment_edus(text);
  EXPECT_EQ(texts(edus), (std::vector<std::string>{"You can apply if:", "you are a carer",
                                                   "you live in Wales",
                                                   "you receive pension credit"}));
}

TEST(Segment, ConnectiveWithoutVerbDoesNotSplit) {
  // "bread and butter" has no verb on the right of "and".
  EXPECT_EQ(segment_edus("You can buy bread and butter.").size(), 1u);
}

TEST(Segment, SpansIndexTheSourceText) {
  const std::string text = "You qualify if you are over 65. You must apply when you retire.";
  for (const auto& e : segment_edus(text, "doc")) {
    EXPECT_EQ(text.substr(e.start, e.end - e.start), e.text);
    EXPECT_EQ(e.doc_id, "doc");
  }
}

// Reassembling EDU spans reproduces the source modulo whitespace, separator
// punctuation and bullet markers; spans are ordered and disjoint.
TEST(SegmentProperty, PartitionOverRandomTexts) {
  const std::vector<std::string> pieces = {
      "you are over 65", "if", "or", "and", "but", "unless", "when", "you live in Wales",
      "the grant", "provided that", "you have children", ".", "\n* ", "\n- ", "you must pay",
      "because you work", "tax", ";", ",", "2.", "\n1. "};
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text = "You qualify";
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) text += " " + pieces[rng() % pieces.size()];
    auto edus = segment_edus(text);
    ASSERT_FALSE(edus.empty()) << text;
    std::size_t prev_end = 0;
    std::string covered;
    for (const auto& e : edus) {
      ASSERT_LT(e.start, e.end);
      ASSERT_GE(e.start, prev_end) << text;
      // Gaps between EDUs may only hold whitespace, separators, bullets.
      for (std::size_t i = prev_end; i < e.start; ++i) {
        EXPECT_TRUE(droppable(text[i])) << "dropped '" << text[i] << "' in: " << text;
      }
      covered += e.text;
      prev_end = e.end;
    }
    for (std::size_t i = prev_end; i < text.size(); ++i) {
      EXPECT_TRUE(droppable(text[i])) << "dropped '" << text[i] << "' in: " << text;
    }
    EXPECT_LE(strip_space(covered).size(), strip_space(text).size());
  }
}

TEST(Relations, ConditionalFromGoverningClause) {
  auto rels = tag_relations(edus_of({"You qualify", "if you are over 65"}));
  ASSERT_EQ(rels.size(), 1u);
  EXPECT_EQ(rels[0].source_edu, 0);
  EXPECT_EQ(rels[0].target_edu, 1);
  EXPECT_EQ(rels[0].relation, Relation::Conditional);
}

TEST(Relations, SingleEduHasNone) {
  EXPECT_TRUE(tag_relations(edus_of({"You must pay the fee."})).empty());
}

TEST(Relations, AdjacentDefaultIsContinuation) {
  auto rels = tag_relations(edus_of({"A", "B"}));
  ASSERT_EQ(rels.size(), 1u);
  EXPECT_EQ(rels[0].relation, Relation::Continuation);
  EXPECT_EQ(rels[0].source_edu, 0);
  EXPECT_EQ(rels[0].target_edu, 1);
}

TEST(Relations, ConnectiveLexicon) {
  auto rels = tag_relations(edus_of({"You qualify", "if you are over 65", "or you are disabled",
                                     "but you must apply", "because funds are limited",
                                     "unless you moved"}));
  ASSERT_EQ(rels.size(), 5u);
  EXPECT_EQ(rels[0].relation, Relation::Conditional);
  EXPECT_EQ(rels[1].relation, Relation::Alternation);
  EXPECT_EQ(rels[1].source_edu, 1);
  EXPECT_EQ(rels[2].relation, Relation::Contrast);
  EXPECT_EQ(rels[3].relation, Relation::Explanation);
  EXPECT_EQ(rels[4].relation, Relation::Conditional);
  EXPECT_EQ(rels[4].source_edu, 4);
}

TEST(Relations, StackedConditionsShareTheGovernor) {
  auto rels = tag_relations(edus_of({"You qualify", "if you are over 65", "when you retire"}));
  ASSERT_EQ(rels.size(), 2u);
  EXPECT_EQ(rels[1].source_edu, 0);
  EXPECT_EQ(rels[1].relation, Relation::Conditional);
}

TEST(Relations, NamesRoundTrip) {
  for (std::size_t i = 0; i < kNumRelations; ++i) {
    const auto r = static_cast<Relation>(i);
    EXPECT_EQ(parse_relation(to_string(r)), r);
  }
  EXPECT_THROW(parse_relation("rhetorical-question"), std::invalid_argument);
}

// ---- Levi graph --------------------------------------------------------------------

TEST(LeviGraph, TwoEdusOneRelation) {
  auto g = build_levi_graph({doc(2, {{0, 1, Relation::Conditional}})});
  EXPECT_EQ(g.vertices.size(), 4u);
  EXPECT_EQ(g.edges.size(), 14u);
  EXPECT_EQ(g.count(EdgeType::Self), 4u);
  EXPECT_EQ(g.count(EdgeType::Global), 6u);
  for (auto t : {EdgeType::DefaultIn, EdgeType::DefaultOut, EdgeType::ReverseIn,
                 EdgeType::ReverseOut}) {
    EXPECT_EQ(g.count(t), 1u);
  }
  // a -> v -> b, and back.
  const std::size_t v = 2;
  EXPECT_EQ(g.vertices[v].kind, VertexKind::Relation);
  auto has = [&](std::size_t f, std::size_t t, EdgeType ty) {
    return std::any_of(g.edges.begin(), g.edges.end(),
                       [&](const Edge& e) { return e.from == f && e.to == t && e.type == ty; });
  };
  EXPECT_TRUE(has(0, v, EdgeType::DefaultIn));
  EXPECT_TRUE(has(v, 1, EdgeType::DefaultOut));
  EXPECT_TRUE(has(1, v, EdgeType::ReverseIn));
  EXPECT_TRUE(has(v, 0, EdgeType::ReverseOut));
  check_invariants(g);
}

TEST(LeviGraph, SingleEdu) {
  auto g = build_levi_graph({doc(1)});
  EXPECT_EQ(g.vertices.size(), 2u);
  EXPECT_EQ(g.edges.size(), 4u);
  EXPECT_EQ(g.scenario_vertex(), 1u);
  check_invariants(g);
}

TEST(LeviGraph, DocumentsShareOneScenarioVertex) {
  auto g = build_levi_graph({doc(1), doc(1)});
  EXPECT_EQ(g.vertices.size(), 3u);
  EXPECT_EQ(std::count_if(g.vertices.begin(), g.vertices.end(),
                          [](const Vertex& v) { return v.kind == VertexKind::Scenario; }),
            1);
  EXPECT_EQ(g.edu_vertices(), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(g.vertices[1].doc, 1);
}

TEST(LeviGraph, EmptyInputIsAnError) {
  EXPECT_THROW(build_levi_graph({}), std::invalid_argument);
  EXPECT_THROW(build_levi_graph({doc(0)}), std::invalid_argument);
}

namespace {

std::string random_rule(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {
      "you", "are", "if", "or", "and", "but", "unless", "when", "because", "live", "have",
      "the", "grant", ".", "\n* ", "work", "over", "65", "provided", "that", "can", "get",
      "since", "pay", "tax", ",", "!", "?"};
  std::string s = "You";
  const int n = 1 + static_cast<int>(rng() % 30);
  for (int i = 0; i < n; ++i) s += " " + words[rng() % words.size()];
  return s;
}

}  // namespace

// Fuzz: closed label sets, invariants, and connectivity through the scenario vertex.
TEST(LeviGraphProperty, RandomRulesSatisfyInvariants) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ParsedRule> docs;
    const int k = 1 + static_cast<int>(rng() % 3);
    for (int d = 0; d < k; ++d) docs.push_back(parse_rule("d" + std::to_string(d), random_rule(rng)));
    for (const auto& d : docs) {
      for (const auto& r : d.relations) {
        EXPECT_LT(static_cast<std::size_t>(r.relation), kNumRelations);
        EXPECT_NE(r.source_edu, r.target_edu);
      }
    }
    auto g = build_levi_graph(docs);
    EXPECT_NO_THROW(check_invariants(g));
    for (const auto& e : g.edges) EXPECT_LT(static_cast<std::size_t>(e.type), kNumEdgeTypes);

    std::vector<bool> reached(g.vertices.size(), false);
    std::queue<std::size_t> q;
    q.push(g.scenario_vertex());
    reached[g.scenario_vertex()] = true;
    while (!q.empty()) {
      const auto v = q.front();
      q.pop();
      for (const auto& e : g.edges) {
        if (e.from == v && e.type == EdgeType::Global && !reached[e.to]) {
          reached[e.to] = true;
          q.push(e.to);
        }
      }
    }
    EXPECT_TRUE(std::all_of(reached.begin(), reached.end(), [](bool b) { return b; }));
  }
}

// Renaming edu_ids consistently yields the same graph up to isomorphism; with
// vertices laid out by EDU position the graphs are identical.
TEST(LeviGraphProperty, EduRenamingIsEquivariant) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto base = parse_rule("d", random_rule(rng));
    std::vector<int> ids(base.edus.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i) * 7 + 100;
    std::shuffle(ids.begin(), ids.end(), rng);
    auto renamed = base;
    for (std::size_t i = 0; i < ids.size(); ++i) renamed.edus[i].edu_id = ids[i];
    for (auto& r : renamed.relations) {
      r.source_edu = ids[static_cast<std::size_t>(r.source_edu)];
      r.target_edu = ids[static_cast<std::size_t>(r.target_edu)];
    }
    auto g1 = build_levi_graph({base});
    auto g2 = build_levi_graph({renamed});
    EXPECT_EQ(to_json(g1), to_json(g2));
  }
}

TEST(ParseRule, JsonCarriesEdusAndRelations) {
  auto j = to_json(parse_rule("r1", "You qualify if you are over 65"));
  EXPECT_EQ(j["doc_id"], "r1");
  EXPECT_EQ(j["edus"].size(), 2u);
  EXPECT_EQ(j["relations"][0]["relation"], "conditional");
}
