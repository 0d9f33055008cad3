#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

/// Elementary discourse unit: a clause-like slice of one rule text.
struct Edu {
  int edu_id = 0;
  std::string doc_id;
  std::string text;
  std::size_t start = 0;  // byte offsets into the rule text, [start, end)
  std::size_t end = 0;
};

/// The closed 16-label STAC inventory.
enum class Relation : int {
  Comment,
  ClarificationQuestion,
  Elaboration,
  Acknowledgment,
  Continuation,
  Explanation,
  Conditional,
  QuestionAnswer,
  Alternation,
  QuestionElaboration,
  Result,
  Background,
  Narration,
  Correction,
  Parallel,
  Contrast,
};
inline constexpr std::size_t kNumRelations = 16;

std::string_view to_string(Relation r);
Relation parse_relation(std::string_view s);

struct DiscourseRelation {
  int source_edu = 0;
  int target_edu = 0;
  Relation relation = Relation::Continuation;
};

/// One rule document after segmentation and tagging.
struct ParsedRule {
  std::string doc_id;
  std::vector<Edu> edus;
  std::vector<DiscourseRelation> relations;
};

/// Splits at line breaks (with bullet markers stripped), sentence ends, and
/// before the connectives if / unless / when / or / and / but / "provided
/// that" when the clauses on both sides contain a verb-like token.
/// Never returns an empty list for non-blank text.
std::vector<Edu> segment_edus(std::string_view rule_text, const std::string& doc_id = {});

/// Heuristic tagger: "if/unless/when/provided" clauses get Conditional from the
/// nearest preceding non-subordinate EDU; "or" Alternation, "but" Contrast,
/// "because/since" Explanation from the previous EDU; other adjacent pairs
/// Continuation.
std::vector<DiscourseRelation> tag_relations(const std::vector<Edu>& edus);

ParsedRule parse_rule(const std::string& doc_id, std::string_view text);

/// Whether `word` (lowercase) counts as a verb for segmentation.
bool is_verb_like(std::string_view word);

// ---- Levi graph ----------------------------------------------------------------------

enum class EdgeType : int { DefaultIn, DefaultOut, ReverseIn, ReverseOut, Self, Global };
inline constexpr std::size_t kNumEdgeTypes = 6;
std::string_view to_string(EdgeType t);

enum class VertexKind { Edu, Relation, Scenario };

struct Vertex {
  VertexKind kind = VertexKind::Edu;
  int doc = -1;    // index into the input documents (Edu and Relation)
  int edu = -1;    // position within the document's EDU list (Edu only)
  Relation relation = Relation::Continuation;  // (Relation only)
};

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  EdgeType type = EdgeType::Self;
};

/// Vertices are laid out document by document (EDUs then relation vertices),
/// with the single scenario vertex last. Messages flow along edges from
/// `from` to `to`.
struct LeviGraph {
  std::vector<Vertex> vertices;
  std::vector<Edge> edges;

  std::size_t scenario_vertex() const { return vertices.size() - 1; }
  /// Indices of the EDU vertices in vertex order.
  std::vector<std::size_t> edu_vertices() const;
  std::size_t count(EdgeType t) const;
};

/// Throws std::invalid_argument on empty input or a document without EDUs.
LeviGraph build_levi_graph(const std::vector<ParsedRule>& docs);

/// Throws std::logic_error naming the first violated invariant.
void check_invariants(const LeviGraph& g);

nlohmann::json to_json(const ParsedRule& r);
nlohmann::json to_json(const LeviGraph& g);

}  // namespace oscar
