#include "oscar/discourse.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace oscar {

namespace {

constexpr std::array<std::string_view, kNumRelations> kRelationNames = {
    "comment",      "clarification-question", "elaboration",  "acknowledgment",
    "continuation", "explanation",            "conditional",  "question-answer",
    "alternation",  "question-elaboration",   "result",       "background",
    "narration",    "correction",             "parallel",     "contrast"};

constexpr std::array<std::string_view, kNumEdgeTypes> kEdgeNames = {
    "default-in", "default-out", "reverse-in", "reverse-out", "self", "global"};

// Forms of common verbs found in eligibility rules, plus auxiliaries and modals.
const std::set<std::string_view> kVerbs = {
    "is", "are", "am", "be", "been", "being", "was", "were", "isn", "aren", "wasn", "weren",
    "have", "has", "had", "having", "haven", "hasn",
    "do", "does", "did", "don", "doesn", "didn",
    "can", "could", "must", "may", "might", "shall", "should", "will", "would", "cannot",
    "won", "wouldn", "shouldn", "couldn", "mustn", "need", "needs", "needed",
    "qualify", "qualifies", "qualified", "get", "gets", "got", "getting",
    "pay", "pays", "paid", "apply", "applies", "applied", "claim", "claims", "claimed",
    "live", "lives", "lived", "living", "own", "owns", "owned", "work", "works", "worked",
    "receive", "receives", "received", "care", "cares", "cared", "earn", "earns", "earned",
    "study", "studies", "studied", "rent", "rents", "rented", "serve", "serves", "served",
    "travel", "travels", "travelled", "look", "looks", "looked", "run", "runs", "ran",
    "hold", "holds", "held", "attend", "attends", "attended", "support", "supports",
    "supported", "make", "makes", "made", "give", "gives", "gave", "take", "takes", "took",
    "send", "sends", "sent", "use", "uses", "used", "meet", "meets", "met", "help", "helps",
    "include", "includes", "included", "continue", "continues", "stop", "stops", "stopped",
    "start", "starts", "started", "change", "changes", "changed", "move", "moves", "moved",
    "buy", "buys", "bought", "sell", "sells", "sold", "register", "registers", "registered",
    "report", "reports", "reported", "contact", "contacts", "tell", "tells", "told",
    "employ", "employs", "employed", "agree", "agrees", "agreed", "allow", "allows",
    "allowed", "provide", "provides", "exceed", "exceeds", "reach", "reaches", "reached",
    "become", "becomes", "became", "leave", "leaves", "left", "go", "goes", "went",
    "come", "comes", "came", "want", "wants", "wanted", "see", "sees", "saw", "know",
    "knows", "knew", "think", "say", "says", "said", "find", "finds", "found", "keep",
    "keeps", "kept", "let", "lets", "put", "puts", "set", "sets", "show", "shows", "call",
    "calls", "try", "tries", "ask", "asks", "asked", "born", "married", "separated",
    "divorced", "widowed", "aged", "entitled", "eligible"};

const std::set<std::string_view> kSplitConnectives = {"if", "unless", "when", "or", "and", "but"};
const std::set<std::string_view> kSubordinators = {"if", "unless", "when", "provided"};

struct Word {
  std::size_t start, end;
  std::string lower;
};

bool word_byte(char ch) {
  const auto c = static_cast<unsigned char>(ch);
  return std::isalnum(c) || c >= 0x80;
}

std::vector<Word> words_in(std::string_view text, std::size_t b, std::size_t e) {
  std::vector<Word> out;
  std::size_t i = b;
  while (i < e) {
    if (!word_byte(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string lower;
    while (j < e && word_byte(text[j])) {
      lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
      ++j;
    }
    out.push_back({i, j, std::move(lower)});
    i = j;
  }
  return out;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Strips a leading bullet marker ("*", "-", "•", "1." or "1)") and returns the
// position after it.
std::size_t skip_bullet(std::string_view text, std::size_t b, std::size_t e) {
  while (b < e && is_space(text[b])) ++b;
  if (b >= e) return b;
  if (text[b] == '*' || text[b] == '-') return b + 1;
  if (text.substr(b, 3) == "\xE2\x80\xA2") return b + 3;
  std::size_t d = b;
  while (d < e && std::isdigit(static_cast<unsigned char>(text[d]))) ++d;
  if (d > b && d < e && (text[d] == '.' || text[d] == ')') && d + 1 < e && is_space(text[d + 1])) {
    return d + 1;
  }
  return b;
}

struct Segment {
  std::size_t start, end;
};

void push_trimmed(std::vector<Segment>& out, std::string_view text, std::size_t b, std::size_t e,
                  bool strip_trailing_punct) {
  while (b < e && is_space(text[b])) ++b;
  while (e > b && (is_space(text[e - 1]) ||
                   (strip_trailing_punct && (text[e - 1] == ',' || text[e - 1] == ';')))) {
    --e;
  }
  if (e > b) out.push_back({b, e});
}

bool has_verb(const std::vector<Word>& words, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i) {
    if (is_verb_like(words[i].lower)) return true;
  }
  return false;
}

// Connective splits inside one sentence.
void split_sentence(std::string_view text, std::size_t b, std::size_t e,
                    std::vector<Segment>& out) {
  const auto words = words_in(text, b, e);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i < words.size(); ++i) {
    const auto& w = words[i].lower;
    if (kSplitConnectives.contains(w) ||
        (w == "provided" && i + 1 < words.size() && words[i + 1].lower == "that")) {
      candidates.push_back(i);
    }
  }
  std::size_t seg_word = 0;
  std::size_t seg_start = b;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const std::size_t at = candidates[c];
    const std::size_t right_end = c + 1 < candidates.size() ? candidates[c + 1] : words.size();
    const std::size_t skip = words[at].lower == "provided" ? 2 : 1;
    if (has_verb(words, seg_word, at) && has_verb(words, at + skip, right_end)) {
      push_trimmed(out, text, seg_start, words[at].start, true);
      seg_start = words[at].start;
      seg_word = at;
    }
  }
  push_trimmed(out, text, seg_start, e, false);
}

std::string first_word(const Edu& edu) {
  auto w = words_in(edu.text, 0, edu.text.size());
  return w.empty() ? std::string() : w.front().lower;
}

}  // namespace

std::string_view to_string(Relation r) { return kRelationNames.at(static_cast<std::size_t>(r)); }

Relation parse_relation(std::string_view s) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i) {
    if (kRelationNames[i] == s) return static_cast<Relation>(i);
  }
  throw std::invalid_argument("unknown discourse relation \"" + std::string(s) + "\"");
}

std::string_view to_string(EdgeType t) { return kEdgeNames.at(static_cast<std::size_t>(t)); }

bool is_verb_like(std::string_view word) { return kVerbs.contains(word); }

std::vector<Edu> segment_edus(std::string_view text, const std::string& doc_id) {
  std::vector<Segment> segments;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    std::size_t s = skip_bullet(text, line_start, line_end);
    // Sentence ends: . ? ! followed by whitespace or the end of the line.
    for (std::size_t i = s; i < line_end; ++i) {
      const char c = text[i];
      if ((c == '.' || c == '?' || c == '!') && (i + 1 == line_end || is_space(text[i + 1]))) {
        split_sentence(text, s, i + 1, segments);
        s = i + 1;
      }
    }
    if (s < line_end) split_sentence(text, s, line_end, segments);
    line_start = line_end + 1;
  }

  std::vector<Edu> edus;
  for (const auto& seg : segments) {
    Edu e;
    e.edu_id = static_cast<int>(edus.size());
    e.doc_id = doc_id;
    e.start = seg.start;
    e.end = seg.end;
    e.text = std::string(text.substr(seg.start, seg.end - seg.start));
    edus.push_back(std::move(e));
  }
  return edus;
}

std::vector<DiscourseRelation> tag_relations(const std::vector<Edu>& edus) {
  std::vector<DiscourseRelation> out;
  std::vector<std::string> heads;
  for (const auto& e : edus) heads.push_back(first_word(e));
  for (std::size_t i = 1; i < edus.size(); ++i) {
    const auto& w = heads[i];
    const int prev = edus[i - 1].edu_id;
    const int self = edus[i].edu_id;
    if (kSubordinators.contains(w)) {
      std::size_t gov = i - 1;
      for (std::size_t j = i; j-- > 0;) {
        if (!kSubordinators.contains(heads[j])) {
          gov = j;
          break;
        }
      }
      out.push_back({edus[gov].edu_id, self, Relation::Conditional});
    } else if (w == "or") {
      out.push_back({prev, self, Relation::Alternation});
    } else if (w == "but") {
      out.push_back({prev, self, Relation::Contrast});
    } else if (w == "because" || w == "since") {
      out.push_back({prev, self, Relation::Explanation});
    } else {
      out.push_back({prev, self, Relation::Continuation});
    }
  }
  return out;
}

ParsedRule parse_rule(const std::string& doc_id, std::string_view text) {
  ParsedRule r;
  r.doc_id = doc_id;
  r.edus = segment_edus(text, doc_id);
  r.relations = tag_relations(r.edus);
  return r;
}

// ---- Levi graph -------------------------------------------------------------------

std::vector<std::size_t> LeviGraph::edu_vertices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    if (vertices[i].kind == VertexKind::Edu) out.push_back(i);
  }
  return out;
}

std::size_t LeviGraph::count(EdgeType t) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [t](const Edge& e) { return e.type == t; }));
}

LeviGraph build_levi_graph(const std::vector<ParsedRule>& docs) {
  if (docs.empty()) throw std::invalid_argument("build_levi_graph: no documents");
  LeviGraph g;
  std::vector<std::pair<std::size_t, std::size_t>> relation_vertices;  // (vertex, relation idx)
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = docs[d];
    if (doc.edus.empty()) {
      throw std::invalid_argument("build_levi_graph: document \"" + doc.doc_id + "\" has no EDUs");
    }
    std::vector<std::size_t> vertex_of(doc.edus.size());
    auto position = [&](int edu_id) {
      for (std::size_t i = 0; i < doc.edus.size(); ++i) {
        if (doc.edus[i].edu_id == edu_id) return i;
      }
      throw std::invalid_argument("relation references unknown EDU " + std::to_string(edu_id));
    };
    for (std::size_t i = 0; i < doc.edus.size(); ++i) {
      vertex_of[i] = g.vertices.size();
      g.vertices.push_back({VertexKind::Edu, static_cast<int>(d), static_cast<int>(i)});
    }
    for (const auto& rel : doc.relations) {
      const std::size_t a = vertex_of[position(rel.source_edu)];
      const std::size_t b = vertex_of[position(rel.target_edu)];
      const std::size_t v = g.vertices.size();
      g.vertices.push_back({VertexKind::Relation, static_cast<int>(d), -1, rel.relation});
      g.edges.push_back({a, v, EdgeType::DefaultIn});
      g.edges.push_back({v, b, EdgeType::DefaultOut});
      g.edges.push_back({b, v, EdgeType::ReverseIn});
      g.edges.push_back({v, a, EdgeType::ReverseOut});
    }
  }
  const std::size_t scenario = g.vertices.size();
  g.vertices.push_back({VertexKind::Scenario});
  for (std::size_t v = 0; v < g.vertices.size(); ++v) g.edges.push_back({v, v, EdgeType::Self});
  for (std::size_t v = 0; v < scenario; ++v) {
    g.edges.push_back({scenario, v, EdgeType::Global});
    g.edges.push_back({v, scenario, EdgeType::Global});
  }
  return g;
}

void check_invariants(const LeviGraph& g) {
  const auto n_scenario = std::count_if(g.vertices.begin(), g.vertices.end(), [](const Vertex& v) {
    return v.kind == VertexKind::Scenario;
  });
  if (n_scenario != 1) throw std::logic_error("graph must have exactly one scenario vertex");
  std::vector<int> self(g.vertices.size(), 0), din(g.vertices.size(), 0), dout(g.vertices.size(), 0);
  for (const auto& e : g.edges) {
    if (e.from >= g.vertices.size() || e.to >= g.vertices.size()) {
      throw std::logic_error("edge endpoint out of range");
    }
    if (static_cast<std::size_t>(e.type) >= kNumEdgeTypes) throw std::logic_error("bad edge type");
    if (e.type == EdgeType::Self) {
      if (e.from != e.to) throw std::logic_error("self edge between distinct vertices");
      ++self[e.from];
    }
    if (e.type == EdgeType::DefaultIn) ++din[e.to];
    if (e.type == EdgeType::DefaultOut) ++dout[e.from];
  }
  for (std::size_t v = 0; v < g.vertices.size(); ++v) {
    if (self[v] != 1) throw std::logic_error("vertex " + std::to_string(v) + " needs one self edge");
    if (g.vertices[v].kind == VertexKind::Relation && (din[v] < 1 || dout[v] < 1)) {
      throw std::logic_error("relation vertex " + std::to_string(v) + " lacks default edges");
    }
  }
}

nlohmann::json to_json(const ParsedRule& r) {
  nlohmann::json edus = nlohmann::json::array();
  for (const auto& e : r.edus) {
    edus.push_back({{"edu_id", e.edu_id}, {"text", e.text}, {"span", {e.start, e.end}}});
  }
  nlohmann::json rels = nlohmann::json::array();
  for (const auto& rel : r.relations) {
    rels.push_back({{"source", rel.source_edu},
                    {"target", rel.target_edu},
                    {"relation", to_string(rel.relation)}});
  }
  return {{"doc_id", r.doc_id}, {"edus", edus}, {"relations", rels}};
}

nlohmann::json to_json(const LeviGraph& g) {
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : g.vertices) {
    switch (v.kind) {
      case VertexKind::Edu: vs.push_back({{"kind", "edu"}, {"doc", v.doc}, {"edu", v.edu}}); break;
      case VertexKind::Relation:
        vs.push_back({{"kind", "relation"}, {"doc", v.doc}, {"relation", to_string(v.relation)}});
        break;
      case VertexKind::Scenario: vs.push_back({{"kind", "scenario"}}); break;
    }
  }
  nlohmann::json es = nlohmann::json::array();
  for (const auto& e : g.edges) es.push_back({e.from, e.to, to_string(e.type)});
  return {{"vertices", vs}, {"edges", es}};
}

}  // namespace oscar
