#include "oscar/dialogue.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>

namespace oscar {

nlohmann::json to_json(const Transcript& t) {
  nlohmann::json turns = nlohmann::json::array();
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    const auto& turn = t.turns[i];
    nlohmann::json j = {{"turn", i + 1},
                        {"decision", std::string(to_string(turn.decision))},
                        {"probabilities", nlohmann::json::object()},
                        {"retrieved", turn.retrieved}};
    for (int c = 0; c < kNumDecisions; ++c) {
      j["probabilities"][std::string(to_string(static_cast<Decision>(c)))] =
          turn.probabilities[static_cast<std::size_t>(c)];
    }
    if (turn.follow_up) j["follow_up"] = *turn.follow_up;
    if (turn.answer) j["answer"] = std::string(to_string(*turn.answer));
    turns.push_back(std::move(j));
  }
  return {{"question", t.question}, {"scenario", t.scenario}, {"turns", turns}, {"ended_by", t.ended_by}};
}

Transcript transcript_from_json(const nlohmann::json& j) {
  Transcript t;
  t.question = j.at("question").get<std::string>();
  t.scenario = j.at("scenario").get<std::string>();
  t.ended_by = j.value("ended_by", "");
  for (const auto& tj : j.at("turns")) {
    DialogueTurn turn;
    turn.decision = parse_decision(tj.at("decision").get<std::string>());
    if (tj.contains("probabilities")) {
      for (int c = 0; c < kNumDecisions; ++c) {
        turn.probabilities[static_cast<std::size_t>(c)] =
            tj.at("probabilities").value(std::string(to_string(static_cast<Decision>(c))), 0.0);
      }
    }
    turn.retrieved = tj.value("retrieved", std::vector<std::string>{});
    if (tj.contains("follow_up")) turn.follow_up = tj.at("follow_up").get<std::string>();
    if (tj.contains("answer")) turn.answer = parse_answer(tj.at("answer").get<std::string>());
    t.turns.push_back(std::move(turn));
  }
  return t;
}

std::vector<DialogueExample> replay_examples(const Transcript& t) {
  std::vector<DialogueExample> out;
  std::vector<HistoryTurn> history;
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    DialogueExample e;
    e.utterance_id = "dialogue-" + std::to_string(i + 1);
    e.question = t.question;
    e.scenario = t.scenario;
    e.history = history;
    out.push_back(std::move(e));
    const auto& turn = t.turns[i];
    if (turn.follow_up && turn.answer) history.push_back({*turn.follow_up, *turn.answer});
  }
  return out;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// false on end of input
bool read_line(std::istream& in, std::ostream& out, std::string_view prompt, std::string& line) {
  out << prompt << std::flush;
  if (!std::getline(in, line)) return false;
  line = trim(line);
  return true;
}

}  // namespace

Transcript run_dialogue(const Predictor& predict, std::istream& in, std::ostream& out,
                        const DialogueOptions& options) {
  Transcript t;
  std::string line;
  if (!read_line(in, out, "question> ", line)) return t.ended_by = "eof", t;
  if (lower(line) == "exit") return t.ended_by = "user", t;
  t.question = line;
  if (!read_line(in, out, "scenario> ", line)) return t = {}, t.ended_by = "eof", t;
  if (lower(line) == "exit") return t = {}, t.ended_by = "user", t;
  t.scenario = line;

  std::vector<HistoryTurn> history;
  while (t.turns.size() < options.max_turns) {
    DialogueExample e;
    e.utterance_id = "dialogue-" + std::to_string(t.turns.size() + 1);
    e.question = t.question;
    e.scenario = t.scenario;
    e.history = history;
    const Prediction p = predict(e);

    DialogueTurn turn;
    turn.decision = p.decision;
    turn.probabilities = p.probabilities;
    turn.retrieved = p.retrieved;
    out << "decision: " << to_string(p.decision) << '\n';
    if (p.decision != Decision::Inquire) {
      t.turns.push_back(std::move(turn));
      t.ended_by = "decision";
      return t;
    }
    turn.follow_up = p.question.value_or("");
    out << "follow-up: " << *turn.follow_up << '\n';
    for (;;) {
      if (!read_line(in, out, "answer [yes/no/exit]> ", line)) {
        t.turns.push_back(std::move(turn));
        t.ended_by = "eof";
        return t;
      }
      const std::string reply = lower(line);
      if (reply == "yes" || reply == "no") {
        turn.answer = parse_answer(reply);
        break;
      }
      if (reply == "exit") {
        t.turns.push_back(std::move(turn));
        t.ended_by = "user";
        return t;
      }
      out << "please answer yes, no or exit\n";
    }
    history.push_back({*turn.follow_up, *turn.answer});
    t.turns.push_back(std::move(turn));
  }
  t.ended_by = "turn-limit";
  return t;
}

}  // namespace oscar
