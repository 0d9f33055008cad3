#pragma once

#include "oscar/corpus.hpp"
#include "oscar/pipeline.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

struct DialogueTurn {
  Decision decision = Decision::Irrelevant;
  std::array<double, 4> probabilities{};
  std::vector<std::string> retrieved;
  std::optional<std::string> follow_up;  // Inquire only
  std::optional<Answer> answer;          // the user's reply to follow_up
};

struct Transcript {
  std::string question;
  std::string scenario;
  std::vector<DialogueTurn> turns;
  /// "decision", "user" (typed exit), "eof" or "turn-limit".
  std::string ended_by;
};

nlohmann::json to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& j);

/// The example the model saw at each turn: same question and scenario, with
/// every earlier follow-up and answer as history.
std::vector<DialogueExample> replay_examples(const Transcript& t);

using Predictor = std::function<Prediction(const DialogueExample&)>;

struct DialogueOptions {
  std::size_t max_turns = 20;
};

/// Line-oriented session: reads a question line and a scenario line, then
/// alternates model turns with yes/no replies until the model answers
/// Yes/No/Irrelevant or the user types "exit" (or input ends). Replies other
/// than yes/no/exit are re-prompted. Prompts and model output go to `out`.
Transcript run_dialogue(const Predictor& predict, std::istream& in, std::ostream& out,
                        const DialogueOptions& options = {});

}  // namespace oscar
