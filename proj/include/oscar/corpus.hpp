#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

/// Class indices are fixed: they appear in checkpoints and reports.
enum class Decision : int { Yes = 0, No = 1, Inquire = 2, Irrelevant = 3 };
inline constexpr int kNumDecisions = 4;

enum class Answer { Yes, No };

std::string_view to_string(Decision d);
std::string_view to_string(Answer a);
Decision parse_decision(std::string_view s);
Answer parse_answer(std::string_view s);

struct RuleDocument {
  std::string doc_id;
  std::string title;
  std::string text;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved
};

struct HistoryTurn {
  std::string follow_up_question;
  Answer follow_up_answer = Answer::Yes;
};

struct DialogueExample {
  std::string utterance_id;
  std::string tree_id;
  std::string gold_doc_id;
  std::string question;
  std::string scenario;
  std::vector<HistoryTurn> history;
  std::vector<std::string> evidence;
  Decision decision = Decision::Irrelevant;
  std::optional<std::string> gold_follow_up;
  nlohmann::json extra = nlohmann::json::object();
};

struct CorpusSplit {
  std::vector<DialogueExample> train;
  std::vector<DialogueExample> dev;
  std::vector<DialogueExample> test;
  std::set<std::string> seen_doc_ids;  // gold docs occurring in train

  /// Recomputes seen_doc_ids from train.
  void refresh_seen();
};

struct Corpus {
  std::vector<RuleDocument> rules;
  CorpusSplit split;

  const RuleDocument& rule(const std::string& doc_id) const;
  std::size_t rule_index(const std::string& doc_id) const;
  void reindex();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Raised for malformed input; `line()` is 1-based, 0 when not line-specific.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// ---- JSON mapping (strict writer, tolerant reader) ---------------------------------

nlohmann::json to_json(const RuleDocument& r);
nlohmann::json to_json(const DialogueExample& e);
RuleDocument rule_from_json(const nlohmann::json& j);
DialogueExample example_from_json(const nlohmann::json& j);

std::vector<RuleDocument> read_rules(std::istream& in);
/// Each line may carry a "split" field ("train"|"dev"|"test"); `default_split`
/// applies when it is absent.
CorpusSplit read_examples(std::istream& in, std::string_view default_split = "train");
void write_rules(std::ostream& out, const std::vector<RuleDocument>& rules);
/// Writes every example with its "split" field.
void write_examples(std::ostream& out, const CorpusSplit& split);

/// Loads rules.jsonl and examples.jsonl and validates every invariant.
Corpus load_corpus(const std::filesystem::path& rules_path,
                   const std::filesystem::path& examples_path);
/// Variant for one file per split (the layout the public data ships in).
Corpus load_corpus(const std::filesystem::path& rules_path, const std::filesystem::path& train,
                   const std::filesystem::path& dev, const std::filesystem::path& test);
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);

void validate(const Corpus& corpus);

struct SeenUnseen {
  std::vector<DialogueExample> seen;
  std::vector<DialogueExample> unseen;
};

SeenUnseen partition_seen_unseen(const std::vector<DialogueExample>& eval,
                                 const std::set<std::string>& seen_doc_ids);

// ---- synthetic oracle corpora ------------------------------------------------------

struct SyntheticOptions {
  std::size_t n_rules = 20;
  std::size_t n_train = 70;
  std::size_t n_dev = 15;
  std::size_t n_test = 15;
  /// Fraction of rules held out of training (dev/test "unseen" docs).
  double unseen_rule_fraction = 0.3;
  /// Fraction of dev/test examples asked about unseen rules.
  double unseen_example_fraction = 0.5;
  double irrelevant_fraction = 0.15;
};

/// Rules are "You can get the <title> if C1 [and|or C2 ...]." with 1..4 atomic
/// conditions. Every example's decision is computed from the rule logic and the
/// facts placed in its scenario and history; the ground truth is kept in the
/// example's extra["synthetic"] and the rule's extra["synthetic"]. Output is a
/// pure function of (seed, options).
Corpus generate_synthetic_corpus(std::uint64_t seed, const SyntheticOptions& options);
/// n_examples are divided 70/15/15 over train/dev/test.
Corpus generate_synthetic_corpus(std::uint64_t seed, std::size_t n_rules, std::size_t n_examples);

}  // namespace oscar
