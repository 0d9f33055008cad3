#pragma once

#include "oscar/corpus.hpp"
#include "oscar/decision.hpp"
#include "oscar/discourse.hpp"
#include "oscar/encoder.hpp"
#include "oscar/generation.hpp"
#include "oscar/params.hpp"
#include "oscar/retrieval.hpp"
#include "oscar/text.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

enum class BleuAggregation { SentenceMean, Corpus };
std::string_view to_string(BleuAggregation a);
BleuAggregation parse_bleu_aggregation(std::string_view s);

/// Everything a run needs. Optimizer values default to the full-scale
/// recipe; model sizes default to desk scale.
struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double clip_norm = 2.0;
  double lambda_entail = 3.0;
  std::size_t beam_size = 10;
  std::size_t hidden_dim = 64;
  std::size_t k_retrieved = 5;
  std::uint64_t seed = 13;
  FusionStrategy fusion = FusionStrategy::GatedAttention;

  RetrievalMethod retrieval = RetrievalMethod::TfIdf;
  double hybrid_weight = 1.0;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn = 128;
  std::size_t max_len = 256;
  std::size_t rgcn_layers = 2;
  std::size_t max_question_len = 24;
  std::size_t max_span = 30;
  bool static_logits = false;
  double entail_threshold = 0.6;
  BleuAggregation bleu_aggregation = BleuAggregation::SentenceMean;

  bool operator==(const TrainConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Field names of TrainConfig, in declaration order.
const std::vector<std::string>& config_keys();
/// Sets one field from its text form. Unknown keys and bad values throw ConfigError.
void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);
/// "key = value" lines; blank lines and lines starting with '#' are skipped.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
/// ConfigError naming the path when it cannot be opened.
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
/// Throws ConfigError unless every size and rate is positive (epochs may be 0).
void validate(const TrainConfig& cfg);
std::string to_config_text(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
ModelConfig model_config(const TrainConfig& cfg);

/// Rule text plus train-split questions, scenarios and follow-ups.
Vocabulary build_vocabulary(const Corpus& corpus);

/// Parameters plus the config and vocabulary they were built for.
struct Model {
  TrainConfig config;
  Vocabulary vocab;
  ParameterStore params;
  std::size_t epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();

  static Model initialize(const TrainConfig& config, Vocabulary vocab);
  ModelConfig model_config() const { return oscar::model_config(config); }

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
};

/// Leading name component ("enc", "graph", "decision", ...).
std::string parameter_group(const std::string& name);

/// One example after retrieval and serialization, with every label the
/// losses need. Labels are empty or unset when the gold data lacks them.
struct PreparedExample {
  const DialogueExample* example = nullptr;
  RankedList retrieved;
  SerializedInput input;
  /// One per EDU row (doc-major over input.kept); only the gold document's
  /// conditions are labelled, the rest are kUnlabeled.
  std::vector<int> entailment_labels;
  std::optional<GoldSpan> gold_span;            // gold Inquire only
  std::vector<std::size_t> question_ids;        // gold follow-up tokens
  bool gold_doc_retrieved = false;
};

struct LossParts {
  Tensor total;          // L_d + L_g + L_span
  double decision = 0;   // L_decision
  double entail = 0;     // L_entail
  double generation = 0; // L_g
  double span = 0;       // L_span
  Decision predicted = Decision::Irrelevant;
};

/// L = L_d + L_g, with L_g absent (0) when there is no gold-Inquire example.
Tensor joint_loss(const Tensor& l_d, const std::optional<Tensor>& l_g);

struct ConditionOutput {
  std::string doc_id;
  std::string text;
  std::array<double, 3> entailment{};  // softmax over Entailment/Contradiction/Unmentioned
  double attention = 0;
};

struct SpanOutput {
  std::string doc_id;
  std::size_t rank = 0, start = 0, end = 0;
  std::string text;
};

struct BeamEntry {
  std::string text;
  double score = 0;
};

struct Prediction {
  std::string utterance_id;
  Decision decision = Decision::Irrelevant;
  std::array<double, 4> probabilities{};
  std::vector<std::string> retrieved;
  std::vector<ConditionOutput> conditions;
  std::optional<SpanOutput> span;
  std::optional<std::string> question;
  std::vector<BeamEntry> beam;
};
nlohmann::json to_json(const Prediction& p);

struct PredictOptions {
  /// Generate even when the decision is not Inquire (question-quality metrics).
  bool force_question = false;
  /// Feed the labelled gold span to the generator instead of the predicted one.
  bool gold_span = false;
};

/// Orchestrates retrieval, serialization, encoding, decision and generation
/// for a model over a corpus. Retrieval is frozen.
class Pipeline {
 public:
  Pipeline(const Corpus& corpus, const Retriever& retriever, Model& model);

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const Retriever& retriever() const { return retriever_; }
  const Corpus& corpus() const { return corpus_; }
  const ParsedRule& parsed(const std::string& doc_id) const;

  PreparedExample prepare(const DialogueExample& example) const;
  LossParts loss(const PreparedExample& prepared) const;
  Prediction predict(const PreparedExample& prepared, const PredictOptions& options = {}) const;
  Prediction predict(const DialogueExample& example, const PredictOptions& options = {}) const;

 private:
  const Corpus& corpus_;
  const Retriever& retriever_;
  Model& model_;
  std::map<std::string, ParsedRule> parsed_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0, decision = 0, entail = 0, generation = 0, span = 0;
  double train_micro = 0;  // running accuracy of the decision head, in percent
  double grad_norm = 0;    // mean pre-clip global norm
  std::size_t steps = 0;
};
nlohmann::json to_json(const EpochMetrics& m);

/// Non-finite loss or gradient; the message carries epoch, batch and example ids.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, nlohmann::json diagnostics);
  const nlohmann::json& diagnostics() const { return diagnostics_; }

 private:
  nlohmann::json diagnostics_;
};

struct TrainOptions {
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Checked after on_epoch; true ends training early.
  std::function<bool(const EpochMetrics&)> stop;
};

/// Shuffled mini-batches (seeded), loss averaged over the batch, global
/// gradient clipping, Adam. Updates the pipeline's model in place and
/// returns one entry per epoch.
std::vector<EpochMetrics> train(Pipeline& pipeline, const std::vector<DialogueExample>& examples,
                                const TrainOptions& options = {});

}  // namespace oscar
