#pragma once

#include "oscar/corpus.hpp"
#include "oscar/params.hpp"
#include "oscar/text.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace oscar {

/// question ++ " " ++ scenario, verbatim.
std::string build_query(const DialogueExample& example);

/// The text a rule document is indexed under: title and body.
std::string document_text(const RuleDocument& doc);

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
  bool operator==(const ScoredDoc&) const = default;
};

/// Scores non-increasing, ties by doc_id ascending.
using RankedList = std::vector<ScoredDoc>;

enum class RetrievalMethod { TfIdf, Dense, Hybrid };
std::string_view to_string(RetrievalMethod m);
RetrievalMethod parse_retrieval_method(std::string_view s);

/// Sorts (doc index, score) pairs into a RankedList of at most k entries.
RankedList rank(const std::vector<std::string>& doc_ids, const std::vector<double>& scores,
                std::size_t k);

class TfIdfIndex {
 public:
  struct Posting {
    std::size_t doc;
    std::size_t count;
  };

  static TfIdfIndex build(const std::vector<RuleDocument>& docs);

  std::size_t n_docs() const { return doc_ids_.size(); }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  std::optional<std::size_t> term_id(const std::string& term) const;
  std::size_t doc_freq(std::size_t term) const { return doc_freq_.at(term); }
  const std::vector<Posting>& postings(std::size_t term) const { return postings_.at(term); }
  double doc_norm(std::size_t doc) const { return doc_norms_.at(doc); }
  /// ln((1 + n_docs) / (1 + df)) + 1
  double idf(std::size_t term) const;

  /// sum over query terms t of qtf(t) * tf(t, doc) * idf(t), divided by the
  /// L2 norm of the document's tf*idf vector. Unknown terms contribute 0.
  double score(std::string_view query, const std::string& doc_id) const;
  /// Scores of every document, in index order.
  std::vector<double> scores(std::string_view query) const;
  RankedList retrieve(std::string_view query, std::size_t k) const;

  nlohmann::json to_json() const;
  static TfIdfIndex from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> doc_ids_;
  std::map<std::string, std::size_t> vocabulary_;
  std::vector<std::size_t> doc_freq_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<double> doc_norms_;
  std::map<std::string, std::size_t> doc_index_;
};

struct DenseConfig {
  std::size_t dim = 64;
  std::size_t epochs = 30;
  double learning_rate = 5e-3;
  std::size_t hard_negatives = 3;
  std::size_t batch_size = 16;
  /// Also score each query against the other documents in its batch.
  bool in_batch_negatives = true;
  std::uint64_t seed = 13;
};

/// Dual encoder: each tower is a mean of token embeddings (shared table)
/// followed by two feed-forward layers. Document vectors are cached.
class DenseIndex {
 public:
  DenseIndex() = default;
  DenseIndex(Vocabulary vocab, const DenseConfig& config);

  std::size_t dim() const { return config_.dim; }
  const DenseConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  Tensor encode_query(std::string_view text) const;
  Tensor encode_document(std::string_view text) const;

  /// Re-encodes and caches every document vector.
  void index(const std::vector<RuleDocument>& docs);
  void set_doc_vector(const std::string& doc_id, std::vector<double> v);
  const std::vector<double>& doc_vector(const std::string& doc_id) const;
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }

  /// dot(encode_query(query), doc_vector(doc_id)); unknown doc_id throws.
  double score(std::string_view query, const std::string& doc_id) const;
  std::vector<double> scores(std::string_view query) const;
  RankedList retrieve(std::string_view query, std::size_t k) const;

  nlohmann::json to_json() const;
  static DenseIndex from_json(const nlohmann::json& j);

 private:
  Tensor tower(const std::string& prefix, std::string_view text) const;

  Vocabulary vocab_;
  DenseConfig config_;
  ParameterStore params_;
  std::vector<std::string> doc_ids_;
  std::map<std::string, std::size_t> doc_index_;
  std::vector<std::vector<double>> doc_vectors_;
};

/// -log softmax(scores)[0] for a 1 x n row whose first entry is the positive.
Tensor contrastive_loss(const Tensor& scores);

struct DenseTrainLog {
  std::vector<double> epoch_loss;  // mean loss per epoch
};

/// Contrastive training with TF-IDF hard negatives (top-ranked non-gold docs).
/// Throws CorpusError when no training example names a gold document.
DenseIndex train_dense(const Corpus& corpus, const TfIdfIndex& tfidf, const DenseConfig& config,
                       DenseTrainLog* log = nullptr);

/// s_tfidf + weight * s_dense.
inline double combine_scores(double s_tfidf, double s_dense, double weight) {
  return s_tfidf + weight * s_dense;
}

/// Both score lists are min-max normalized over the union of each method's
/// top-max(pool, k) before combining. Constant scores normalize to 0.
RankedList hybrid_retrieve(const TfIdfIndex& tfidf, const DenseIndex& dense, std::string_view query,
                           std::size_t k, double weight = 1.0, std::size_t pool = 100);

/// Fraction in [0,1] of lists whose gold doc appears in the top k.
double recall_at_k(const std::vector<RankedList>& ranked, const std::vector<std::string>& gold,
                   std::size_t k);

/// Dispatch over the built indexes; k < 1 throws std::invalid_argument.
class Retriever {
 public:
  std::optional<TfIdfIndex> tfidf;
  std::optional<DenseIndex> dense;
  double hybrid_weight = 1.0;

  RankedList retrieve(std::string_view query, std::size_t k, RetrievalMethod method) const;
};

}  // namespace oscar
