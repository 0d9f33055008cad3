#include "oscar/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace oscar {

using nlohmann::json;

std::string build_query(const DialogueExample& example) {
  return example.question + " " + example.scenario;
}

std::string document_text(const RuleDocument& doc) {
  return doc.title.empty() ? doc.text : doc.title + "\n" + doc.text;
}

std::string_view to_string(RetrievalMethod m) {
  switch (m) {
    case RetrievalMethod::TfIdf: return "tfidf";
    case RetrievalMethod::Dense: return "dense";
    case RetrievalMethod::Hybrid: return "hybrid";
  }
  return "?";
}

RetrievalMethod parse_retrieval_method(std::string_view s) {
  if (s == "tfidf") return RetrievalMethod::TfIdf;
  if (s == "dense") return RetrievalMethod::Dense;
  if (s == "hybrid") return RetrievalMethod::Hybrid;
  throw std::invalid_argument("unknown retrieval method \"" + std::string(s) + "\"");
}

RankedList rank(const std::vector<std::string>& doc_ids, const std::vector<double>& scores,
                std::size_t k) {
  std::vector<std::size_t> order(doc_ids.size());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return doc_ids[a] < doc_ids[b];
  };
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    better);
  RankedList out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({doc_ids[order[i]], scores[order[i]]});
  return out;
}

// ---- TF-IDF ---------------------------------------------------------------------

namespace {

std::map<std::string, std::size_t> term_counts(std::string_view text) {
  std::map<std::string, std::size_t> out;
  for (auto& t : tokenize(text)) ++out[t];
  return out;
}

}  // namespace

TfIdfIndex TfIdfIndex::build(const std::vector<RuleDocument>& docs) {
  TfIdfIndex idx;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    idx.doc_ids_.push_back(docs[d].doc_id);
    for (const auto& [term, count] : term_counts(document_text(docs[d]))) {
      auto [it, fresh] = idx.vocabulary_.emplace(term, idx.postings_.size());
      if (fresh) idx.postings_.emplace_back();
      idx.postings_[it->second].push_back({d, count});
    }
  }
  idx.doc_freq_.resize(idx.postings_.size());
  idx.doc_norms_.assign(docs.size(), 0.0);
  for (std::size_t t = 0; t < idx.postings_.size(); ++t) {
    idx.doc_freq_[t] = idx.postings_[t].size();
    const double w = idx.idf(t);
    for (const auto& p : idx.postings_[t]) {
      const double x = static_cast<double>(p.count) * w;
      idx.doc_norms_[p.doc] += x * x;
    }
  }
  for (auto& n : idx.doc_norms_) n = std::sqrt(n);
  for (std::size_t d = 0; d < idx.doc_ids_.size(); ++d) {
    if (!idx.doc_index_.emplace(idx.doc_ids_[d], d).second) {
      throw CorpusError("duplicate doc_id \"" + idx.doc_ids_[d] + "\"");
    }
  }
  return idx;
}

std::optional<std::size_t> TfIdfIndex::term_id(const std::string& term) const {
  auto it = vocabulary_.find(term);
  if (it == vocabulary_.end()) return std::nullopt;
  return it->second;
}

double TfIdfIndex::idf(std::size_t term) const {
  return std::log((1.0 + static_cast<double>(n_docs())) /
                  (1.0 + static_cast<double>(doc_freq_.at(term)))) + 1.0;
}

std::vector<double> TfIdfIndex::scores(std::string_view query) const {
  std::vector<double> acc(n_docs(), 0.0);
  for (const auto& [term, qtf] : term_counts(query)) {
    auto t = term_id(term);
    if (!t) continue;
    const double w = idf(*t) * static_cast<double>(qtf);
    for (const auto& p : postings_[*t]) acc[p.doc] += static_cast<double>(p.count) * w;
  }
  for (std::size_t d = 0; d < acc.size(); ++d) {
    acc[d] = doc_norms_[d] > 0 ? acc[d] / doc_norms_[d] : 0.0;
  }
  return acc;
}

double TfIdfIndex::score(std::string_view query, const std::string& doc_id) const {
  auto it = doc_index_.find(doc_id);
  if (it == doc_index_.end()) throw std::out_of_range("unknown doc_id \"" + doc_id + "\"");
  return scores(query)[it->second];
}

RankedList TfIdfIndex::retrieve(std::string_view query, std::size_t k) const {
  return rank(doc_ids_, scores(query), k);
}

json TfIdfIndex::to_json() const {
  json postings = json::array();
  for (const auto& list : postings_) {
    json l = json::array();
    for (const auto& p : list) l.push_back({p.doc, p.count});
    postings.push_back(std::move(l));
  }
  return {{"format", "oscar-tfidf"}, {"version", 1}, {"doc_ids", doc_ids_},
          {"vocabulary", vocabulary_}, {"postings", postings}, {"doc_norms", doc_norms_}};
}

TfIdfIndex TfIdfIndex::from_json(const json& j) {
  if (j.value("format", "") != "oscar-tfidf" || j.value("version", 0) != 1) {
    throw std::runtime_error("not a version 1 TF-IDF index");
  }
  TfIdfIndex idx;
  idx.doc_ids_ = j.at("doc_ids").get<std::vector<std::string>>();
  idx.vocabulary_ = j.at("vocabulary").get<std::map<std::string, std::size_t>>();
  for (const auto& l : j.at("postings")) {
    auto& list = idx.postings_.emplace_back();
    for (const auto& p : l) list.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
  }
  if (idx.postings_.size() != idx.vocabulary_.size()) throw std::runtime_error("corrupt TF-IDF index");
  for (const auto& list : idx.postings_) idx.doc_freq_.push_back(list.size());
  idx.doc_norms_ = j.at("doc_norms").get<std::vector<double>>();
  for (std::size_t d = 0; d < idx.doc_ids_.size(); ++d) idx.doc_index_.emplace(idx.doc_ids_[d], d);
  return idx;
}

// ---- dense dual encoder -----------------------------------------------------------

DenseIndex::DenseIndex(Vocabulary vocab, const DenseConfig& config)
    : vocab_(std::move(vocab)), config_(config) {
  Rng rng(config.seed);
  const std::size_t d = config.dim;
  params_.weight("emb", vocab_.size(), d, rng);
  for (const char* tower : {"q", "d"}) {
    const std::string p(tower);
    params_.weight(p + ".w1", d, d, rng);
    params_.zeros(p + ".b1", 1, d);
    params_.weight(p + ".w2", d, d, rng);
    params_.zeros(p + ".b2", 1, d);
  }
}

Tensor DenseIndex::tower(const std::string& prefix, std::string_view text) const {
  auto ids = vocab_.encode(text);
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  Tensor h = mean_rows(gather_rows(params_.get("emb"), ids));
  h = relu(add(matmul(h, params_.get(prefix + ".w1")), params_.get(prefix + ".b1")));
  return add(matmul(h, params_.get(prefix + ".w2")), params_.get(prefix + ".b2"));
}

Tensor DenseIndex::encode_query(std::string_view text) const { return tower("q", text); }
Tensor DenseIndex::encode_document(std::string_view text) const { return tower("d", text); }

void DenseIndex::index(const std::vector<RuleDocument>& docs) {
  doc_ids_.clear();
  doc_index_.clear();
  doc_vectors_.clear();
  for (const auto& doc : docs) {
    auto v = encode_document(document_text(doc)).detach();
    set_doc_vector(doc.doc_id, {v.data().begin(), v.data().end()});
  }
}

void DenseIndex::set_doc_vector(const std::string& doc_id, std::vector<double> v) {
  if (v.size() != config_.dim) throw ShapeError("doc vector of width " + std::to_string(v.size()) +
                                                ", expected " + std::to_string(config_.dim));
  auto [it, fresh] = doc_index_.emplace(doc_id, doc_vectors_.size());
  if (fresh) {
    doc_ids_.push_back(doc_id);
    doc_vectors_.push_back(std::move(v));
  } else {
    doc_vectors_[it->second] = std::move(v);
  }
}

const std::vector<double>& DenseIndex::doc_vector(const std::string& doc_id) const {
  auto it = doc_index_.find(doc_id);
  if (it == doc_index_.end()) throw std::out_of_range("unknown doc_id \"" + doc_id + "\"");
  return doc_vectors_[it->second];
}

namespace {

double dot(std::span<const double> a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < b.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double DenseIndex::score(std::string_view query, const std::string& doc_id) const {
  const auto& v = doc_vector(doc_id);
  return dot(encode_query(query).data(), v);
}

std::vector<double> DenseIndex::scores(std::string_view query) const {
  auto q = encode_query(query);
  std::vector<double> out;
  out.reserve(doc_vectors_.size());
  for (const auto& v : doc_vectors_) out.push_back(dot(q.data(), v));
  return out;
}

RankedList DenseIndex::retrieve(std::string_view query, std::size_t k) const {
  return rank(doc_ids_, scores(query), k);
}

json DenseIndex::to_json() const {
  json params = json::object();
  for (const auto& [name, t] : params_.all()) {
    params[name] = {{"rows", t.rows()}, {"cols", t.cols()},
                    {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  }
  json docs = json::array();
  for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
    docs.push_back({{"doc_id", doc_ids_[i]}, {"vector", doc_vectors_[i]}});
  }
  return {{"format", "oscar-dense"},
          {"version", 1},
          {"config",
           {{"dim", config_.dim}, {"epochs", config_.epochs}, {"learning_rate", config_.learning_rate},
            {"hard_negatives", config_.hard_negatives}, {"batch_size", config_.batch_size},
            {"in_batch_negatives", config_.in_batch_negatives},
            {"seed", config_.seed}}},
          {"vocabulary", vocab_.to_json()},
          {"params", params},
          {"docs", docs}};
}

DenseIndex DenseIndex::from_json(const json& j) {
  if (j.value("format", "") != "oscar-dense" || j.value("version", 0) != 1) {
    throw std::runtime_error("not a version 1 dense index");
  }
  DenseIndex idx;
  const auto& c = j.at("config");
  idx.config_.dim = c.at("dim");
  idx.config_.epochs = c.at("epochs");
  idx.config_.learning_rate = c.at("learning_rate");
  idx.config_.hard_negatives = c.at("hard_negatives");
  idx.config_.batch_size = c.at("batch_size");
  idx.config_.in_batch_negatives = c.value("in_batch_negatives", true);
  idx.config_.seed = c.at("seed");
  idx.vocab_ = Vocabulary::from_json(j.at("vocabulary"));
  for (const auto& [name, p] : j.at("params").items()) {
    idx.params_.add(name, Tensor::from(p.at("rows"), p.at("cols"),
                                       p.at("data").get<std::vector<double>>(), true));
  }
  for (const auto& d : j.at("docs")) {
    idx.set_doc_vector(d.at("doc_id"), d.at("vector").get<std::vector<double>>());
  }
  return idx;
}

Tensor contrastive_loss(const Tensor& scores) {
  if (scores.rows() != 1 || scores.cols() < 1) {
    throw ShapeError("contrastive_loss", scores.shape(), Shape{1, 1});
  }
  return cross_entropy(scores, 0);
}

DenseIndex train_dense(const Corpus& corpus, const TfIdfIndex& tfidf, const DenseConfig& config,
                       DenseTrainLog* log) {
  struct Item {
    std::string query;
    std::vector<std::size_t> docs;  // gold first, then hard negatives
  };
  std::vector<Item> items;
  for (const auto& e : corpus.split.train) {
    if (e.gold_doc_id.empty()) continue;
    Item it{build_query(e), {corpus.rule_index(e.gold_doc_id)}};
    for (const auto& r : tfidf.retrieve(it.query, config.hard_negatives + 1)) {
      if (r.doc_id != e.gold_doc_id && it.docs.size() <= config.hard_negatives) {
        it.docs.push_back(corpus.rule_index(r.doc_id));
      }
    }
    items.push_back(std::move(it));
  }
  if (items.empty()) throw CorpusError("dense training needs examples with a gold_doc_id");

  Vocabulary vocab;
  for (const auto& r : corpus.rules) vocab.add_text(document_text(r));
  for (const auto& it : items) vocab.add_text(it.query);
  DenseIndex index(std::move(vocab), config);

  std::vector<std::string> texts;
  for (const auto& r : corpus.rules) texts.push_back(document_text(r));

  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  OptimizerState state;
  const AdamConfig adam{config.learning_rate};
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      index.params().zero_grad();
      const std::size_t end = std::min(order.size(), b + batch);
      if (config.in_batch_negatives) {
        // One score matrix per batch: every query against every document that
        // any query in the batch brought along (its gold or hard negatives).
        std::vector<std::size_t> batch_docs;
        std::map<std::size_t, std::size_t> column;
        std::vector<Tensor> qs;
        std::vector<int> targets;
        for (std::size_t i = b; i < end; ++i) {
          for (std::size_t d : items[order[i]].docs) {
            if (column.emplace(d, batch_docs.size()).second) batch_docs.push_back(d);
          }
        }
        std::vector<Tensor> rows;
        for (std::size_t d : batch_docs) rows.push_back(index.encode_document(texts[d]));
        for (std::size_t i = b; i < end; ++i) {
          qs.push_back(index.encode_query(items[order[i]].query));
          targets.push_back(static_cast<int>(column.at(items[order[i]].docs.front())));
        }
        auto loss = cross_entropy(matmul(concat_rows(qs), transpose(concat_rows(rows))), targets);
        total += loss.item() * static_cast<double>(end - b);
        loss.backward();
      } else {
        for (std::size_t i = b; i < end; ++i) {
          const auto& it = items[order[i]];
          std::vector<Tensor> rows;
          for (std::size_t d : it.docs) rows.push_back(index.encode_document(texts[d]));
          auto s = matmul(index.encode_query(it.query), transpose(concat_rows(rows)));
          auto loss = scale(contrastive_loss(s), 1.0 / static_cast<double>(end - b));
          total += loss.item() * static_cast<double>(end - b);
          loss.backward();
        }
      }
      adam_step(index.params(), state, adam);
    }
    if (log) log->epoch_loss.push_back(total / static_cast<double>(items.size()));
  }
  index.index(corpus.rules);
  return index;
}

RankedList hybrid_retrieve(const TfIdfIndex& tfidf, const DenseIndex& dense, std::string_view query,
                           std::size_t k, double weight, std::size_t pool) {
  const auto& ids = tfidf.doc_ids();
  const auto tf = tfidf.scores(query);
  const auto dn_raw = dense.scores(query);
  std::vector<double> dn(ids.size());
  std::map<std::string, double> by_id;
  for (std::size_t i = 0; i < dense.doc_ids().size(); ++i) by_id[dense.doc_ids()[i]] = dn_raw[i];
  for (std::size_t i = 0; i < ids.size(); ++i) dn[i] = by_id.at(ids[i]);

  const std::size_t p = std::max(pool, k);
  std::set<std::string> pool_ids;
  for (const auto& r : rank(ids, tf, p)) pool_ids.insert(r.doc_id);
  for (const auto& r : rank(ids, dn, p)) pool_ids.insert(r.doc_id);

  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (pool_ids.contains(ids[i])) members.push_back(i);
  }
  auto normalize = [&](const std::vector<double>& s) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto i : members) lo = std::min(lo, s[i]), hi = std::max(hi, s[i]);
    std::vector<double> out;
    for (auto i : members) out.push_back(hi > lo ? (s[i] - lo) / (hi - lo) : 0.0);
    return out;
  };
  const auto ntf = normalize(tf);
  const auto ndn = normalize(dn);
  std::vector<std::string> member_ids;
  std::vector<double> combined;
  for (std::size_t m = 0; m < members.size(); ++m) {
    member_ids.push_back(ids[members[m]]);
    combined.push_back(combine_scores(ntf[m], ndn[m], weight));
  }
  return rank(member_ids, combined, k);
}

double recall_at_k(const std::vector<RankedList>& ranked, const std::vector<std::string>& gold,
                   std::size_t k) {
  if (ranked.size() != gold.size()) throw std::invalid_argument("recall_at_k: length mismatch");
  if (ranked.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& list = ranked[i];
    const auto n = std::min(k, list.size());
    hits += std::any_of(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(n),
                        [&](const ScoredDoc& d) { return d.doc_id == gold[i]; });
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

RankedList Retriever::retrieve(std::string_view query, std::size_t k, RetrievalMethod method) const {
  if (k < 1) throw std::invalid_argument("retrieve: k must be at least 1");
  switch (method) {
    case RetrievalMethod::TfIdf:
      if (!tfidf) throw std::logic_error("TF-IDF index not built");
      return tfidf->retrieve(query, k);
    case RetrievalMethod::Dense:
      if (!dense) throw std::logic_error("dense index not built");
      return dense->retrieve(query, k);
    case RetrievalMethod::Hybrid:
      if (!tfidf || !dense) throw std::logic_error("hybrid retrieval needs both indexes");
      return hybrid_retrieve(*tfidf, *dense, query, k, hybrid_weight);
  }
  return {};
}

}  // namespace oscar
