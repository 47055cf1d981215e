#pragma once

// Two-stage fact retrieval: tf-idf cosine ranking of documents, then
// sentence-level reranking inside the top documents with a SentenceEncoder.

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "factgen/corpus.hpp"

namespace factgen {

/// (term id, weight) pairs sorted by term id.
using SparseVector = std::vector<std::pair<int, double>>;

double sparse_dot(const SparseVector& a, const SparseVector& b);

/// Splits after '.', '!' or '?' when followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);

struct SourceDocument {
  std::string id;
  std::string text;
};

struct IndexedDocument {
  std::string id;
  std::vector<std::string> sentences;  // retrievable sentences, in document order
  SparseVector vector;                 // L2-normalized tf-idf of the full text
};

class TfIdfIndex {
 public:
  static constexpr int kFormatVersion = 1;

  /// Keeps only sentences for which the predicate holds (all when empty).
  using SentenceFilter = std::function<bool(const std::string&)>;

  TfIdfIndex() = default;

  static TfIdfIndex build(std::span<const SourceDocument> docs, const SentenceFilter& keep_sentence = {},
                          const Tokenizer& tokenizer = default_tokenizer());

  /// L2-normalized tf-idf vector of arbitrary text over the index vocabulary.
  /// Out-of-vocabulary tokens are dropped; may be empty.
  SparseVector vectorize(std::string_view text) const;
  /// Unnormalized tf-idf weights (for inspection and tests).
  SparseVector raw_weights(std::string_view text) const;

  double idf(int term) const;
  std::optional<int> term_id(std::string_view token) const;
  const std::string& term(int id) const { return terms_[static_cast<std::size_t>(id)]; }
  int document_frequency(int term) const { return df_[static_cast<std::size_t>(term)]; }
  int num_terms() const { return static_cast<int>(terms_.size()); }
  int num_docs() const { return static_cast<int>(docs_.size()); }
  const std::vector<IndexedDocument>& documents() const { return docs_; }
  const IndexedDocument* find(std::string_view doc_id) const;
  const std::vector<std::string>& warnings() const { return warnings_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }

  void save(const std::filesystem::path& path) const;
  static TfIdfIndex load(const std::filesystem::path& path, const Tokenizer& tokenizer = default_tokenizer());

 private:
  const Tokenizer* tokenizer_ = &default_tokenizer();
  std::vector<std::string> terms_;
  std::vector<int> df_;
  std::unordered_map<std::string, int> term_index_;
  std::vector<IndexedDocument> docs_;
  std::unordered_map<std::string, std::size_t> doc_index_;
  std::vector<std::string> warnings_;
  int doc_count_ = 0;  // fixed before any vector is computed
};

struct ScoredDocument {
  std::string doc_id;
  double similarity = 0.0;
};

struct RetrievedFact {
  std::string text;
  std::string doc_id;
  int doc_rank = 0;
  int position = 0;
  double similarity = 0.0;
};

template <class T>
struct Retrieval {
  std::vector<T> items;
  std::vector<std::string> warnings;
};

struct RetrievalConfig {
  int k1 = 10;
  int k2 = 5;
  void validate() const;
};

class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  /// Throws on failure; the retriever skips that sentence.
  virtual Eigen::VectorXd encode(std::string_view sentence) const = 0;
  virtual int dimension() const = 0;
};

/// Dense tf-idf vector over the index vocabulary.
class TfIdfSentenceEncoder final : public SentenceEncoder {
 public:
  explicit TfIdfSentenceEncoder(const TfIdfIndex& index) : index_(&index) {}
  Eigen::VectorXd encode(std::string_view sentence) const override;
  int dimension() const override { return index_->num_terms(); }

 private:
  const TfIdfIndex* index_;
};

/// Mean of token embedding rows (e.g. the trained decoder's embedding table).
class EmbeddingAverageEncoder final : public SentenceEncoder {
 public:
  EmbeddingAverageEncoder(Eigen::MatrixXd embeddings, const Vocabulary& vocab,
                          const Tokenizer& tokenizer = default_tokenizer());
  Eigen::VectorXd encode(std::string_view sentence) const override;
  int dimension() const override { return static_cast<int>(embeddings_.cols()); }

 private:
  Eigen::MatrixXd embeddings_;
  const Vocabulary* vocab_;
  const Tokenizer* tokenizer_;
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Top min(k1, num_docs) documents by cosine, descending, ties by ascending
/// doc id. A claim with no in-vocabulary token yields no results and a warning.
/// Documents whose id equals exclude_doc_id are skipped.
Retrieval<ScoredDocument> retrieve_documents(const TfIdfIndex& index, std::string_view claim, int k1,
                                             std::string_view exclude_doc_id = {});

/// Sentences from the top-k1 documents ranked by encoder cosine to the claim,
/// ties by (document rank, sentence position); at most k2 returned.
Retrieval<RetrievedFact> retrieve_facts(std::string_view claim, const TfIdfIndex& index,
                                        const SentenceEncoder& encoder, const RetrievalConfig& config,
                                        std::string_view exclude_doc_id = {});

}  // namespace factgen
