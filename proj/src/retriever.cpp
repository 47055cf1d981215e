#include "factgen/retriever.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "factgen/errors.hpp"
#include "json.hpp"

namespace factgen {

using nlohmann::json;

double sparse_dot(const SparseVector& a, const SparseVector& b) {
  double s = 0.0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      s += i->second * j->second;
      ++i;
      ++j;
    }
  }
  return s;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    cur.push_back(c);
    bool terminal = c == '.' || c == '!' || c == '?';
    bool boundary = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (terminal && boundary) {
      auto s = normalize_whitespace(cur);
      if (!s.empty()) out.push_back(std::move(s));
      cur.clear();
    }
  }
  auto s = normalize_whitespace(cur);
  if (!s.empty()) out.push_back(std::move(s));
  return out;
}

namespace {

SparseVector l2_normalized(SparseVector v) {
  double norm = 0.0;
  for (const auto& [t, w] : v) norm += w * w;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (auto& [t, w] : v) w /= norm;
  return v;
}

}  // namespace

TfIdfIndex TfIdfIndex::build(std::span<const SourceDocument> docs, const SentenceFilter& keep_sentence,
                             const Tokenizer& tokenizer) {
  if (docs.empty()) throw ValidationError("cannot index an empty document collection");
  TfIdfIndex index;
  index.tokenizer_ = &tokenizer;

  // Terms are numbered in lexicographic order so the index is independent of document order.
  std::map<std::string, int> df;
  std::vector<std::vector<std::string>> doc_tokens;
  doc_tokens.reserve(docs.size());
  for (const SourceDocument& d : docs) {
    doc_tokens.push_back(tokenizer.split(d.text));
    std::set<std::string> uniq(doc_tokens.back().begin(), doc_tokens.back().end());
    for (const auto& t : uniq) ++df[t];
  }
  for (const auto& [t, count] : df) {
    index.term_index_.emplace(t, static_cast<int>(index.terms_.size()));
    index.terms_.push_back(t);
    index.df_.push_back(count);
  }

  index.doc_count_ = static_cast<int>(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const SourceDocument& d = docs[i];
    if (!index.doc_index_.emplace(d.id, i).second)
      throw ValidationError("duplicate document id '" + d.id + "' in index input");
    IndexedDocument doc;
    doc.id = d.id;
    for (auto& s : split_sentences(d.text))
      if (!keep_sentence || keep_sentence(s)) doc.sentences.push_back(std::move(s));
    doc.vector = index.vectorize(d.text);
    if (doc.vector.empty()) index.warnings_.push_back("document '" + d.id + "' has no tokens; zero vector");
    index.docs_.push_back(std::move(doc));
  }
  return index;
}

std::optional<int> TfIdfIndex::term_id(std::string_view token) const {
  auto it = term_index_.find(std::string(token));
  if (it == term_index_.end()) return std::nullopt;
  return it->second;
}

double TfIdfIndex::idf(int term) const {
  const double n = static_cast<double>(doc_count_);
  return std::log((1.0 + n) / (1.0 + df_[static_cast<std::size_t>(term)])) + 1.0;
}

SparseVector TfIdfIndex::raw_weights(std::string_view text) const {
  std::map<int, int> tf;
  for (const auto& t : tokenizer_->split(text))
    if (auto id = term_id(t)) ++tf[*id];
  SparseVector v;
  v.reserve(tf.size());
  for (const auto& [term, count] : tf) v.emplace_back(term, count * idf(term));
  return v;
}

SparseVector TfIdfIndex::vectorize(std::string_view text) const { return l2_normalized(raw_weights(text)); }

const IndexedDocument* TfIdfIndex::find(std::string_view doc_id) const {
  auto it = doc_index_.find(std::string(doc_id));
  return it == doc_index_.end() ? nullptr : &docs_[it->second];
}

void TfIdfIndex::save(const std::filesystem::path& path) const {
  json terms = json::array();
  for (std::size_t i = 0; i < terms_.size(); ++i) terms.push_back({terms_[i], df_[i]});
  json docs = json::array();
  for (const auto& d : docs_) {
    json vec = json::array();
    for (const auto& [t, w] : d.vector) vec.push_back({t, w});
    docs.push_back({{"id", d.id}, {"sentences", d.sentences}, {"vector", vec}});
  }
  json root = {{"format", "factgen-tfidf"},
               {"format_version", kFormatVersion},
               {"num_docs", num_docs()},
               {"terms", terms},
               {"documents", docs},
               {"warnings", warnings_}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << root.dump() << '\n';
}

TfIdfIndex TfIdfIndex::load(const std::filesystem::path& path, const Tokenizer& tokenizer) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open index " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("index " + path.string() + " is not valid JSON: " + e.what());
  }
  if (root.value("format", "") != "factgen-tfidf" || root.value("format_version", 0) != kFormatVersion)
    throw LoadError("index " + path.string() + " has an unsupported format or version");
  TfIdfIndex index;
  index.tokenizer_ = &tokenizer;
  for (const auto& t : root.at("terms")) {
    index.term_index_.emplace(t.at(0).get<std::string>(), static_cast<int>(index.terms_.size()));
    index.terms_.push_back(t.at(0).get<std::string>());
    index.df_.push_back(t.at(1).get<int>());
  }
  for (const auto& d : root.at("documents")) {
    IndexedDocument doc;
    doc.id = d.at("id").get<std::string>();
    doc.sentences = d.at("sentences").get<std::vector<std::string>>();
    for (const auto& e : d.at("vector")) doc.vector.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
    index.doc_index_.emplace(doc.id, index.docs_.size());
    index.docs_.push_back(std::move(doc));
  }
  index.warnings_ = root.value("warnings", std::vector<std::string>{});
  if (root.at("num_docs").get<int>() != index.num_docs())
    throw LoadError("index " + path.string() + " document count mismatch");
  index.doc_count_ = index.num_docs();
  return index;
}

void RetrievalConfig::validate() const {
  if (k1 < 1 || k2 < 1) throw ValidationError("k1 and k2 must be at least 1");
}

Eigen::VectorXd TfIdfSentenceEncoder::encode(std::string_view sentence) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(index_->num_terms());
  for (const auto& [t, w] : index_->vectorize(sentence)) v(t) = w;
  return v;
}

EmbeddingAverageEncoder::EmbeddingAverageEncoder(Eigen::MatrixXd embeddings, const Vocabulary& vocab,
                                                 const Tokenizer& tokenizer)
    : embeddings_(std::move(embeddings)), vocab_(&vocab), tokenizer_(&tokenizer) {
  if (embeddings_.rows() != vocab.size())
    throw ValidationError("embedding table rows do not match vocabulary size");
}

Eigen::VectorXd EmbeddingAverageEncoder::encode(std::string_view sentence) const {
  auto ids = encode_tokens(sentence, *vocab_, *tokenizer_);
  if (ids.empty()) throw std::runtime_error("cannot embed an empty sentence");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(embeddings_.cols());
  for (int id : ids) v += embeddings_.row(id).transpose();
  return v / static_cast<double>(ids.size());
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  // Sequential sums in index order keep results independent of SIMD width.
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return dot / (std::sqrt(aa) * std::sqrt(bb));
}

Retrieval<ScoredDocument> retrieve_documents(const TfIdfIndex& index, std::string_view claim, int k1,
                                             std::string_view exclude_doc_id) {
  if (k1 < 1) throw ValidationError("k1 must be at least 1");
  Retrieval<ScoredDocument> result;
  SparseVector q = index.vectorize(claim);
  if (q.empty()) {
    result.warnings.push_back("claim has no in-vocabulary tokens; no documents retrieved");
    return result;
  }
  std::vector<ScoredDocument> scored;
  scored.reserve(index.documents().size());
  for (const auto& d : index.documents()) {
    if (!exclude_doc_id.empty() && d.id == exclude_doc_id) continue;
    scored.push_back({d.id, sparse_dot(q, d.vector)});
  }
  const std::size_t k = std::min(static_cast<std::size_t>(k1), scored.size());
  auto better = [](const ScoredDocument& a, const ScoredDocument& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.doc_id < b.doc_id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
  scored.resize(k);
  result.items = std::move(scored);
  return result;
}

Retrieval<RetrievedFact> retrieve_facts(std::string_view claim, const TfIdfIndex& index,
                                        const SentenceEncoder& encoder, const RetrievalConfig& config,
                                        std::string_view exclude_doc_id) {
  config.validate();
  Retrieval<RetrievedFact> result;
  auto docs = retrieve_documents(index, claim, config.k1, exclude_doc_id);
  result.warnings = std::move(docs.warnings);
  if (docs.items.empty()) return result;

  Eigen::VectorXd q;
  try {
    q = encoder.encode(claim);
  } catch (const std::exception& e) {
    result.warnings.push_back(std::string("encoder failed on claim: ") + e.what());
    return result;
  }

  std::vector<RetrievedFact> pool;
  for (std::size_t rank = 0; rank < docs.items.size(); ++rank) {
    const IndexedDocument* doc = index.find(docs.items[rank].doc_id);
    for (std::size_t pos = 0; pos < doc->sentences.size(); ++pos) {
      const std::string& s = doc->sentences[pos];
      Eigen::VectorXd v;
      try {
        v = encoder.encode(s);
      } catch (const std::exception& e) {
        result.warnings.push_back("skipped sentence " + std::to_string(pos) + " of '" + doc->id +
                                  "': " + e.what());
        continue;
      }
      pool.push_back({s, doc->id, static_cast<int>(rank), static_cast<int>(pos), cosine(q, v)});
    }
  }
  // Pool is already in (doc rank, position) order; a stable sort keeps it for ties.
  std::stable_sort(pool.begin(), pool.end(),
                   [](const RetrievedFact& a, const RetrievedFact& b) { return a.similarity > b.similarity; });
  if (pool.size() > static_cast<std::size_t>(config.k2)) pool.resize(static_cast<std::size_t>(config.k2));
  result.items = std::move(pool);
  return result;
}

}  // namespace factgen
