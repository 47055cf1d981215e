#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "factgen/checkpoint.hpp"
#include "factgen/corpus.hpp"

#ifndef FACTGEN_DATA_DIR
#define FACTGEN_DATA_DIR "data"
#endif

namespace support {

inline std::filesystem::path data(const std::string& name) { return std::filesystem::path(FACTGEN_DATA_DIR) / name; }

inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("factgen_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline factgen::ModelConfig tiny_model(int vocab, int d = 8) {
  factgen::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d;
  c.n_heads = 2;
  c.n_encoder_blocks = 1;
  c.n_decoder_blocks = 1;
  c.ffn_dim = 2 * d;
  c.max_positions = 64;
  c.init_std = 0.3;  // large enough that attention is far from uniform
  return c;
}

inline factgen::CRConfig tiny_cr(int vocab, int d_model, int d_cr = 8) {
  factgen::CRConfig c;
  c.vocab_size = vocab;
  c.d_model = d_model;
  c.d_cr = d_cr;
  c.n_heads = 2;
  c.n_blocks = 1;
  c.ffn_dim = 2 * d_cr;
  c.max_positions = 32;
  c.init_std = 0.3;
  return c;
}

inline std::vector<int> random_ids(std::mt19937_64& rng, int vocab, int n, int lo = factgen::special::count) {
  std::uniform_int_distribution<int> pick(lo, vocab - 1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& x : out) x = pick(rng);
  return out;
}

// Example with the marker/BOS/EOS layout produced by tokenize_example.
inline factgen::TokenizedExample random_example(std::mt19937_64& rng, int vocab, int claim, int facts, int content) {
  factgen::TokenizedExample ex;
  ex.id = "x";
  ex.claim_ids.push_back(factgen::special::claim_mark);
  for (int t : random_ids(rng, vocab, claim)) ex.claim_ids.push_back(t);
  if (facts > 0) {
    ex.fact_ids.push_back(factgen::special::fact_mark);
    for (int t : random_ids(rng, vocab, facts)) ex.fact_ids.push_back(t);
  }
  ex.content_ids.push_back(factgen::special::bos);
  for (int t : random_ids(rng, vocab, content)) ex.content_ids.push_back(t);
  ex.content_ids.push_back(factgen::special::eos);
  return ex;
}

}  // namespace support

#include <cmath>
#include <functional>

namespace support {

// Central difference of loss() with respect to one parameter entry.
inline double numeric_grad(factgen::Parameter& p, Eigen::Index r, Eigen::Index c, const std::function<double()>& loss,
                           double h = 1e-5) {
  const double keep = p.value(r, c);
  p.value(r, c) = keep + h;
  const double up = loss();
  p.value(r, c) = keep - h;
  const double down = loss();
  p.value(r, c) = keep;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

}  // namespace support

#include "factgen/retriever.hpp"

namespace support {

struct ToyData {
  std::vector<factgen::Document> docs;
  factgen::Vocabulary vocab;
  std::vector<factgen::TokenizedExample> examples;
};

// Tokenized bundled corpus; facts come from the other documents.
inline ToyData toy_data(const std::string& file, bool facts = true, int k1 = 3, int k2 = 2, int max_content = 40) {
  ToyData d;
  d.docs = factgen::load_corpus(data(file));
  d.vocab = factgen::build_vocabulary(d.docs);
  std::vector<factgen::SourceDocument> src;
  for (const auto& doc : d.docs) src.push_back({doc.id, doc.content});
  auto index = factgen::TfIdfIndex::build(src);
  factgen::TfIdfSentenceEncoder enc(index);
  factgen::TokenizeOptions opt;
  opt.max_content_len = max_content;
  for (const auto& doc : d.docs) {
    std::vector<std::string> f;
    if (facts)
      for (auto& r : factgen::retrieve_facts(doc.claim, index, enc, {k1, k2}, doc.id).items) f.push_back(r.text);
    d.examples.push_back(factgen::tokenize_example(doc, f, d.vocab, opt));
  }
  return d;
}

}  // namespace support
