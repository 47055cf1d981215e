#pragma once

// Reference implementations written separately from the library, used only
// to produce expected values in tests.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "factgen/corpus.hpp"
#include "factgen/psa_lm.hpp"

namespace oracle {

using Mat = Eigen::MatrixXd;
using Lookup = std::function<const Mat&(const std::string&)>;

inline Lookup lookup(const factgen::ParameterSet& ps) {
  return [&ps](const std::string& name) -> const Mat& {
    const factgen::Parameter* p = ps.find(name);
    if (p == nullptr) throw std::runtime_error("oracle: no parameter " + name);
    return p->value;
  };
}

// ------------------------------------------------------------ transformer

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mu += x(r, c);
    mu /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      out(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * gain(0, c) + bias(0, c);
  }
  return out;
}

inline Mat affine(const Mat& x, const Lookup& P, const std::string& name) {
  Mat y = x * P(name + ".weight");
  y.rowwise() += P(name + ".bias").row(0);
  return y;
}

inline Mat gelu(const Mat& x) {
  const double k = std::sqrt(2.0 / 3.14159265358979323846);
  return x.unaryExpr([k](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v))); });
}

// One attention head: queries over [keys_y ; extra keys]; when causal, query
// i sees target keys 0..i and all extra keys.
inline Mat attend(const Mat& q, const Mat& k, const Mat& v, Eigen::Index target_keys, bool causal) {
  Mat s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  Mat w(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      bool blocked = causal && j < target_keys && j > i;
      if (!blocked) m = std::max(m, s(i, j));
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      bool blocked = causal && j < target_keys && j > i;
      w(i, j) = blocked ? 0.0 : std::exp(s(i, j) - m);
      z += w(i, j);
    }
    w.row(i) /= z;
  }
  return w * v;
}

inline Mat stack(const std::vector<Mat>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

inline Mat embed(const Lookup& P, const std::string& prefix, const std::vector<int>& ids) {
  const Mat& tok = P(prefix + ".tokens");
  const Mat& pos = P(prefix + ".positions");
  Mat x(static_cast<Eigen::Index>(ids.size()), tok.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = tok.row(ids[i]) + pos.row(static_cast<Eigen::Index>(i));
  return x;
}

// Multi-head attention with optional source key/value matrices appended.
inline Mat mha(const Mat& q, const Mat& k, const Mat& v, const std::vector<std::pair<Mat, Mat>>& sources, int heads,
               bool causal) {
  const Eigen::Index hd = q.cols() / heads;
  Mat out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    std::vector<Mat> ks{k.middleCols(h * hd, hd)}, vs{v.middleCols(h * hd, hd)};
    for (const auto& [sk, sv] : sources) {
      ks.push_back(sk.middleCols(h * hd, hd));
      vs.push_back(sv.middleCols(h * hd, hd));
    }
    out.middleCols(h * hd, hd) = attend(q.middleCols(h * hd, hd), stack(ks), stack(vs), k.rows(), causal);
  }
  return out;
}

inline Mat encoder_states(const Lookup& P, const factgen::ModelConfig& c, const std::vector<int>& ids) {
  Mat x = embed(P, "encoder", ids);
  for (int b = 0; b < c.n_encoder_blocks; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    Mat h = layer_norm(x, P(p + ".ln_attn.gain"), P(p + ".ln_attn.bias"));
    Mat a = mha(affine(h, P, p + ".attn.query"), affine(h, P, p + ".attn.key"), affine(h, P, p + ".attn.value"), {},
                c.n_heads, false);
    x += affine(a, P, p + ".attn.out");
    Mat f = layer_norm(x, P(p + ".ln_ffn.gain"), P(p + ".ln_ffn.bias"));
    x += affine(gelu(affine(f, P, p + ".ffn.up")), P, p + ".ffn.down");
  }
  return layer_norm(x, P("encoder.ln_final.gain"), P("encoder.ln_final.bias"));
}

struct DecoderOut {
  Mat hidden;
  Mat logits;
};

// Decoder pass. claim_len/fact_len split the rows of source (may be empty).
inline DecoderOut decoder(const Lookup& P, const factgen::ModelConfig& c, const std::vector<int>& ids,
                          const Mat& source = Mat(), int claim_len = 0, int fact_len = 0) {
  Mat y = embed(P, "decoder", ids);
  for (int b = 0; b < c.n_decoder_blocks; ++b) {
    const std::string p = "decoder.block" + std::to_string(b);
    Mat h = layer_norm(y, P(p + ".ln_attn.gain"), P(p + ".ln_attn.bias"));
    std::vector<std::pair<Mat, Mat>> sources;
    if (claim_len > 0) {
      Mat hx = source.topRows(claim_len);
      sources.emplace_back(affine(hx, P, p + ".source.claim_key"), affine(hx, P, p + ".source.claim_value"));
    }
    if (fact_len > 0) {
      Mat hf = source.middleRows(claim_len, fact_len);
      sources.emplace_back(affine(hf, P, p + ".source.fact_key"), affine(hf, P, p + ".source.fact_value"));
    }
    Mat a = mha(affine(h, P, p + ".attn.query"), affine(h, P, p + ".attn.key"), affine(h, P, p + ".attn.value"),
                sources, c.n_heads, true);
    y += affine(a, P, p + ".attn.out");
    Mat f = layer_norm(y, P(p + ".ln_ffn.gain"), P(p + ".ln_ffn.bias"));
    y += affine(gelu(affine(f, P, p + ".ffn.up")), P, p + ".ffn.down");
  }
  DecoderOut out;
  out.hidden = layer_norm(y, P("decoder.ln_final.gain"), P("decoder.ln_final.bias"));
  out.logits = affine(out.hidden, P, "decoder.lm_head");
  return out;
}

// Reconstructor logits over the claim; h_y (1 x d_model) adds one key/value
// slot per block when non-empty.
inline Mat reconstructor_logits(const Lookup& P, int heads, int blocks, const std::vector<int>& ids,
                                const Mat& h_y = Mat()) {
  Mat x = embed(P, "reconstructor", ids);
  for (int b = 0; b < blocks; ++b) {
    const std::string p = "reconstructor.block" + std::to_string(b);
    Mat h = layer_norm(x, P(p + ".ln_attn.gain"), P(p + ".ln_attn.bias"));
    Mat q = affine(h, P, p + ".attn.query"), k = affine(h, P, p + ".attn.key"), v = affine(h, P, p + ".attn.value");
    if (h_y.size() > 0) {
      k = stack({k, affine(h_y, P, p + ".pooled.key")});
      v = stack({v, affine(h_y, P, p + ".pooled.value")});
    }
    x += affine(mha(q, k, v, {}, heads, false), P, p + ".attn.out");
    Mat f = layer_norm(x, P(p + ".ln_ffn.gain"), P(p + ".ln_ffn.bias"));
    x += affine(gelu(affine(f, P, p + ".ffn.up")), P, p + ".ffn.down");
  }
  return affine(layer_norm(x, P("reconstructor.ln_final.gain"), P("reconstructor.ln_final.bias")), P,
                "reconstructor.head");
}

// Sum of -log softmax(row)[target] over rows with target >= 0.
inline double cross_entropy(const Mat& logits, const std::vector<int>& targets) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    double m = logits.row(r).maxCoeff();
    double z = (logits.row(r).array() - m).exp().sum();
    s += -(logits(r, t) - m - std::log(z));
  }
  return s;
}

// -------------------------------------------------------------- retrieval

using Bag = std::map<std::string, double>;  // term -> weight, iterated in term order

struct TfIdf {
  std::map<std::string, int> df;
  int n = 0;

  explicit TfIdf(const std::vector<std::string>& docs) {
    n = static_cast<int>(docs.size());
    for (const auto& d : docs) {
      auto toks = factgen::default_tokenizer().split(d);
      std::set<std::string> uniq(toks.begin(), toks.end());
      for (const auto& t : uniq) ++df[t];
    }
  }

  Bag vector(const std::string& text) const {
    Bag tf;
    for (const auto& t : factgen::default_tokenizer().split(text))
      if (df.count(t)) tf[t] += 1.0;
    Bag w;
    double sq = 0.0;
    for (const auto& [t, c] : tf) {
      double idf = std::log((1.0 + n) / (1.0 + df.at(t))) + 1.0;
      w[t] = c * idf;
      sq += w[t] * w[t];
    }
    const double norm = std::sqrt(sq);
    if (norm > 0.0)
      for (auto& [t, v] : w) v /= norm;
    return w;
  }
};

inline double dot(const Bag& a, const Bag& b) {
  double s = 0.0;
  for (const auto& [t, w] : a) {
    auto it = b.find(t);
    if (it != b.end()) s += w * it->second;
  }
  return s;
}

inline double cosine(const Bag& a, const Bag& b) {
  double d = 0.0, aa = 0.0, bb = 0.0;
  std::set<std::string> terms;
  for (const auto& [t, w] : a) terms.insert(t);
  for (const auto& [t, w] : b) terms.insert(t);
  for (const auto& t : terms) {
    double x = a.count(t) ? a.at(t) : 0.0;
    double y = b.count(t) ? b.at(t) : 0.0;
    d += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return d / (std::sqrt(aa) * std::sqrt(bb));
}

struct RankedDoc {
  std::string id;
  double sim;
};

inline std::vector<RankedDoc> rank_documents(const TfIdf& idx, const std::vector<std::string>& ids,
                                             const std::vector<std::string>& texts, const std::string& claim,
                                             int k1) {
  Bag q = idx.vector(claim);
  std::vector<RankedDoc> all;
  if (q.empty()) return all;
  for (std::size_t i = 0; i < ids.size(); ++i) all.push_back({ids[i], dot(q, idx.vector(texts[i]))});
  std::sort(all.begin(), all.end(), [](const RankedDoc& a, const RankedDoc& b) {
    return a.sim != b.sim ? a.sim > b.sim : a.id < b.id;
  });
  if (all.size() > static_cast<std::size_t>(k1)) all.resize(static_cast<std::size_t>(k1));
  return all;
}

struct RankedSentence {
  std::string text;
  int doc_rank;
  int position;
  double sim;
};

inline std::vector<RankedSentence> rank_sentences(const TfIdf& idx, const std::vector<RankedDoc>& docs,
                                                  const std::map<std::string, std::vector<std::string>>& sentences,
                                                  const std::string& claim, int k2) {
  Bag q = idx.vector(claim);
  std::vector<RankedSentence> all;
  for (std::size_t r = 0; r < docs.size(); ++r) {
    const auto& ss = sentences.at(docs[r].id);
    for (std::size_t p = 0; p < ss.size(); ++p)
      all.push_back({ss[p], static_cast<int>(r), static_cast<int>(p), cosine(q, idx.vector(ss[p]))});
  }
  std::sort(all.begin(), all.end(), [](const RankedSentence& a, const RankedSentence& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    if (a.doc_rank != b.doc_rank) return a.doc_rank < b.doc_rank;
    return a.position < b.position;
  });
  if (all.size() > static_cast<std::size_t>(k2)) all.resize(static_cast<std::size_t>(k2));
  return all;
}

// ------------------------------------------------------------------- BLEU

// Corpus BLEU computed from joined-string n-gram keys and a product of
// precisions rather than a sum of logs.
inline double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  long hyp_len = 0, ref_len = 0;
  double num[4] = {0, 0, 0, 0}, den[4] = {0, 0, 0, 0};
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    auto h = factgen::default_tokenizer().split(hyps[s]);
    auto r = factgen::default_tokenizer().split(refs[s]);
    hyp_len += static_cast<long>(h.size());
    ref_len += static_cast<long>(r.size());
    for (int n = 1; n <= 4; ++n) {
      std::unordered_map<std::string, int> rc;
      for (std::size_t i = 0; i + n <= r.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) key += r[i + j] + '\x1f';
        rc[key]++;
      }
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) key += h[i + j] + '\x1f';
        den[n - 1] += 1;
        auto it = rc.find(key);
        if (it != rc.end() && it->second > 0) {
          num[n - 1] += 1;
          it->second--;
        }
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double prod = 1.0;
  for (int n = 0; n < 4; ++n) {
    double p = den[n] == 0 ? 1e-9 : (num[n] == 0 ? 1e-9 / den[n] : num[n] / den[n]);
    prod *= std::pow(p, 0.25);
  }
  double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * prod;
}

// ---------------------------------------------------------------- entities

// Capitalized runs via a regex scan over the raw text, first word of each
// sentence dropped, plus four-digit years starting with 1 or 2.
inline std::set<std::string> entities(const std::string& text) {
  std::set<std::string> out;
  std::istringstream in(text);
  std::string word;
  std::vector<std::string> run;
  bool run_at_start = false, at_start = true;
  auto close = [&] {
    if (!run.empty()) {
      std::size_t from = run_at_start ? 1 : 0;
      std::string joined;
      for (std::size_t i = from; i < run.size(); ++i) {
        std::string w = run[i];
        for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        joined += (joined.empty() ? "" : " ") + w;
      }
      if (!joined.empty()) out.insert(joined);
    }
    run.clear();
  };
  while (in >> word) {
    const char* punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::size_t a = word.find_first_not_of(punct);
    std::size_t b = word.find_last_not_of(punct);
    std::string core = a == std::string::npos ? "" : word.substr(a, b - a + 1);
    if (a != 0 && a != std::string::npos) close();
    bool cap = !core.empty() && core[0] >= 'A' && core[0] <= 'Z';
    if (cap) {
      if (run.empty()) run_at_start = at_start;
      run.push_back(core);
    } else {
      close();
    }
    if (core.size() == 4 && (core[0] == '1' || core[0] == '2') &&
        std::all_of(core.begin(), core.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      out.insert(core);
    bool trailing = b != std::string::npos && b + 1 < word.size();
    if (trailing) close();
    std::string tail = b == std::string::npos ? word : word.substr(b + 1);
    bool stop = tail.find_first_of(".!?") != std::string::npos;
    if (!core.empty() || stop) at_start = stop;
  }
  close();
  return out;
}

// -------------------------------------------------------------- statistics

// Upper tail of the chi-square distribution.
inline double chi_square_sf(double x, int df) { return boost::math::gamma_q(df / 2.0, x / 2.0); }

// Binary logistic regression by Newton iterations with a small ridge term.
struct Logistic {
  Eigen::VectorXd w;
  double b = 0.0;

  void fit(const std::vector<Eigen::RowVectorXd>& x, const std::vector<int>& y, double ridge = 1e-3, int iters = 50) {
    const Eigen::Index d = x.front().size();
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
    for (int it = 0; it < iters; ++it) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d + 1);
      Mat H = Mat::Identity(d + 1, d + 1) * ridge;
      H(d, d) = 1e-9;
      for (std::size_t i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xi(d + 1);
        xi.head(d) = x[i].transpose();
        xi(d) = 1.0;
        double p = 1.0 / (1.0 + std::exp(-xi.dot(theta)));
        g += (p - y[i]) * xi;
        H += p * (1 - p) * xi * xi.transpose();
      }
      g.head(d) += ridge * theta.head(d);
      Eigen::VectorXd step = H.ldlt().solve(g);
      theta -= step;
      if (step.norm() < 1e-10) break;
    }
    w = theta.head(d);
    b = theta(d);
  }

  int predict(const Eigen::RowVectorXd& x) const { return x.dot(w.transpose()) + b > 0.0 ? 1 : 0; }
};

}  // namespace oracle
