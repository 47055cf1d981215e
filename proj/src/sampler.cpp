#include "factgen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "factgen/errors.hpp"

namespace factgen {

void SamplerConfig::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("nucleus p must lie in (0, 1]");
  if (max_length < 1) throw ValidationError("max_length must be positive");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (!(repetition_penalty >= 1.0)) throw ValidationError("repetition_penalty must be >= 1");
  if (min_length < 0) throw ValidationError("min_length must be non-negative");
}

std::vector<int> nucleus_filter(std::span<const double> probabilities, double p) {
  std::vector<int> order;
  for (std::size_t i = 0; i < probabilities.size(); ++i)
    if (probabilities[i] > 0.0) order.push_back(static_cast<int>(i));
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probabilities[a] != probabilities[b]) return probabilities[a] > probabilities[b];
    return a < b;
  });
  std::vector<int> support;
  double mass = 0.0;
  for (int id : order) {
    support.push_back(id);
    mass += probabilities[id];
    if (mass >= p) break;
  }
  return support;
}

Nucleus renormalized_nucleus(std::span<const double> probabilities, double p) {
  Nucleus n;
  n.support = nucleus_filter(probabilities, p);
  double mass = 0.0;
  for (int id : n.support) mass += probabilities[id];
  for (int id : n.support) n.probabilities.push_back(probabilities[id] / mass);
  return n;
}

int sample_nucleus(std::span<const double> probabilities, double p, std::mt19937_64& rng) {
  Nucleus n = renormalized_nucleus(probabilities, p);
  if (n.support.empty()) throw std::invalid_argument("sample_nucleus: distribution has no mass");
  const double u = uniform01(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < n.support.size(); ++i) {
    cum += n.probabilities[i];
    if (u < cum) return n.support[i];
  }
  return n.support.back();
}

std::vector<double> token_distribution(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) m = std::max(m, l / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

namespace {

struct Source {
  Matrix hidden;
  int claim_len = 0;
  int fact_len = 0;
};

Source encode_source(const FactGenModel& model, const Vocabulary& vocab, std::string_view claim,
                     std::span<const std::string> facts, const TokenizeOptions& options) {
  check_vocabulary(model, vocab);
  Document doc{"", std::string(claim), "-", std::nullopt};
  TokenizedExample ex = tokenize_example(doc, facts, vocab, options);
  Graph g;
  EncoderOutput enc = model.lm.encode(g, ex.claim_ids, ex.fact_ids);
  Source s;
  s.claim_len = enc.claim_len;
  s.fact_len = enc.fact_len;
  if (enc.hidden.valid()) s.hidden = enc.hidden.value();
  return s;
}

std::vector<double> next_logits(const FactGenModel& model, const Source& src, std::span<const int> prefix) {
  Graph g;
  EncoderOutput enc;
  enc.claim_len = src.claim_len;
  enc.fact_len = src.fact_len;
  if (src.hidden.size() > 0) enc.hidden = g.constant(src.hidden);
  ForwardResult fr = model.lm.decode(g, prefix, enc);
  const Matrix& l = fr.logits.value();
  std::vector<double> row(static_cast<std::size_t>(l.cols()));
  for (Eigen::Index j = 0; j < l.cols(); ++j) row[static_cast<std::size_t>(j)] = l(l.rows() - 1, j);
  return row;
}

void suppress_structural(std::vector<double>& logits) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int id : {special::pad, special::bos, special::mask, special::claim_mark, special::fact_mark})
    logits[static_cast<std::size_t>(id)] = neg_inf;
}

template <class Choose>
Generation run_decoder(const FactGenModel& model, const Vocabulary& vocab, const Source& src, int max_length,
                       Choose&& choose) {
  const int cap = std::min(max_length, model.lm.config().max_positions);
  std::vector<int> prefix{special::bos};
  Generation out;
  for (int t = 0; t < cap; ++t) {
    std::vector<double> logits = next_logits(model, src, prefix);
    suppress_structural(logits);
    int id = choose(logits, std::span<const int>(prefix).subspan(1));
    out.token_ids.push_back(id);
    if (id == special::eos) {
      out.stopped_at_eos = true;
      break;
    }
    prefix.push_back(id);
  }
  out.text = detokenize(std::span<const int>(prefix).subspan(1), vocab);
  return out;
}

}  // namespace

Generation generate(const FactGenModel& model, const Vocabulary& vocab, std::string_view claim,
                    std::span<const std::string> facts, const SamplerConfig& config,
                    const TokenizeOptions& options) {
  config.validate();
  Source src = encode_source(model, vocab, claim, facts, options);
  std::mt19937_64 rng(config.seed);
  return run_decoder(model, vocab, src, config.max_length, [&](std::vector<double>& logits, std::span<const int> seen) {
    if (config.repetition_penalty > 1.0) {
      std::vector<bool> hit(logits.size(), false);
      for (int id : seen) hit[static_cast<std::size_t>(id)] = true;
      for (std::size_t i = 0; i < logits.size(); ++i)
        if (hit[i]) logits[i] = logits[i] > 0 ? logits[i] / config.repetition_penalty
                                              : logits[i] * config.repetition_penalty;
    }
    if (static_cast<int>(seen.size()) < config.min_length)
      logits[special::eos] = -std::numeric_limits<double>::infinity();
    std::vector<double> probs = token_distribution(logits, config.temperature);
    int id = sample_nucleus(probs, config.p, rng);
    if (probs[static_cast<std::size_t>(id)] <= 0.0) throw std::logic_error("sampled a token outside the nucleus");
    return id;
  });
}

Generation generate_greedy(const FactGenModel& model, const Vocabulary& vocab, std::string_view claim,
                           std::span<const std::string> facts, int max_length, const TokenizeOptions& options) {
  if (max_length < 1) throw ValidationError("max_length must be positive");
  Source src = encode_source(model, vocab, claim, facts, options);
  return run_decoder(model, vocab, src, max_length, [](std::vector<double>& logits, std::span<const int>) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  });
}

}  // namespace factgen
