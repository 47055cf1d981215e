#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "factgen/checkpoint.hpp"
#include "factgen/corpus.hpp"

namespace factgen {

struct SamplerConfig {
  double p = 0.9;
  int max_length = 300;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  double repetition_penalty = 1.0;  // 1 disables; >1 divides positive logits of seen tokens
  int min_length = 0;               // EOS is suppressed before this many tokens

  void validate() const;
};

/// Token ids of the smallest prefix, by descending probability with ties in
/// ascending id, whose cumulative mass reaches p. Zero-probability tokens are
/// never included.
std::vector<int> nucleus_filter(std::span<const double> probabilities, double p);

struct Nucleus {
  std::vector<int> support;
  std::vector<double> probabilities;  // renormalized over support, same order
};

Nucleus renormalized_nucleus(std::span<const double> probabilities, double p);

/// Draws one token from the renormalized nucleus.
int sample_nucleus(std::span<const double> probabilities, double p, std::mt19937_64& rng);

/// Softmax of logits / temperature.
std::vector<double> token_distribution(std::span<const double> logits, double temperature);

struct Generation {
  std::vector<int> token_ids;  // sampled tokens, including a final EOS when one was drawn
  std::string text;
  bool stopped_at_eos = false;
};

/// Autoregressive nucleus sampling from BOS. Stops at EOS or after
/// config.max_length tokens. Deterministic for a fixed seed.
Generation generate(const FactGenModel& model, const Vocabulary& vocab, std::string_view claim,
                    std::span<const std::string> facts, const SamplerConfig& config,
                    const TokenizeOptions& options = {});

/// Greedy (argmax) decoding for comparison with p -> 0.
Generation generate_greedy(const FactGenModel& model, const Vocabulary& vocab, std::string_view claim,
                           std::span<const std::string> facts, int max_length,
                           const TokenizeOptions& options = {});

}  // namespace factgen
