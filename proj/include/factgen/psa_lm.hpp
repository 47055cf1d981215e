#pragma once

// Pseudo-self-attentive conditional language model. A bidirectional encoder
// reads [Claim] x_1..x_N [Fact] f_1..f_K; every decoder block projects the
// claim span and the fact span of the encoder output with its own key/value
// matrices and appends them to its causal self-attention key/value set.

#include <cstdint>
#include <span>
#include <vector>

#include "factgen/autograd.hpp"
#include "factgen/corpus.hpp"
#include "factgen/parameters.hpp"
#include "factgen/transformer.hpp"

namespace factgen {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 2;
  int n_encoder_blocks = 2;
  int n_decoder_blocks = 2;
  int ffn_dim = 256;
  int max_positions = 512;
  double init_std = 0.02;

  /// 2 blocks each, 2 heads, width 64.
  static ModelConfig desk(int vocab_size);
  /// Encoder of 4 blocks with 12 heads and 3072 feed-forward units over a
  /// 12-block, 768-wide decoder.
  static ModelConfig full_scale(int vocab_size);

  void validate() const;
};

struct EncoderBlock {
  LayerNorm ln_attn;
  Linear query, key, value, out;
  LayerNorm ln_ffn;
  FeedForward ffn;
};

struct DecoderBlock {
  LayerNorm ln_attn;
  Linear query, key, value, out;
  // Source projections; distinct tensors, randomly initialized, encoder group.
  Linear claim_key, claim_value, fact_key, fact_value;
  LayerNorm ln_ffn;
  FeedForward ffn;
};

struct EncoderOutput {
  Var hidden;  // (claim_len + fact_len) x d_model, or invalid when both are empty
  int claim_len = 0;
  int fact_len = 0;

  Var claim() const;  // invalid Var when claim_len == 0
  Var facts() const;  // invalid Var when fact_len == 0
};

struct ForwardResult {
  Var logits;          // M x vocab_size
  Var decoder_hidden;  // M x d_model, final layer after the closing layer norm
};

class PsaModel {
 public:
  PsaModel(const ModelConfig& config, std::uint64_t seed);
  PsaModel(PsaModel&&) = default;
  PsaModel& operator=(PsaModel&&) = default;
  PsaModel(const PsaModel&) = delete;
  PsaModel& operator=(const PsaModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Full (unmasked) self-attention over the concatenated claim+fact ids.
  EncoderOutput encode(Graph& g, std::span<const int> claim_ids, std::span<const int> fact_ids) const;

  /// Teacher-forced decoder pass over input_ids; row i conditions on
  /// input_ids[0..i] and the whole source.
  ForwardResult decode(Graph& g, std::span<const int> input_ids, const EncoderOutput& source) const;

  /// Decoder input is content_ids without its final EOS; see lm_targets().
  ForwardResult forward_lm(Graph& g, const TokenizedExample& example, bool use_facts = true) const;

  const std::vector<EncoderBlock>& encoder_blocks() const { return encoder_blocks_; }
  const std::vector<DecoderBlock>& decoder_blocks() const { return decoder_blocks_; }
  Parameter& decoder_embedding() const { return *dec_tokens_; }

 private:
  ModelConfig config_;
  ParameterSet params_;
  Parameter* enc_tokens_ = nullptr;
  Parameter* enc_positions_ = nullptr;
  std::vector<EncoderBlock> encoder_blocks_;
  LayerNorm enc_final_;
  Parameter* dec_tokens_ = nullptr;
  Parameter* dec_positions_ = nullptr;
  std::vector<DecoderBlock> decoder_blocks_;
  LayerNorm dec_final_;
  Linear lm_head_;
};

std::vector<int> lm_inputs(const TokenizedExample& example);
std::vector<int> lm_targets(const TokenizedExample& example);

struct CausalLoss {
  Var total;       // sum of -log p over predicted tokens (nats per sequence)
  int tokens = 0;  // non-PAD targets
  double mean_per_token() const { return total.scalar() / tokens; }
};

/// target_ids[i] is the token that follows logits row i. PAD targets are
/// excluded; throws ValidationError when nothing remains.
CausalLoss causal_loss(Var logits, std::span<const int> target_ids);

}  // namespace factgen
