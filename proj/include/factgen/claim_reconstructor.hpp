#pragma once

// Masked language model over the claim. Each block's bidirectional
// self-attention gets one extra key/value slot projected from h_Y, the mean
// of the decoder's final hidden states, so L_MLL back-propagates into the
// generator.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "factgen/autograd.hpp"
#include "factgen/corpus.hpp"
#include "factgen/parameters.hpp"
#include "factgen/transformer.hpp"

namespace factgen {

struct CRConfig {
  int vocab_size = 0;
  int d_model = 64;  // width of the injected pooled state
  int d_cr = 32;
  int n_heads = 2;
  int n_blocks = 1;
  int ffn_dim = 128;
  int max_positions = 128;
  bool share_embeddings = false;  // reuse the decoder token table (needs d_cr == d_model)
  double init_std = 0.02;

  /// 1 block, 2 heads, width 32.
  static CRConfig desk(int vocab_size, int d_model);
  /// 3 blocks, 4 heads, width 256.
  static CRConfig full_scale(int vocab_size, int d_model);

  void validate() const;
};

struct ReconstructorBlock {
  LayerNorm ln_attn;
  Linear query, key, value, out;
  Linear pooled_key, pooled_value;  // d_model -> d_cr
  LayerNorm ln_ffn;
  FeedForward ffn;
};

/// 1 x d_model mean of the non-PAD decoder rows.
struct PooledState {
  Var h_y;
};

/// pad_mask[i] true marks row i as padding. Throws ValidationError when every
/// row is padding.
PooledState pool_decoder_states(Var decoder_hidden, std::span<const bool> pad_mask = {});

class ClaimReconstructor {
 public:
  ClaimReconstructor(const CRConfig& config, std::uint64_t seed);
  ClaimReconstructor(ClaimReconstructor&&) = default;
  ClaimReconstructor& operator=(ClaimReconstructor&&) = default;

  const CRConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Logits over the vocabulary at every claim position. Without a pooled
  /// state the extra key/value slot is absent altogether.
  /// shared_tokens replaces the reconstructor's own token table when
  /// share_embeddings is set.
  Var reconstruct(Graph& g, const MaskedClaim& masked, const std::optional<PooledState>& pooled,
                  Parameter* shared_tokens = nullptr) const;

  const std::vector<ReconstructorBlock>& blocks() const { return blocks_; }

 private:
  CRConfig config_;
  ParameterSet params_;
  Parameter* tokens_ = nullptr;
  Parameter* positions_ = nullptr;
  std::vector<ReconstructorBlock> blocks_;
  LayerNorm final_;
  Linear head_;
};

/// Sum over mask positions of -log P(original token). Zero (constant) when
/// nothing is masked.
Var masked_loss(Var logits, const MaskedClaim& masked);

}  // namespace factgen
