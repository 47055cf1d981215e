#include "factgen/claim_reconstructor.hpp"

#include <string>

#include "factgen/errors.hpp"

namespace factgen {

CRConfig CRConfig::desk(int vocab_size, int d_model) {
  CRConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  return c;
}

CRConfig CRConfig::full_scale(int vocab_size, int d_model) {
  CRConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.d_cr = 256;
  c.n_heads = 4;
  c.n_blocks = 3;
  c.ffn_dim = 1024;
  return c;
}

void CRConfig::validate() const {
  if (vocab_size <= special::count) throw ValidationError("reconstructor vocab_size must exceed the special tokens");
  if (d_model < 1 || d_cr < 1 || n_heads < 1 || n_blocks < 1 || ffn_dim < 1 || max_positions < 1)
    throw ValidationError("reconstructor dimensions must be positive");
  if (d_cr % n_heads != 0) throw ValidationError("d_cr must be divisible by the reconstructor's n_heads");
  if (share_embeddings && d_cr != d_model)
    throw ValidationError("share_embeddings requires d_cr == d_model");
}

PooledState pool_decoder_states(Var decoder_hidden, std::span<const bool> pad_mask) {
  if (!pad_mask.empty() && static_cast<Eigen::Index>(pad_mask.size()) != decoder_hidden.rows())
    throw ValidationError("pad mask length does not match decoder rows");
  std::vector<int> keep;
  for (Eigen::Index i = 0; i < decoder_hidden.rows(); ++i)
    if (pad_mask.empty() || !pad_mask[static_cast<std::size_t>(i)]) keep.push_back(static_cast<int>(i));
  if (keep.empty()) throw ValidationError("cannot pool: every decoder position is padding");
  if (keep.size() == static_cast<std::size_t>(decoder_hidden.rows())) return {ops::mean_rows(decoder_hidden)};
  return {ops::mean_rows(ops::gather_rows(decoder_hidden, keep))};
}

ClaimReconstructor::ClaimReconstructor(const CRConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  NormalSampler init(seed);
  const double sd = config_.init_std;
  const auto d = config_.d_cr;
  const auto grp = ParamGroup::reconstructor;

  tokens_ = &params_.add("reconstructor.tokens", grp, config_.vocab_size, d);
  positions_ = &params_.add("reconstructor.positions", grp, config_.max_positions, d);
  init.fill(tokens_->value, sd);
  init.fill(positions_->value, sd);
  for (int b = 0; b < config_.n_blocks; ++b) {
    const std::string p = "reconstructor.block" + std::to_string(b);
    ReconstructorBlock blk;
    blk.ln_attn = make_layer_norm(params_, p + ".ln_attn", grp, d);
    blk.query = make_linear(params_, p + ".attn.query", grp, d, d, init, sd);
    blk.key = make_linear(params_, p + ".attn.key", grp, d, d, init, sd);
    blk.value = make_linear(params_, p + ".attn.value", grp, d, d, init, sd);
    blk.out = make_linear(params_, p + ".attn.out", grp, d, d, init, sd);
    blk.pooled_key = make_linear(params_, p + ".pooled.key", grp, config_.d_model, d, init, sd);
    blk.pooled_value = make_linear(params_, p + ".pooled.value", grp, config_.d_model, d, init, sd);
    blk.ln_ffn = make_layer_norm(params_, p + ".ln_ffn", grp, d);
    blk.ffn = make_feed_forward(params_, p + ".ffn", grp, d, config_.ffn_dim, init, sd);
    blocks_.push_back(blk);
  }
  final_ = make_layer_norm(params_, "reconstructor.ln_final", grp, d);
  head_ = make_linear(params_, "reconstructor.head", grp, d, config_.vocab_size, init, sd);
}

Var ClaimReconstructor::reconstruct(Graph& g, const MaskedClaim& masked, const std::optional<PooledState>& pooled,
                                    Parameter* shared_tokens) const {
  const auto& ids = masked.masked_ids;
  if (ids.empty()) throw ValidationError("cannot reconstruct an empty claim");
  if (ids.size() > static_cast<std::size_t>(config_.max_positions))
    throw ValidationError("claim length exceeds reconstructor max_positions");
  for (int id : ids)
    if (id < 0 || id >= config_.vocab_size) throw ValidationError("claim token outside reconstructor vocabulary");
  if (pooled && (pooled->h_y.rows() != 1 || pooled->h_y.cols() != config_.d_model))
    throw ValidationError("pooled state width " + std::to_string(pooled->h_y.cols()) +
                          " does not match reconstructor d_model " + std::to_string(config_.d_model));
  Parameter* table = tokens_;
  if (config_.share_embeddings) {
    if (shared_tokens == nullptr) throw ValidationError("share_embeddings set but no shared table given");
    if (shared_tokens->value.rows() != config_.vocab_size || shared_tokens->value.cols() != config_.d_cr)
      throw ValidationError("shared token table has the wrong shape");
    table = shared_tokens;
  }

  auto pos = iota_positions(ids.size());
  Var x = ops::add(ops::gather_rows(g.param(*table), ids), ops::gather_rows(g.param(*positions_), pos));
  for (const ReconstructorBlock& b : blocks_) {
    Var h = b.ln_attn.apply(g, x);
    Var kp, vp;
    if (pooled) {
      kp = b.pooled_key.apply(g, pooled->h_y);
      vp = b.pooled_value.apply(g, pooled->h_y);
    }
    Var attn = multi_head_psa(b.query.apply(g, h), b.key.apply(g, h), b.value.apply(g, h), kp, vp, {}, {},
                              config_.n_heads, /*causal=*/false);
    x = ops::add(x, b.out.apply(g, attn));
    x = ops::add(x, b.ffn.apply(g, b.ln_ffn.apply(g, x)));
  }
  return head_.apply(g, final_.apply(g, x));
}

Var masked_loss(Var logits, const MaskedClaim& masked) {
  if (static_cast<Eigen::Index>(masked.masked_ids.size()) != logits.rows())
    throw ValidationError("masked_loss: logits rows do not match claim length");
  Graph& g = *logits.graph();
  if (masked.mask_positions.empty()) return g.constant(Matrix::Zero(1, 1));
  std::vector<int> targets(masked.masked_ids.size(), -1);
  for (int p : masked.mask_positions) targets[static_cast<std::size_t>(p)] = masked.original_ids[static_cast<std::size_t>(p)];
  return ops::cross_entropy_sum(logits, targets);
}

}  // namespace factgen
