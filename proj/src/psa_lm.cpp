#include "factgen/psa_lm.hpp"

#include <string>

#include "factgen/errors.hpp"

namespace factgen {

ModelConfig ModelConfig::desk(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::full_scale(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 768;
  c.n_heads = 12;
  c.n_encoder_blocks = 4;
  c.n_decoder_blocks = 12;
  c.ffn_dim = 3072;
  c.max_positions = 1024;
  return c;
}

void ModelConfig::validate() const {
  if (vocab_size <= special::count) throw ValidationError("model vocab_size must exceed the special tokens");
  if (d_model < 1 || n_heads < 1 || n_encoder_blocks < 1 || n_decoder_blocks < 1 || ffn_dim < 1 ||
      max_positions < 1)
    throw ValidationError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
  if (!(init_std > 0.0)) throw ValidationError("init_std must be positive");
}

Var EncoderOutput::claim() const {
  return claim_len > 0 ? ops::slice_rows(hidden, 0, claim_len) : Var{};
}

Var EncoderOutput::facts() const {
  return fact_len > 0 ? ops::slice_rows(hidden, claim_len, fact_len) : Var{};
}

PsaModel::PsaModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  NormalSampler init(seed);
  const double sd = config_.init_std;
  const auto d = config_.d_model;
  const auto enc = ParamGroup::encoder;
  const auto dec = ParamGroup::decoder;

  enc_tokens_ = &params_.add("encoder.tokens", enc, config_.vocab_size, d);
  enc_positions_ = &params_.add("encoder.positions", enc, config_.max_positions, d);
  init.fill(enc_tokens_->value, sd);
  init.fill(enc_positions_->value, sd);
  for (int b = 0; b < config_.n_encoder_blocks; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    EncoderBlock blk;
    blk.ln_attn = make_layer_norm(params_, p + ".ln_attn", enc, d);
    blk.query = make_linear(params_, p + ".attn.query", enc, d, d, init, sd);
    blk.key = make_linear(params_, p + ".attn.key", enc, d, d, init, sd);
    blk.value = make_linear(params_, p + ".attn.value", enc, d, d, init, sd);
    blk.out = make_linear(params_, p + ".attn.out", enc, d, d, init, sd);
    blk.ln_ffn = make_layer_norm(params_, p + ".ln_ffn", enc, d);
    blk.ffn = make_feed_forward(params_, p + ".ffn", enc, d, config_.ffn_dim, init, sd);
    encoder_blocks_.push_back(blk);
  }
  enc_final_ = make_layer_norm(params_, "encoder.ln_final", enc, d);

  dec_tokens_ = &params_.add("decoder.tokens", dec, config_.vocab_size, d);
  dec_positions_ = &params_.add("decoder.positions", dec, config_.max_positions, d);
  init.fill(dec_tokens_->value, sd);
  init.fill(dec_positions_->value, sd);
  for (int b = 0; b < config_.n_decoder_blocks; ++b) {
    const std::string p = "decoder.block" + std::to_string(b);
    DecoderBlock blk;
    blk.ln_attn = make_layer_norm(params_, p + ".ln_attn", dec, d);
    blk.query = make_linear(params_, p + ".attn.query", dec, d, d, init, sd);
    blk.key = make_linear(params_, p + ".attn.key", dec, d, d, init, sd);
    blk.value = make_linear(params_, p + ".attn.value", dec, d, d, init, sd);
    blk.out = make_linear(params_, p + ".attn.out", dec, d, d, init, sd);
    blk.claim_key = make_linear(params_, p + ".source.claim_key", enc, d, d, init, sd);
    blk.claim_value = make_linear(params_, p + ".source.claim_value", enc, d, d, init, sd);
    blk.fact_key = make_linear(params_, p + ".source.fact_key", enc, d, d, init, sd);
    blk.fact_value = make_linear(params_, p + ".source.fact_value", enc, d, d, init, sd);
    blk.ln_ffn = make_layer_norm(params_, p + ".ln_ffn", dec, d);
    blk.ffn = make_feed_forward(params_, p + ".ffn", dec, d, config_.ffn_dim, init, sd);
    decoder_blocks_.push_back(blk);
  }
  dec_final_ = make_layer_norm(params_, "decoder.ln_final", dec, d);
  lm_head_ = make_linear(params_, "decoder.lm_head", dec, d, config_.vocab_size, init, sd);
}

namespace {

void check_ids(std::span<const int> ids, int vocab_size, const char* what) {
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw ValidationError(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary");
}

Var embed(Graph& g, Parameter& tokens, Parameter& positions, std::span<const int> ids) {
  auto pos = iota_positions(ids.size());
  return ops::add(ops::gather_rows(g.param(tokens), ids), ops::gather_rows(g.param(positions), pos));
}

}  // namespace

EncoderOutput PsaModel::encode(Graph& g, std::span<const int> claim_ids, std::span<const int> fact_ids) const {
  const std::size_t n = claim_ids.size() + fact_ids.size();
  if (n > static_cast<std::size_t>(config_.max_positions))
    throw ValidationError("source length " + std::to_string(n) + " exceeds max_positions " +
                          std::to_string(config_.max_positions));
  check_ids(claim_ids, config_.vocab_size, "claim");
  check_ids(fact_ids, config_.vocab_size, "fact");
  EncoderOutput out;
  out.claim_len = static_cast<int>(claim_ids.size());
  out.fact_len = static_cast<int>(fact_ids.size());
  if (n == 0) return out;

  std::vector<int> ids(claim_ids.begin(), claim_ids.end());
  ids.insert(ids.end(), fact_ids.begin(), fact_ids.end());
  Var x = embed(g, *enc_tokens_, *enc_positions_, ids);
  for (const EncoderBlock& b : encoder_blocks_) {
    Var h = b.ln_attn.apply(g, x);
    Var attn = multi_head_psa(b.query.apply(g, h), b.key.apply(g, h), b.value.apply(g, h), {}, {}, {}, {},
                              config_.n_heads, /*causal=*/false);
    x = ops::add(x, b.out.apply(g, attn));
    x = ops::add(x, b.ffn.apply(g, b.ln_ffn.apply(g, x)));
  }
  out.hidden = enc_final_.apply(g, x);
  return out;
}

ForwardResult PsaModel::decode(Graph& g, std::span<const int> input_ids, const EncoderOutput& source) const {
  if (input_ids.empty()) throw ValidationError("decoder input is empty");
  if (input_ids.size() > static_cast<std::size_t>(config_.max_positions))
    throw ValidationError("content length " + std::to_string(input_ids.size()) + " exceeds max_positions " +
                          std::to_string(config_.max_positions));
  check_ids(input_ids, config_.vocab_size, "content");
  Var claim = source.claim();
  Var facts = source.facts();

  Var y = embed(g, *dec_tokens_, *dec_positions_, input_ids);
  for (const DecoderBlock& b : decoder_blocks_) {
    Var h = b.ln_attn.apply(g, y);
    Var kx, vx, kf, vf;
    if (claim.valid()) {
      kx = b.claim_key.apply(g, claim);
      vx = b.claim_value.apply(g, claim);
    }
    if (facts.valid()) {
      kf = b.fact_key.apply(g, facts);
      vf = b.fact_value.apply(g, facts);
    }
    Var attn = multi_head_psa(b.query.apply(g, h), b.key.apply(g, h), b.value.apply(g, h), kx, vx, kf, vf,
                              config_.n_heads, /*causal=*/true);
    y = ops::add(y, b.out.apply(g, attn));
    y = ops::add(y, b.ffn.apply(g, b.ln_ffn.apply(g, y)));
  }
  ForwardResult r;
  r.decoder_hidden = dec_final_.apply(g, y);
  r.logits = lm_head_.apply(g, r.decoder_hidden);
  return r;
}

ForwardResult PsaModel::forward_lm(Graph& g, const TokenizedExample& example, bool use_facts) const {
  std::span<const int> facts = use_facts ? std::span<const int>(example.fact_ids) : std::span<const int>{};
  EncoderOutput source = encode(g, example.claim_ids, facts);
  return decode(g, lm_inputs(example), source);
}

std::vector<int> lm_inputs(const TokenizedExample& example) {
  if (example.content_ids.size() < 2) throw ValidationError("content needs at least BOS and EOS");
  return {example.content_ids.begin(), example.content_ids.end() - 1};
}

std::vector<int> lm_targets(const TokenizedExample& example) {
  if (example.content_ids.size() < 2) throw ValidationError("content needs at least BOS and EOS");
  return {example.content_ids.begin() + 1, example.content_ids.end()};
}

CausalLoss causal_loss(Var logits, std::span<const int> target_ids) {
  if (static_cast<Eigen::Index>(target_ids.size()) != logits.rows())
    throw ValidationError("causal_loss: " + std::to_string(target_ids.size()) + " targets for " +
                          std::to_string(logits.rows()) + " logit rows");
  std::vector<int> targets(target_ids.begin(), target_ids.end());
  int count = 0;
  for (int& t : targets) {
    if (t == special::pad) {
      t = -1;
    } else {
      ++count;
    }
  }
  if (count == 0) throw ValidationError("causal_loss: every target is PAD");
  return {ops::cross_entropy_sum(logits, targets), count};
}

}  // namespace factgen
