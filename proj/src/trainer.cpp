#include "factgen/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "factgen/errors.hpp"

namespace factgen {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::pretrain_psa: return "pretrain_psa";
    case Phase::pretrain_cr: return "pretrain_cr";
    case Phase::stage1: return "stage1";
    case Phase::stage2: return "stage2";
  }
  return "unknown";
}

void TrainingConfig::validate() const {
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  if (!(lr_encoder > 0.0 && lr_decoder > 0.0 && lr_cr > 0.0))
    throw ValidationError("learning rates must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("Adam betas must lie in [0, 1)");
  if (epochs_1 < 0 || epochs_2 < 0 || pretrain_psa_epochs < 0 || pretrain_cr_epochs < 0)
    throw ValidationError("epoch counts must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (checkpoint_interval_steps < 0) throw ValidationError("checkpoint_interval_steps must be non-negative");
  if (!(p_mask >= 0.0 && p_mask <= 1.0)) throw ValidationError("p_mask must lie in [0, 1]");
}

std::vector<std::string> TrainTrace::phase_sequence() const {
  std::vector<std::string> out;
  const TraceRow* prev = nullptr;
  for (const TraceRow& r : rows) {
    bool pretraining = r.phase == Phase::pretrain_psa || r.phase == Phase::pretrain_cr;
    bool new_segment = prev == nullptr || prev->phase != r.phase || (!pretraining && prev->epoch != r.epoch);
    if (new_segment) out.emplace_back(to_string(r.phase));
    prev = &r;
  }
  return out;
}

void TrainTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "phase,epoch,step,l_cll,l_mll,l_total,fact_tokens\n";
  char buf[256];
  for (const TraceRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%ld,%.17g,%.17g,%.17g,%ld\n", to_string(r.phase), r.epoch, r.step,
                  r.l_cll, r.l_mll, r.l_total, r.fact_tokens);
    out << buf;
  }
}

Trainer::Trainer(FactGenModel& model, const TrainingConfig& config)
    : model_(&model),
      config_(config),
      optimizer_(AdamConfig{config.adam_beta1, config.adam_beta2, config.adam_eps}),
      order_rng_(config.seed * 2 + 1),
      mask_rng_(config.seed * 2 + 2) {
  config_.validate();
  optimizer_.add_group("encoder", config_.lr_encoder, model.lm.parameters().group(ParamGroup::encoder));
  optimizer_.add_group("decoder", config_.lr_decoder, model.lm.parameters().group(ParamGroup::decoder));
  optimizer_.add_group("reconstructor", config_.lr_cr, model.cr.parameters().group(ParamGroup::reconstructor));
}

StepLosses Trainer::accumulate(std::span<const TokenizedExample> batch, std::span<const MaskedClaim> masks,
                               bool use_facts, double cll_weight, double mll_weight, bool backprop) const {
  if (batch.empty() && masks.empty()) throw ValidationError("empty batch");
  const bool compute_mll = !masks.empty();
  const std::size_t n = batch.empty() ? masks.size() : batch.size();
  if (!batch.empty() && compute_mll && masks.size() != batch.size())
    throw ValidationError("one masked claim is required per example");
  const double inv_n = 1.0 / static_cast<double>(n);

  StepLosses sum;
  long tokens = 0;
  FactGenModel& model = *model_;
  for (std::size_t i = 0; i < n; ++i) {
    Graph g;
    std::vector<Var> terms;
    std::vector<double> weights;
    std::optional<PooledState> pooled;
    if (!batch.empty()) {
      ForwardResult fr = model.lm.forward_lm(g, batch[i], use_facts);
      CausalLoss cll = causal_loss(fr.logits, lm_targets(batch[i]));
      sum.cll += cll.total.scalar() * inv_n;
      tokens += cll.tokens;
      terms.push_back(cll.total);
      weights.push_back(cll_weight * inv_n);
      pooled = pool_decoder_states(fr.decoder_hidden);
      if (use_facts) sum.fact_tokens += static_cast<long>(batch[i].fact_ids.size());
    } else {
      pooled = PooledState{g.constant(Matrix::Zero(1, model.cr.config().d_model))};
    }
    if (compute_mll) {
      Var logits = model.cr.reconstruct(g, masks[i], pooled, model.shared_tokens());
      Var mll = masked_loss(logits, masks[i]);
      sum.mll += mll.scalar() * inv_n;
      terms.push_back(mll);
      weights.push_back(mll_weight * inv_n);
    }
    if (backprop && !terms.empty()) g.backward(ops::weighted_sum(terms, weights));
  }
  sum.total = sum.cll + config_.lambda * sum.mll;
  sum.cll_per_token = tokens > 0 ? sum.cll * static_cast<double>(n) / static_cast<double>(tokens) : 0.0;
  return sum;
}

void Trainer::apply_update(const StepLosses& losses) {
  auto params = model_->parameters();
  bool finite = std::isfinite(losses.cll) && std::isfinite(losses.mll) && std::isfinite(losses.total);
  double grad_sq = 0.0;
  for (const Parameter* p : params) grad_sq += p->grad.squaredNorm();
  if (!finite || !std::isfinite(grad_sq)) {
    for (Parameter* p : params) p->zero_grad();
    std::ostringstream msg;
    msg << "non-finite loss at step " << optimizer_.steps() + 1 << ": l_cll=" << losses.cll
        << " l_mll=" << losses.mll << " l_total=" << losses.total << " grad_norm=" << std::sqrt(grad_sq);
    throw NonFiniteLossError(msg.str());
  }
  clip_grad_norm(params, config_.clip_norm);
  optimizer_.step();
  for (Parameter* p : params) p->zero_grad();
}

StepLosses Trainer::joint_step(std::span<const TokenizedExample> batch, std::span<const MaskedClaim> masks,
                               bool use_facts) {
  if (batch.empty()) throw ValidationError("empty batch");
  for (Parameter* p : model_->parameters()) p->zero_grad();
  StepLosses l = accumulate(batch, masks, use_facts, 1.0, config_.lambda, true);
  apply_update(l);
  return l;
}

StepLosses Trainer::lm_step(std::span<const TokenizedExample> batch, bool use_facts) {
  if (batch.empty()) throw ValidationError("empty batch");
  for (Parameter* p : model_->parameters()) p->zero_grad();
  StepLosses l = accumulate(batch, {}, use_facts, 1.0, 0.0, true);
  l.mll = 0.0;
  l.total = l.cll;
  apply_update(l);
  return l;
}

StepLosses Trainer::cr_step(std::span<const MaskedClaim> masks) {
  if (masks.empty()) throw ValidationError("empty batch");
  for (Parameter* p : model_->parameters()) p->zero_grad();
  StepLosses l = accumulate({}, masks, false, 0.0, 1.0, true);
  l.total = config_.lambda * l.mll;
  apply_update(l);
  return l;
}

StepLosses Trainer::evaluate(std::span<const TokenizedExample> batch, std::span<const MaskedClaim> masks,
                             bool use_facts) const {
  return accumulate(batch, masks, use_facts, 1.0, 1.0, false);
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!config_.shuffle) return order;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(order_rng_() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void Trainer::refresh_masks(std::span<const TokenizedExample> corpus, std::vector<MaskedClaim>& masks,
                            bool first) {
  if (!first && config_.freeze_masks) return;
  masks.clear();
  masks.reserve(corpus.size());
  for (const TokenizedExample& ex : corpus) masks.push_back(mask_claim(ex.claim_ids, config_.p_mask, mask_rng_));
}

void Trainer::run_epoch(Phase phase, int epoch, std::span<const TokenizedExample> corpus,
                        std::vector<MaskedClaim>& masks, TrainTrace& trace,
                        const std::optional<std::filesystem::path>& checkpoint_dir, const StepCallback& on_step) {
  const bool uses_masks = phase != Phase::pretrain_psa;
  if (uses_masks) refresh_masks(corpus, masks, masks.empty());
  auto order = epoch_order(corpus.size());
  const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<TokenizedExample> batch;
    std::vector<MaskedClaim> batch_masks;
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) {
      batch.push_back(corpus[order[k]]);
      if (uses_masks) batch_masks.push_back(masks[order[k]]);
    }
    StepLosses l;
    switch (phase) {
      case Phase::pretrain_psa: l = lm_step(batch, false); break;
      case Phase::pretrain_cr: l = cr_step(batch_masks); break;
      case Phase::stage1: l = joint_step(batch, batch_masks, false); break;
      case Phase::stage2: l = joint_step(batch, batch_masks, true); break;
    }
    TraceRow row{phase,           epoch,           global_step(), l.cll, l.mll, l.cll + config_.lambda * l.mll,
                 l.cll_per_token, l.fact_tokens};
    trace.rows.push_back(row);
    if (on_step) on_step(row);
    if (checkpoint_dir && config_.checkpoint_interval_steps > 0 &&
        global_step() % config_.checkpoint_interval_steps == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "step_%08ld.ckpt", global_step());
      auto path = *checkpoint_dir / name;
      save_checkpoint(path, *model_, &optimizer_, global_step());
      trace.checkpoints.push_back(path);
    }
  }
}

TrainTrace Trainer::run_schedule(std::span<const TokenizedExample> corpus,
                                 const std::optional<std::filesystem::path>& checkpoint_dir,
                                 const StepCallback& on_step) {
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  if (config_.epochs_2 > 0) {
    bool any_facts = false;
    for (const auto& ex : corpus) any_facts = any_facts || !ex.fact_ids.empty();
    if (!any_facts) throw ValidationError("stage 2 needs retrieved facts but no training example has any");
  }
  if (checkpoint_dir) std::filesystem::create_directories(*checkpoint_dir);

  TrainTrace trace;
  for (const auto& g : optimizer_.groups()) trace.groups.emplace_back(g.name, g.lr);
  std::vector<MaskedClaim> masks;
  for (int e = 1; e <= config_.pretrain_psa_epochs; ++e)
    run_epoch(Phase::pretrain_psa, e, corpus, masks, trace, checkpoint_dir, on_step);
  for (int e = 1; e <= config_.pretrain_cr_epochs; ++e)
    run_epoch(Phase::pretrain_cr, e, corpus, masks, trace, checkpoint_dir, on_step);
  for (int e = 1; e <= config_.epochs_1; ++e)
    run_epoch(Phase::stage1, e, corpus, masks, trace, checkpoint_dir, on_step);
  for (int e = 1; e <= config_.epochs_2; ++e)
    run_epoch(Phase::stage2, e, corpus, masks, trace, checkpoint_dir, on_step);
  return trace;
}

}  // namespace factgen
