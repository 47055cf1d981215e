#pragma once

// Joint objective L = L_CLL + lambda * L_MLL and the two-stage schedule:
// PSA pretraining on (X, Y), reconstructor pretraining on masked claims,
// epochs_1 joint epochs without facts, then epochs_2 joint epochs with facts.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "factgen/checkpoint.hpp"
#include "factgen/corpus.hpp"
#include "factgen/parameters.hpp"

namespace factgen {

enum class Phase { pretrain_psa, pretrain_cr, stage1, stage2 };

const char* to_string(Phase phase);

struct TrainingConfig {
  double lambda = 0.001;
  double lr_encoder = 1e-3;
  double lr_decoder = 1e-5;
  double lr_cr = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.998;
  double adam_eps = 1e-8;
  int epochs_1 = 4;
  int epochs_2 = 2;
  int pretrain_psa_epochs = 2;
  int pretrain_cr_epochs = 2;
  int batch_size = 8;
  std::uint64_t seed = 13;
  long checkpoint_interval_steps = 0;  // 0 disables periodic checkpoints
  double clip_norm = 1.0;              // <= 0 disables clipping
  double p_mask = 0.15;
  bool freeze_masks = false;  // draw each claim's mask once instead of every epoch
  bool shuffle = true;

  void validate() const;
};

struct TraceRow {
  Phase phase = Phase::pretrain_psa;
  int epoch = 0;   // 1-based within the phase
  long step = 0;   // global optimizer step after the update
  double l_cll = 0.0;
  double l_mll = 0.0;
  double l_total = 0.0;
  double cll_per_token = 0.0;
  long fact_tokens = 0;  // fact tokens fed to the encoder during the step
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  std::vector<std::pair<std::string, double>> groups;  // optimizer group name, learning rate
  std::vector<std::filesystem::path> checkpoints;

  /// One entry per pretraining phase and one per stage epoch, e.g.
  /// pretrain_psa, pretrain_cr, stage1, stage1, ..., stage2.
  std::vector<std::string> phase_sequence() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Per-batch losses: means over the batch of per-sequence sums.
struct StepLosses {
  double cll = 0.0;
  double mll = 0.0;
  double total = 0.0;
  double cll_per_token = 0.0;
  long fact_tokens = 0;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  /// Optimizer groups: encoder (lr_encoder), decoder (lr_decoder), reconstructor (lr_cr).
  Trainer(FactGenModel& model, const TrainingConfig& config);

  /// One update on L_CLL + lambda * L_MLL. Facts are ignored unless use_facts.
  StepLosses joint_step(std::span<const TokenizedExample> batch, std::span<const MaskedClaim> masks,
                        bool use_facts);
  /// One update on L_CLL alone.
  StepLosses lm_step(std::span<const TokenizedExample> batch, bool use_facts);
  /// One update on L_MLL alone with a zero pooled state.
  StepLosses cr_step(std::span<const MaskedClaim> masks);

  /// Joint losses without touching parameters or gradients.
  StepLosses evaluate(std::span<const TokenizedExample> batch, std::span<const MaskedClaim> masks,
                      bool use_facts) const;

  using StepCallback = std::function<void(const TraceRow&)>;

  /// Runs the full schedule on corpus. Throws ValidationError before any
  /// update when stage 2 is requested but no example carries facts.
  TrainTrace run_schedule(std::span<const TokenizedExample> corpus,
                          const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                          const StepCallback& on_step = {});

  Adam& optimizer() { return optimizer_; }
  const TrainingConfig& config() const { return config_; }
  long global_step() const { return optimizer_.steps(); }

 private:
  StepLosses accumulate(std::span<const TokenizedExample> batch, std::span<const MaskedClaim> masks,
                        bool use_facts, double cll_weight, double mll_weight, bool backprop) const;
  void apply_update(const StepLosses& losses);
  void run_epoch(Phase phase, int epoch, std::span<const TokenizedExample> corpus,
                 std::vector<MaskedClaim>& masks, TrainTrace& trace,
                 const std::optional<std::filesystem::path>& checkpoint_dir, const StepCallback& on_step);
  std::vector<std::size_t> epoch_order(std::size_t n);
  void refresh_masks(std::span<const TokenizedExample> corpus, std::vector<MaskedClaim>& masks, bool first);

  FactGenModel* model_;
  TrainingConfig config_;
  Adam optimizer_;
  std::mt19937_64 order_rng_;
  std::mt19937_64 mask_rng_;
};

}  // namespace factgen
