#pragma once

// Synthetic-text detector: a generator's decoder reads the text with an empty
// source, its final hidden states are mean-pooled, and a linear layer maps the
// pooled vector to two logits.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "factgen/checkpoint.hpp"
#include "factgen/corpus.hpp"
#include "factgen/psa_lm.hpp"

namespace factgen {

enum class DefenderLabel { human = 0, synthetic = 1 };

const char* to_string(DefenderLabel l);

/// Decoder input ids for a text: BOS followed by at most max_len tokens.
/// Throws ValidationError when the text has no tokens.
std::vector<int> defender_input(std::string_view text, const Vocabulary& vocab, int max_len);

/// Mean of the final decoder states over the text positions (BOS row excluded).
Var pooled_representation(Graph& g, const PsaModel& model, std::span<const int> input_ids);

Eigen::RowVectorXd extract_representation(std::string_view text, const PsaModel& model, const Vocabulary& vocab,
                                          int max_len = 300);

struct DefenderConfig {
  int epochs = 20;
  int batch_size = 16;
  double lr_head = 1e-2;
  double lr_generator = 1e-5;
  double holdout_fraction = 0.3;
  bool finetune_generator = true;
  std::uint64_t seed = 7;
  int max_len = 300;

  void validate() const;
};

class DefenderModel {
 public:
  DefenderModel(PsaModel generator, long checkpoint_step, std::uint64_t vocab_fingerprint, bool finetune_generator,
                std::uint64_t seed);

  PsaModel& generator() { return generator_; }
  const PsaModel& generator() const { return generator_; }
  ParameterSet& head_parameters() { return head_params_; }
  const Linear& head() const { return head_; }
  long checkpoint_step() const { return checkpoint_step_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }
  bool finetune_generator() const { return finetune_generator_; }

  /// 1 x 2 logits, columns ordered human, synthetic.
  Var logits(Graph& g, std::span<const int> input_ids) const;
  Var logits_from_features(Graph& g, const Eigen::RowVectorXd& features) const;

  void save(const std::filesystem::path& path) const;
  static DefenderModel load(const std::filesystem::path& path);

 private:
  PsaModel generator_;
  ParameterSet head_params_;
  Linear head_;
  long checkpoint_step_ = 0;
  std::uint64_t vocab_fingerprint_ = 0;
  bool finetune_generator_ = true;
};

struct DefenseRecord {
  std::string id;
  std::string text;
  DefenderLabel label;
};

struct DefenseSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Per-class shuffled split; each class contributes round(n_c * fraction)
/// items to the holdout, at least one when it has two or more.
DefenseSplit split_dataset(std::span<const DefenseRecord> data, double holdout_fraction, std::uint64_t seed);

/// Throws ValidationError when a class is empty or a text occurs in both classes.
void validate_dataset(std::span<const DefenseRecord> data);

struct DefenderResult {
  DefenderModel model;
  DefenseSplit split;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;
};

DefenderResult train_defender(std::span<const DefenseRecord> data, PsaModel generator, long checkpoint_step,
                              const Vocabulary& vocab, const DefenderConfig& config);

struct Classification {
  DefenderLabel label = DefenderLabel::human;
  double score = 0.0;              // probability of label
  double probabilities[2] = {};    // human, synthetic
};

Classification classify(std::string_view text, const DefenderModel& defender, const Vocabulary& vocab,
                        int max_len = 300);

double accuracy(std::span<const DefenseRecord> data, std::span<const std::size_t> indices,
                const DefenderModel& defender, const Vocabulary& vocab, int max_len = 300);

}  // namespace factgen
