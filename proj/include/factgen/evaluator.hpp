#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "factgen/corpus.hpp"
#include "json.hpp"

namespace factgen {

/// Corpus BLEU over 1..4-grams with uniform weights and the brevity penalty.
/// An n-gram order with zero matches contributes (1e-9 / candidates) instead of 0.
double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
            const Tokenizer& tokenizer = default_tokenizer());

class EntityRecognizer {
 public:
  virtual ~EntityRecognizer() = default;
  /// Case-folded, whitespace-collapsed surface forms.
  virtual std::set<std::string> extract(std::string_view text) const = 0;
};

/// Maximal runs of capitalized words, minus a sentence-initial first word,
/// plus four-digit years.
class RuleBasedRecognizer final : public EntityRecognizer {
 public:
  std::set<std::string> extract(std::string_view text) const override;
};

/// Matches a fixed entity list against case-folded text on word boundaries.
/// Useful for lowercased model output, where capitalization carries no signal.
class GazetteerRecognizer final : public EntityRecognizer {
 public:
  explicit GazetteerRecognizer(std::set<std::string> entities);
  std::set<std::string> extract(std::string_view text) const override;
  const std::set<std::string>& entities() const { return entities_; }

 private:
  std::set<std::string> entities_;
  std::vector<std::vector<std::string>> phrases_;
};

/// Number of capitalized-word runs; an upper bound on what RuleBasedRecognizer
/// finds apart from years.
int count_capitalized_spans(std::string_view text);

int richness(std::string_view text, const EntityRecognizer& recognizer);

enum class Stance { agrees, disagrees, discusses, unrelated };

const char* to_string(Stance s);
std::optional<Stance> parse_stance(std::string_view s);

class StanceModel {
 public:
  virtual ~StanceModel() = default;
  virtual Stance classify(std::string_view claim, std::string_view content) const = 0;
};

/// Proxy stance rule on content-word overlap. coverage is the share of the
/// claim's content words found in the content. coverage >= agree_threshold is
/// Agrees, or Disagrees when the content carries a negation cue;
/// coverage >= discuss_threshold is Discusses; anything lower is Unrelated.
class LexicalStanceModel final : public StanceModel {
 public:
  struct Thresholds {
    double agree = 0.5;
    double discuss = 0.2;
  };
  LexicalStanceModel() = default;
  explicit LexicalStanceModel(Thresholds t) : t_(t) {}
  Stance classify(std::string_view claim, std::string_view content) const override;
  static double coverage(std::string_view claim, std::string_view content);
  static bool has_negation(std::string_view content);

 private:
  Thresholds t_;
};

/// Softmax regression over hashed bag-of-words pair features: words shared
/// by claim and content, words only in the content, and the coverage ratio.
class BagOfWordsStanceModel final : public StanceModel {
 public:
  struct Config {
    int buckets = 256;
    int epochs = 200;
    double learning_rate = 0.5;
    double l2 = 1e-4;
  };
  struct Example {
    std::string claim;
    std::string content;
    Stance label;
  };

  BagOfWordsStanceModel();
  explicit BagOfWordsStanceModel(Config config);
  void fit(std::span<const Example> data);
  Stance classify(std::string_view claim, std::string_view content) const override;
  std::vector<double> features(std::string_view claim, std::string_view content) const;

 private:
  Config config_;
  std::vector<std::vector<double>> weights_;  // 4 x feature dim
};

/// Share of pairs labelled Agrees. Throws ValidationError on empty input.
double consistency(std::span<const std::pair<std::string, std::string>> pairs, const StanceModel& stance);

inline constexpr int kReportSchemaVersion = 1;

struct SampleMetrics {
  std::string id;
  int richness = 0;
  Stance stance = Stance::unrelated;
};

struct MetricsReport {
  double bleu = 0.0;
  double richness_mean = 0.0;
  double consistency = 0.0;
  std::vector<SampleMetrics> samples;
  std::optional<double> defender_accuracy;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

struct EvalSample {
  std::string id;
  std::string claim;
  std::string generated;
  std::string reference;
};

MetricsReport evaluate_samples(std::span<const EvalSample> samples, const EntityRecognizer& recognizer,
                               const StanceModel& stance);

}  // namespace factgen
