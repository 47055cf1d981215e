#include "factgen/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_set>

#include "factgen/errors.hpp"

namespace factgen {

using nlohmann::json;

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<Ngram, int> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Ngram(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

}  // namespace

double bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
            const Tokenizer& tokenizer) {
  if (hypotheses.size() != references.size())
    throw ValidationError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                          std::to_string(references.size()) + " references");
  if (hypotheses.empty()) throw ValidationError("bleu: no hypotheses");

  constexpr int kMaxN = 4;
  double matches[kMaxN] = {};
  double totals[kMaxN] = {};
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    auto h = tokenizer.split(hypotheses[i]);
    auto r = tokenizer.split(references[i]);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= kMaxN; ++n) {
      auto hc = ngram_counts(h, static_cast<std::size_t>(n));
      auto rc = ngram_counts(r, static_cast<std::size_t>(n));
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        if (it != rc.end()) matches[n - 1] += std::min(c, it->second);
        totals[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;

  double log_sum = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    double p = 0.0;
    if (totals[n] == 0.0) p = 1e-9;
    else if (matches[n] == 0.0) p = 1e-9 / totals[n];
    else p = matches[n] / totals[n];
    log_sum += std::log(p) / kMaxN;
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_sum);
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

struct Word {
  std::string core;
  bool lead_punct = false;
  bool trail_punct = false;
  bool ends_sentence = false;
};

std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string_view raw = text.substr(i, j - i);
    std::size_t a = 0;
    std::size_t b = raw.size();
    while (a < b && is_punct(raw[a])) ++a;
    while (b > a && is_punct(raw[b - 1])) --b;
    Word w;
    w.core = std::string(raw.substr(a, b - a));
    w.lead_punct = a > 0;
    w.trail_punct = b < raw.size();
    // A bare punctuation word such as " . " can still end a sentence.
    for (std::size_t k = a == b ? 0 : b; k < raw.size(); ++k)
      if (raw[k] == '.' || raw[k] == '!' || raw[k] == '?') w.ends_sentence = true;
    out.push_back(std::move(w));
    i = j;
  }
  return out;
}

bool capitalized(const std::string& w) { return !w.empty() && std::isupper(static_cast<unsigned char>(w[0])); }

bool is_year(const std::string& w) {
  return w.size() == 4 && (w[0] == '1' || w[0] == '2') &&
         std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

// Calls on_span(words, starts_sentence) for every maximal capitalized run and
// on_year(word) for every year.
template <class SpanFn, class YearFn>
void scan(std::string_view text, SpanFn&& on_span, YearFn&& on_year) {
  std::vector<std::string> span;
  bool span_initial = false;
  auto flush = [&] {
    if (!span.empty()) on_span(span, span_initial);
    span.clear();
  };
  bool sentence_start = true;
  for (const Word& w : split_words(text)) {
    if (w.lead_punct) flush();
    if (capitalized(w.core)) {
      if (span.empty()) span_initial = sentence_start;
      span.push_back(w.core);
    } else {
      flush();
    }
    if (is_year(w.core)) on_year(w.core);
    if (w.trail_punct) flush();
    if (!w.core.empty() || w.ends_sentence) sentence_start = w.ends_sentence;
  }
  flush();
}

}  // namespace

std::set<std::string> RuleBasedRecognizer::extract(std::string_view text) const {
  std::set<std::string> out;
  scan(
      text,
      [&](const std::vector<std::string>& span, bool initial) {
        std::size_t first = initial ? 1 : 0;
        if (first >= span.size()) return;
        std::string joined;
        for (std::size_t k = first; k < span.size(); ++k) {
          if (!joined.empty()) joined += ' ';
          joined += lower(span[k]);
        }
        out.insert(joined);
      },
      [&](const std::string& year) { out.insert(year); });
  return out;
}

int count_capitalized_spans(std::string_view text) {
  int n = 0;
  scan(text, [&](const std::vector<std::string>&, bool) { ++n; }, [](const std::string&) {});
  return n;
}

GazetteerRecognizer::GazetteerRecognizer(std::set<std::string> entities) {
  for (const std::string& e : entities) {
    auto toks = default_tokenizer().split(e);
    if (toks.empty()) continue;
    std::string canon;
    for (const auto& t : toks) canon += (canon.empty() ? "" : " ") + t;
    if (entities_.insert(canon).second) phrases_.push_back(std::move(toks));
  }
}

std::set<std::string> GazetteerRecognizer::extract(std::string_view text) const {
  std::set<std::string> out;
  auto toks = default_tokenizer().split(text);
  for (const auto& phrase : phrases_) {
    for (std::size_t i = 0; i + phrase.size() <= toks.size(); ++i) {
      if (std::equal(phrase.begin(), phrase.end(), toks.begin() + i)) {
        std::string canon;
        for (const auto& t : phrase) canon += (canon.empty() ? "" : " ") + t;
        out.insert(canon);
        break;
      }
    }
  }
  return out;
}

int richness(std::string_view text, const EntityRecognizer& recognizer) {
  return static_cast<int>(recognizer.extract(text).size());
}

const char* to_string(Stance s) {
  switch (s) {
    case Stance::agrees: return "agrees";
    case Stance::disagrees: return "disagrees";
    case Stance::discusses: return "discusses";
    case Stance::unrelated: return "unrelated";
  }
  return "unrelated";
}

std::optional<Stance> parse_stance(std::string_view s) {
  std::string l = lower(s);
  if (l == "agrees" || l == "agree") return Stance::agrees;
  if (l == "disagrees" || l == "disagree") return Stance::disagrees;
  if (l == "discusses" || l == "discuss") return Stance::discusses;
  if (l == "unrelated") return Stance::unrelated;
  return std::nullopt;
}

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> s = {
      "a",    "an",   "the",  "and",  "or",   "but",  "of",   "to",    "in",   "on",   "at",   "for",
      "by",   "with", "from", "as",   "is",   "are",  "was",  "were",  "be",   "been", "it",   "its",
      "this", "that", "he",   "she",  "they", "we",   "you",  "his",   "her",  "their", "has", "have",
      "had",  "will", "would", "said", "says", "after", "over", "about", "into", "than", "who", "which"};
  return s;
}

const std::unordered_set<std::string>& negations() {
  static const std::unordered_set<std::string> s = {"not",   "no",    "never",    "false",   "fake",   "hoax",
                                                    "deny",  "denies", "denied", "debunked", "untrue", "fabricated"};
  return s;
}

std::set<std::string> content_words(std::string_view text) {
  std::set<std::string> out;
  for (auto& t : default_tokenizer().split(text)) {
    bool alnum = std::any_of(t.begin(), t.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
    if (!alnum || stopwords().count(t)) continue;
    if (t.size() < 2 && !std::isdigit(static_cast<unsigned char>(t[0]))) continue;
    out.insert(t);
  }
  return out;
}

}  // namespace

double LexicalStanceModel::coverage(std::string_view claim, std::string_view content) {
  auto c = content_words(claim);
  if (c.empty()) return 0.0;
  auto d = content_words(content);
  std::size_t hit = 0;
  for (const auto& w : c) hit += d.count(w);
  return static_cast<double>(hit) / static_cast<double>(c.size());
}

bool LexicalStanceModel::has_negation(std::string_view content) {
  for (auto& t : default_tokenizer().split(content))
    if (negations().count(t)) return true;
  return false;
}

Stance LexicalStanceModel::classify(std::string_view claim, std::string_view content) const {
  const double cov = coverage(claim, content);
  if (cov >= t_.agree) return has_negation(content) ? Stance::disagrees : Stance::agrees;
  if (cov >= t_.discuss) return Stance::discusses;
  return Stance::unrelated;
}

namespace {

std::size_t bucket(const std::string& w, int buckets) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : w) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::size_t>(h % static_cast<std::uint64_t>(buckets));
}

constexpr int kStances = 4;

}  // namespace

BagOfWordsStanceModel::BagOfWordsStanceModel() : BagOfWordsStanceModel(Config{}) {}

BagOfWordsStanceModel::BagOfWordsStanceModel(Config config) : config_(config) {
  if (config_.buckets < 1 || config_.epochs < 0 || !(config_.learning_rate > 0.0))
    throw ValidationError("invalid bag-of-words stance configuration");
  weights_.assign(kStances, std::vector<double>(static_cast<std::size_t>(2 * config_.buckets + 3), 0.0));
}

std::vector<double> BagOfWordsStanceModel::features(std::string_view claim, std::string_view content) const {
  const std::size_t b = static_cast<std::size_t>(config_.buckets);
  std::vector<double> f(2 * b + 3, 0.0);
  auto c = content_words(claim);
  auto d = content_words(content);
  std::vector<std::string> shared, only;
  for (const auto& w : d) (c.count(w) ? shared : only).push_back(w);
  for (const auto& w : shared) f[bucket(w, config_.buckets)] += 1.0 / std::sqrt(static_cast<double>(shared.size()));
  for (const auto& w : only) f[b + bucket(w, config_.buckets)] += 1.0 / std::sqrt(static_cast<double>(only.size()));
  f[2 * b] = LexicalStanceModel::coverage(claim, content);
  f[2 * b + 1] = LexicalStanceModel::has_negation(content) ? 1.0 : 0.0;
  f[2 * b + 2] = 1.0;
  return f;
}

void BagOfWordsStanceModel::fit(std::span<const Example> data) {
  if (data.empty()) throw ValidationError("stance training data is empty");
  std::vector<std::vector<double>> x;
  for (const auto& e : data) x.push_back(features(e.claim, e.content));
  const std::size_t dim = x[0].size();
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::vector<std::vector<double>> grad(kStances, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < data.size(); ++i) {
      double z[kStances];
      double m = -1e300;
      for (int k = 0; k < kStances; ++k) {
        z[k] = 0.0;
        for (std::size_t j = 0; j < dim; ++j) z[k] += weights_[k][j] * x[i][j];
        m = std::max(m, z[k]);
      }
      double sum = 0.0;
      for (double& v : z) sum += (v = std::exp(v - m));
      for (int k = 0; k < kStances; ++k) {
        double err = z[k] / sum - (static_cast<int>(data[i].label) == k ? 1.0 : 0.0);
        for (std::size_t j = 0; j < dim; ++j) grad[k][j] += err * x[i][j] * inv_n;
      }
    }
    for (int k = 0; k < kStances; ++k)
      for (std::size_t j = 0; j < dim; ++j)
        weights_[k][j] -= config_.learning_rate * (grad[k][j] + config_.l2 * weights_[k][j]);
  }
}

Stance BagOfWordsStanceModel::classify(std::string_view claim, std::string_view content) const {
  auto f = features(claim, content);
  int best = 0;
  double best_score = -1e300;
  for (int k = 0; k < kStances; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) s += weights_[k][j] * f[j];
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return static_cast<Stance>(best);
}

double consistency(std::span<const std::pair<std::string, std::string>> pairs, const StanceModel& stance) {
  if (pairs.empty()) throw ValidationError("consistency: no pairs");
  std::size_t agree = 0;
  for (const auto& [claim, content] : pairs) agree += stance.classify(claim, content) == Stance::agrees;
  return static_cast<double>(agree) / static_cast<double>(pairs.size());
}

json MetricsReport::to_json() const {
  json samples_json = json::array();
  for (const auto& s : samples)
    samples_json.push_back({{"id", s.id}, {"richness", s.richness}, {"stance", to_string(s.stance)}});
  json j = {{"schema_version", kReportSchemaVersion},
            {"bleu", bleu},
            {"richness_mean", richness_mean},
            {"consistency", consistency},
            {"samples", samples_json}};
  if (defender_accuracy) j["defender_accuracy"] = *defender_accuracy;
  return j;
}

void MetricsReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

MetricsReport evaluate_samples(std::span<const EvalSample> samples, const EntityRecognizer& recognizer,
                               const StanceModel& stance) {
  if (samples.empty()) throw ValidationError("no samples to evaluate");
  MetricsReport r;
  std::vector<std::string> hyps, refs;
  std::size_t agree = 0;
  double rich = 0.0;
  for (const auto& s : samples) {
    hyps.push_back(s.generated);
    refs.push_back(s.reference);
    SampleMetrics m{s.id, richness(s.generated, recognizer), stance.classify(s.claim, s.generated)};
    rich += m.richness;
    agree += m.stance == Stance::agrees;
    r.samples.push_back(std::move(m));
  }
  r.bleu = bleu(hyps, refs);
  r.richness_mean = rich / static_cast<double>(samples.size());
  r.consistency = static_cast<double>(agree) / static_cast<double>(samples.size());
  return r;
}

}  // namespace factgen
