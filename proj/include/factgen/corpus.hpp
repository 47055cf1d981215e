#pragma once

// Dataset ingestion, vocabulary, tokenization with [Claim]/[Fact] wrapping,
// and claim masking for the reconstructor.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace factgen {

enum class Label { real, fake };

struct Document {
  std::string id;
  std::string claim;
  std::string content;
  std::optional<Label> label;
};

enum class CorpusFormat { jsonl, tsv };

/// Reads documents in file order. Throws ParseError for malformed records and
/// ValidationError for duplicate ids.
std::vector<Document> load_corpus(const std::filesystem::path& path,
                                  CorpusFormat format = CorpusFormat::jsonl);

void save_corpus(const std::filesystem::path& path, std::span<const Document> docs);

std::optional<Label> parse_label(std::string_view s);
const char* to_string(Label label);

/// Collapses runs of whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<std::string> split(std::string_view text) const = 0;
};

/// Lowercases, splits on whitespace, and emits every ASCII punctuation
/// character as its own token.
class BasicTokenizer final : public Tokenizer {
 public:
  explicit BasicTokenizer(bool lowercase = true) : lowercase_(lowercase) {}
  std::vector<std::string> split(std::string_view text) const override;

 private:
  bool lowercase_;
};

const Tokenizer& default_tokenizer();

namespace special {
inline constexpr int pad = 0;
inline constexpr int unk = 1;
inline constexpr int bos = 2;
inline constexpr int eos = 3;
inline constexpr int mask = 4;
inline constexpr int claim_mark = 5;
inline constexpr int fact_mark = 6;
inline constexpr int count = 7;
}  // namespace special

class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();

  int id(std::string_view token) const;  // UNK when absent
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  std::span<const std::string> tokens() const { return tokens_; }

  /// Appends a token; returns its id (existing id if already present).
  int add(const std::string& token);

  /// Order-sensitive FNV-1a hash of the token list; checkpoints record it.
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  static bool is_special(int id) { return id >= 0 && id < special::count; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Tokens with frequency >= min_freq over claims and contents, ordered by
/// descending frequency then lexicographically, after the 7 specials.
Vocabulary build_vocabulary(std::span<const Document> docs, int min_freq = 1,
                            bool allow_empty = false,
                            const Tokenizer& tokenizer = default_tokenizer());

struct TokenizedExample {
  std::string id;
  std::vector<int> claim_ids;    // CLAIM_MARK + claim tokens
  std::vector<int> fact_ids;     // empty, or FACT_MARK + concatenated fact tokens
  std::vector<int> content_ids;  // BOS + content tokens + EOS
};

struct TokenizeOptions {
  int max_claim_len = 100;
  int max_content_len = 300;
  int max_fact_len = 200;
};

std::vector<int> encode_tokens(std::string_view text, const Vocabulary& vocab,
                               const Tokenizer& tokenizer = default_tokenizer());
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab, bool skip_special = true);

/// Marker tokens are not counted against the length budgets.
TokenizedExample tokenize_example(const Document& doc, std::span<const std::string> facts,
                                  const Vocabulary& vocab, const TokenizeOptions& options = {},
                                  const Tokenizer& tokenizer = default_tokenizer());

struct MaskedClaim {
  std::vector<int> masked_ids;
  std::vector<int> mask_positions;  // ascending
  std::vector<int> original_ids;
};

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
double uniform01(std::mt19937_64& rng);

/// Each non-special position is replaced by MASK independently with
/// probability p_mask. UNK counts as an ordinary token.
MaskedClaim mask_claim(std::span<const int> claim_ids, double p_mask, std::mt19937_64& rng);

/// Unmasked claim (no positions masked), used where a MaskedClaim is required.
MaskedClaim unmasked_claim(std::span<const int> claim_ids);

}  // namespace factgen
