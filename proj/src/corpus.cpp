#include "factgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "factgen/errors.hpp"
#include "json.hpp"

namespace factgen {

using nlohmann::json;

namespace {

constexpr const char* kSpecialTokens[special::count] = {"<pad>", "<unk>", "<bos>", "<eos>",
                                                        "<mask>", "[Claim]", "[Fact]"};

std::string required_string(const json& obj, const char* field, const std::string& source,
                            std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(source, line, std::string("missing field '") + field + "'");
  if (!it->is_string()) throw ParseError(source, line, std::string("field '") + field + "' is not a string");
  return it->get<std::string>();
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::optional<Label> parse_label(std::string_view s) {
  if (s == "real") return Label::real;
  if (s == "fake") return Label::fake;
  return std::nullopt;
}

const char* to_string(Label label) { return label == Label::real ? "real" : "fake"; }

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<Document> load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file " + path.string());
  const std::string source = path.string();
  std::vector<Document> docs;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    Document doc;
    std::string label;
    if (format == CorpusFormat::jsonl) {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
      }
      if (!obj.is_object()) throw ParseError(source, lineno, "record is not an object");
      doc.id = required_string(obj, "id", source, lineno);
      doc.claim = required_string(obj, "claim", source, lineno);
      doc.content = required_string(obj, "content", source, lineno);
      if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
        if (!it->is_string()) throw ParseError(source, lineno, "field 'label' is not a string");
        label = it->get<std::string>();
      }
    } else {
      auto cols = split_tabs(line);
      if (cols.size() < 3 || cols.size() > 4)
        throw ParseError(source, lineno, "expected 3 or 4 tab-separated columns");
      doc.id = cols[0];
      doc.claim = cols[1];
      doc.content = cols[2];
      if (cols.size() == 4) label = cols[3];
    }
    if (!label.empty()) {
      doc.label = parse_label(label);
      if (!doc.label) throw ParseError(source, lineno, "label must be 'real' or 'fake', got '" + label + "'");
    }
    doc.claim = normalize_whitespace(doc.claim);
    doc.content = normalize_whitespace(doc.content);
    if (doc.id.empty()) throw ParseError(source, lineno, "empty id");
    if (doc.claim.empty()) throw ParseError(source, lineno, "empty claim");
    if (doc.content.empty()) throw ParseError(source, lineno, "empty content");
    if (!seen.insert(doc.id).second)
      throw ValidationError(source + ":" + std::to_string(lineno) + ": duplicate id '" + doc.id + "'");
    docs.push_back(std::move(doc));
  }
  return docs;
}

void save_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Document& d : docs) {
    json obj = {{"id", d.id}, {"claim", d.claim}, {"content", d.content}};
    if (d.label) obj["label"] = to_string(*d.label);
    out << obj.dump() << '\n';
  }
}

std::vector<std::string> BasicTokenizer::split(std::string_view text) const {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      flush();
    } else if (std::ispunct(uc)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      cur.push_back(lowercase_ ? static_cast<char>(std::tolower(uc)) : c);
    }
  }
  flush();
  return tokens;
}

const Tokenizer& default_tokenizer() {
  static const BasicTokenizer tokenizer;
  return tokenizer;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialTokens) add(s);
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::unk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const std::string& t : tokens_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0xffu;
    h *= 1099511628211ULL;
  }
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < special::count) throw LoadError("vocabulary " + path.string() + " lacks special tokens");
  for (int i = 0; i < special::count; ++i)
    if (lines[static_cast<std::size_t>(i)] != kSpecialTokens[i])
      throw LoadError("vocabulary " + path.string() + ": line " + std::to_string(i + 1) +
                      " should be " + kSpecialTokens[i]);
  Vocabulary v;
  for (std::size_t i = special::count; i < lines.size(); ++i) {
    if (v.contains(lines[i])) throw LoadError("vocabulary " + path.string() + ": duplicate token " + lines[i]);
    v.add(lines[i]);
  }
  return v;
}

Vocabulary build_vocabulary(std::span<const Document> docs, int min_freq, bool allow_empty,
                            const Tokenizer& tokenizer) {
  if (min_freq < 1) throw ValidationError("min_freq must be positive");
  if (docs.empty() && !allow_empty) throw ValidationError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, long> freq;
  for (const Document& d : docs) {
    for (const auto* text : {&d.claim, &d.content})
      for (auto& t : tokenizer.split(*text)) ++freq[t];
  }
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [token, count] : items)
    if (count >= min_freq) v.add(token);
  return v;
}

std::vector<int> encode_tokens(std::string_view text, const Vocabulary& vocab, const Tokenizer& tokenizer) {
  std::vector<int> ids;
  for (const auto& t : tokenizer.split(text)) ids.push_back(vocab.id(t));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab, bool skip_special) {
  std::string out;
  for (int id : ids) {
    if (skip_special && Vocabulary::is_special(id) && id != special::unk) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

TokenizedExample tokenize_example(const Document& doc, std::span<const std::string> facts,
                                  const Vocabulary& vocab, const TokenizeOptions& options,
                                  const Tokenizer& tokenizer) {
  auto truncated = [](std::vector<int> ids, int limit) {
    if (limit >= 0 && ids.size() > static_cast<std::size_t>(limit)) ids.resize(static_cast<std::size_t>(limit));
    return ids;
  };
  TokenizedExample ex;
  ex.id = doc.id;

  ex.claim_ids.push_back(special::claim_mark);
  for (int id : truncated(encode_tokens(doc.claim, vocab, tokenizer), options.max_claim_len))
    ex.claim_ids.push_back(id);

  std::vector<int> fact_tokens;
  for (const std::string& f : facts) {
    auto ids = encode_tokens(f, vocab, tokenizer);
    fact_tokens.insert(fact_tokens.end(), ids.begin(), ids.end());
  }
  fact_tokens = truncated(std::move(fact_tokens), options.max_fact_len);
  if (!fact_tokens.empty()) {
    ex.fact_ids.push_back(special::fact_mark);
    ex.fact_ids.insert(ex.fact_ids.end(), fact_tokens.begin(), fact_tokens.end());
  }

  ex.content_ids.push_back(special::bos);
  for (int id : truncated(encode_tokens(doc.content, vocab, tokenizer), options.max_content_len))
    ex.content_ids.push_back(id);
  ex.content_ids.push_back(special::eos);
  return ex;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

MaskedClaim mask_claim(std::span<const int> claim_ids, double p_mask, std::mt19937_64& rng) {
  if (!(p_mask >= 0.0 && p_mask <= 1.0)) throw ValidationError("p_mask must lie in [0, 1]");
  MaskedClaim m;
  m.original_ids.assign(claim_ids.begin(), claim_ids.end());
  m.masked_ids = m.original_ids;
  for (std::size_t i = 0; i < claim_ids.size(); ++i) {
    const int id = claim_ids[i];
    if (Vocabulary::is_special(id) && id != special::unk) continue;
    // One draw per eligible position keeps the stream aligned for any p_mask.
    if (uniform01(rng) < p_mask) {
      m.masked_ids[i] = special::mask;
      m.mask_positions.push_back(static_cast<int>(i));
    }
  }
  return m;
}

MaskedClaim unmasked_claim(std::span<const int> claim_ids) {
  MaskedClaim m;
  m.original_ids.assign(claim_ids.begin(), claim_ids.end());
  m.masked_ids = m.original_ids;
  return m;
}

}  // namespace factgen
