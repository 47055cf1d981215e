#include "factgen/cli.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "factgen/checkpoint.hpp"
#include "factgen/corpus.hpp"
#include "factgen/defender.hpp"
#include "factgen/errors.hpp"
#include "factgen/evaluator.hpp"
#include "factgen/retriever.hpp"
#include "factgen/sampler.hpp"
#include "factgen/trainer.hpp"
#include "json.hpp"

namespace factgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr unsigned kData = kBuildIndex | kRetrieve | kTrain;

}  // namespace

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"cli", "out_dir", "--out-dir", "", "run directory that receives every artifact", kAll, 'p'},
      {"cli", "seed", "--seed", "13", "seed for initialization, batching, masking, sampling", kAll, 'i'},

      {"corpus", "path", "--corpus", "", "training corpus (JSONL or TSV)", kData, 'p'},
      {"corpus", "format", "--format", "jsonl", "corpus format: jsonl or tsv", kData, 's'},
      {"corpus", "min_freq", "--min-freq", "1", "minimum token frequency for the vocabulary", kData, 'i'},
      {"corpus", "max_claim_len", "--max-claim-len", "100", "claim token budget", kTrain | kGenerate, 'i'},
      {"corpus", "max_content_len", "--max-content-len", "300", "content token budget",
       kTrain | kGenerate | kDefendTrain | kDefendEval, 'i'},
      {"corpus", "max_fact_len", "--max-fact-len", "200", "fact token budget", kTrain | kGenerate, 'i'},

      {"retriever", "k1", "--k1", "10", "documents kept by tf-idf ranking", kRetrieve | kTrain | kGenerate, 'i'},
      {"retriever", "k2", "--k2", "5", "sentences kept as facts", kRetrieve | kTrain | kGenerate, 'i'},

      {"psa_lm", "d_model", "--d-model", "64", "model width", kTrain, 'i'},
      {"psa_lm", "n_heads", "--n-heads", "2", "attention heads", kTrain, 'i'},
      {"psa_lm", "n_encoder_blocks", "--n-encoder-blocks", "2", "encoder blocks", kTrain, 'i'},
      {"psa_lm", "n_decoder_blocks", "--n-decoder-blocks", "2", "decoder blocks", kTrain, 'i'},
      {"psa_lm", "ffn_dim", "--ffn-dim", "256", "feed-forward width", kTrain, 'i'},
      {"psa_lm", "max_positions", "--max-positions", "512", "position table size", kTrain, 'i'},
      {"psa_lm", "init_std", "--init-std", "0.02", "initialization standard deviation", kTrain, 'r'},

      {"claim_reconstructor", "d_cr", "--d-cr", "32", "reconstructor width", kTrain, 'i'},
      {"claim_reconstructor", "n_heads", "--cr-n-heads", "2", "reconstructor heads", kTrain, 'i'},
      {"claim_reconstructor", "n_blocks", "--cr-n-blocks", "1", "reconstructor blocks", kTrain, 'i'},
      {"claim_reconstructor", "ffn_dim", "--cr-ffn-dim", "128", "reconstructor feed-forward width", kTrain, 'i'},
      {"claim_reconstructor", "max_positions", "--cr-max-positions", "128", "reconstructor position table size",
       kTrain, 'i'},
      {"claim_reconstructor", "share_embeddings", "--share-embeddings", "false",
       "reuse the decoder token table in the reconstructor", kTrain, 'b'},

      {"trainer", "lambda", "--lambda", "0.001", "weight of the reconstruction loss", kTrain, 'r'},
      {"trainer", "lr_encoder", "--lr-encoder", "0.001", "encoder learning rate", kTrain, 'r'},
      {"trainer", "lr_decoder", "--lr-decoder", "0.00001", "decoder learning rate", kTrain, 'r'},
      {"trainer", "lr_cr", "--lr-cr", "0.00005", "reconstructor learning rate", kTrain, 'r'},
      {"trainer", "adam_beta1", "--adam-beta1", "0.9", "Adam beta1", kTrain, 'r'},
      {"trainer", "adam_beta2", "--adam-beta2", "0.998", "Adam beta2", kTrain, 'r'},
      {"trainer", "adam_eps", "--adam-eps", "1e-8", "Adam epsilon", kTrain, 'r'},
      {"trainer", "epochs_1", "--epochs-1", "4", "joint epochs without facts", kTrain, 'i'},
      {"trainer", "epochs_2", "--epochs-2", "2", "joint epochs with facts", kTrain, 'i'},
      {"trainer", "pretrain_psa_epochs", "--pretrain-psa-epochs", "2", "language-model warm-up epochs", kTrain, 'i'},
      {"trainer", "pretrain_cr_epochs", "--pretrain-cr-epochs", "2", "reconstructor warm-up epochs", kTrain, 'i'},
      {"trainer", "batch_size", "--batch-size", "8", "examples per update", kTrain, 'i'},
      {"trainer", "checkpoint_interval_steps", "--checkpoint-interval-steps", "0",
       "steps between checkpoints; 0 picks a quarter of the run, negative disables", kTrain, 'i'},
      {"trainer", "clip_norm", "--clip-norm", "1.0", "global gradient norm limit; 0 disables", kTrain, 'r'},
      {"trainer", "p_mask", "--p-mask", "0.15", "claim masking probability", kTrain, 'r'},
      {"trainer", "freeze_masks", "--freeze-masks", "false", "draw each claim mask once", kTrain, 'b'},
      {"trainer", "shuffle", "--shuffle", "true", "shuffle examples each epoch", kTrain, 'b'},

      {"sampler", "claim_file", "--claim-file", "", "JSONL claims to generate from (id, claim)", kGenerate, 'p'},
      {"sampler", "facts", "--facts", "auto", "auto (retrieve from the index) or a JSONL facts file", kGenerate, 'p'},
      {"sampler", "p", "--p", "0.9", "nucleus mass", kGenerate, 'r'},
      {"sampler", "max_length", "--max-length", "300", "maximum generated tokens", kGenerate, 'i'},
      {"sampler", "temperature", "--temperature", "1.0", "softmax temperature", kGenerate, 'r'},
      {"sampler", "repetition_penalty", "--repetition-penalty", "1.0", "1 disables", kGenerate, 'r'},
      {"sampler", "min_length", "--min-length", "0", "tokens before EOS is allowed", kGenerate, 'i'},

      {"evaluator", "generated", "--generated", "", "generations JSONL (default: run directory)", kEvaluate, 'p'},
      {"evaluator", "references", "--references", "", "reference JSONL (id, content)", kEvaluate, 'p'},
      {"evaluator", "report", "--report", "report.json", "report file name inside the run directory", kEvaluate,
       's'},
      {"evaluator", "ner", "--ner", "gazetteer", "entity recognizer: gazetteer or rule", kEvaluate, 's'},

      {"defender", "checkpoint", "--checkpoint", "", "generator checkpoint file or checkpoint directory",
       kDefendTrain, 'p'},
      {"defender", "checkpoint_step", "--checkpoint-step", "-1",
       "step to load from a checkpoint directory; -1 takes the midpoint", kDefendTrain, 'i'},
      {"defender", "fake", "--fake", "", "synthetic texts JSONL (default: run generations)", kDefendTrain, 'p'},
      {"defender", "real", "--real", "", "human-written texts JSONL", kDefendTrain, 'p'},
      {"defender", "epochs", "--defender-epochs", "20", "defender training epochs", kDefendTrain, 'i'},
      {"defender", "batch_size", "--defender-batch-size", "16", "defender batch size", kDefendTrain, 'i'},
      {"defender", "lr_head", "--lr-head", "0.01", "classification layer learning rate", kDefendTrain, 'r'},
      {"defender", "lr_generator", "--lr-generator", "0.00001", "decoder learning rate when fine-tuning",
       kDefendTrain, 'r'},
      {"defender", "holdout_fraction", "--holdout-fraction", "0.3", "held-out share per class", kDefendTrain, 'r'},
      {"defender", "finetune_generator", "--finetune-generator", "true", "update decoder weights too",
       kDefendTrain, 'b'},
      {"defender", "model", "--model", "", "defender checkpoint (default: run directory)", kDefendEval, 'p'},
      {"defender", "input", "--input", "", "texts JSONL to classify", kDefendEval, 'p'},
      {"defender", "out", "--out", "preds.jsonl", "predictions file name inside the run directory", kDefendEval,
       's'},
  };
  return table;
}

namespace {

std::string full_name(const Field& f) { return std::string(f.section) + "." + f.key; }

const Field& field(const std::string& name) {
  for (const Field& f : fields())
    if (full_name(f) == name) return f;
  throw std::logic_error("unknown configuration field " + name);
}

std::string describe(const Field& f) { return full_name(f) + " (" + f.flag + ")"; }

bool is_path_value(const Field& f, const std::string& v) {
  return f.type == 'p' && !v.empty() && !(full_name(f) == "sampler.facts" && v == "auto");
}

std::string absolute(const fs::path& base, const std::string& v) {
  fs::path p(v);
  if (p.is_relative()) p = base / p;
  return fs::absolute(p).lexically_normal().string();
}

}  // namespace

RunConfig::RunConfig() {
  for (const Field& f : fields()) values_[full_name(f)] = f.default_value;
}

void RunConfig::merge_file(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(path.string(), static_cast<int>(e.line()), e.message());
  }
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ValidationError(path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      if (!values_.count(name)) throw ValidationError(path.string() + ": unknown setting " + name);
      std::string v = value.get_value<std::string>();
      if (is_path_value(field(name), v)) v = absolute(base, v);
      values_[name] = v;
    }
  }
}

void RunConfig::set(const std::string& name, const std::string& value) {
  const Field& f = field(name);
  values_[name] = is_path_value(f, value) ? absolute(fs::current_path(), value) : value;
}

const std::string& RunConfig::str(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::logic_error("unknown configuration field " + name);
  return it->second;
}

long RunConfig::integer(const std::string& name) const {
  const std::string& v = str(name);
  long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ValidationError(describe(field(name)) + ": expected an integer, got '" + v + "'");
  return out;
}

double RunConfig::real(const std::string& name) const {
  const std::string& v = str(name);
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ValidationError(describe(field(name)) + ": expected a number, got '" + v + "'");
}

bool RunConfig::boolean(const std::string& name) const {
  const std::string& v = str(name);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError(describe(field(name)) + ": expected true or false, got '" + v + "'");
}

fs::path RunConfig::path(const std::string& name) const { return fs::path(str(name)); }

fs::path RunConfig::required_path(const std::string& name) const {
  const std::string& v = str(name);
  if (v.empty()) throw ValidationError("missing required field " + describe(field(name)));
  return fs::path(v);
}

void RunConfig::validate() const {
  for (const Field& f : fields()) {
    const std::string name = full_name(f);
    switch (f.type) {
      case 'i': (void)integer(name); break;
      case 'r': (void)real(name); break;
      case 'b': (void)boolean(name); break;
      default: break;
    }
  }
}

void RunConfig::write(const fs::path& path, const std::string& command) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# resolved configuration for: " << command << "\n";
  std::string section;
  for (const Field& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << str(full_name(f)) << "\n";
  }
}

namespace {

// ---------------------------------------------------------------- helpers

std::string json_id(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError("id must be a string or an integer");
}

struct JsonLine {
  int line;
  json value;
};

std::vector<JsonLine> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<JsonLine> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (normalize_whitespace(line).empty()) continue;
    try {
      json v = json::parse(line);
      if (!v.is_object()) throw ParseError(path.string(), n, "expected a JSON object");
      out.push_back({n, std::move(v)});
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), n, e.what());
    }
  }
  return out;
}

std::string text_field(const fs::path& path, const JsonLine& rec, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    auto it = rec.value.find(name);
    if (it != rec.value.end() && it->is_string()) return it->get<std::string>();
  }
  std::string wanted;
  for (const char* name : names) wanted += (wanted.empty() ? "" : "/") + std::string(name);
  throw ParseError(path.string(), rec.line, "missing text field " + wanted);
}

std::string record_id(const JsonLine& rec) {
  auto it = rec.value.find("id");
  return it == rec.value.end() ? "line" + std::to_string(rec.line) : json_id(*it);
}

struct Claim {
  std::string id;
  std::string claim;
};

std::vector<Claim> load_claims(const fs::path& path) {
  std::vector<Claim> out;
  std::set<std::string> seen;
  for (const auto& rec : read_jsonl(path)) {
    Claim c{record_id(rec), normalize_whitespace(text_field(path, rec, {"claim"}))};
    if (c.claim.empty()) throw ParseError(path.string(), rec.line, "empty claim");
    if (!seen.insert(c.id).second) throw ValidationError(path.string() + ": duplicate id " + c.id);
    out.push_back(std::move(c));
  }
  return out;
}

CorpusFormat corpus_format(const RunConfig& cfg) {
  const std::string& f = cfg.str("corpus.format");
  if (f == "jsonl") return CorpusFormat::jsonl;
  if (f == "tsv") return CorpusFormat::tsv;
  throw ValidationError("corpus.format (--format) must be jsonl or tsv, got '" + f + "'");
}

TokenizeOptions tokenize_options(const RunConfig& cfg) {
  TokenizeOptions o;
  o.max_claim_len = static_cast<int>(cfg.integer("corpus.max_claim_len"));
  o.max_content_len = static_cast<int>(cfg.integer("corpus.max_content_len"));
  o.max_fact_len = static_cast<int>(cfg.integer("corpus.max_fact_len"));
  if (o.max_claim_len < 1 || o.max_content_len < 1 || o.max_fact_len < 0)
    throw ValidationError("token budgets must be positive");
  return o;
}

RetrievalConfig retrieval_config(const RunConfig& cfg) {
  RetrievalConfig r;
  r.k1 = static_cast<int>(cfg.integer("retriever.k1"));
  r.k2 = static_cast<int>(cfg.integer("retriever.k2"));
  r.validate();
  return r;
}

std::uint64_t seed_of(const RunConfig& cfg) { return static_cast<std::uint64_t>(cfg.integer("cli.seed")); }

// A file name that must stay inside the run directory.
fs::path inside(const fs::path& dir, const std::string& name, const std::string& field_name) {
  fs::path p = (dir / name).lexically_normal();
  auto rel = p.lexically_relative(dir);
  if (name.empty() || rel.empty() || *rel.begin() == "..")
    throw ValidationError(field_name + " must name a file inside the run directory, got '" + name + "'");
  return p;
}

struct Context {
  const RunConfig& cfg;
  fs::path dir;
  std::ostream& out;
};

// ------------------------------------------------------------ artifacts

std::vector<Document> load_training_corpus(const Context& c) {
  auto docs = load_corpus(c.cfg.required_path("corpus.path"), corpus_format(c.cfg));
  if (docs.empty()) throw ValidationError("corpus " + c.cfg.str("corpus.path") + " has no records");
  return docs;
}

Vocabulary ensure_vocabulary(const Context& c, std::span<const Document> docs) {
  fs::path p = c.dir / files::vocab;
  if (fs::exists(p)) return Vocabulary::load(p);
  const long min_freq = c.cfg.integer("corpus.min_freq");
  if (min_freq < 1) throw ValidationError("corpus.min_freq (--min-freq) must be positive");
  Vocabulary v = build_vocabulary(docs, static_cast<int>(min_freq));
  v.save(p);
  c.out << "vocabulary: " << v.size() << " tokens -> " << p.string() << "\n";
  return v;
}

TfIdfIndex ensure_index(const Context& c, std::span<const Document> docs) {
  fs::path p = c.dir / files::index;
  if (fs::exists(p)) return TfIdfIndex::load(p);
  std::vector<SourceDocument> sources;
  for (const Document& d : docs) sources.push_back({d.id, d.content});
  TfIdfIndex idx = TfIdfIndex::build(sources);
  for (const auto& w : idx.warnings()) c.out << "warning: " << w << "\n";
  idx.save(p);
  c.out << "index: " << idx.num_docs() << " documents, " << idx.num_terms() << " terms -> " << p.string() << "\n";
  return idx;
}

json fact_json(const RetrievedFact& f) {
  return {{"text", f.text},
          {"doc_id", f.doc_id},
          {"doc_rank", f.doc_rank},
          {"position", f.position},
          {"similarity", f.similarity}};
}

std::map<std::string, std::vector<std::string>> read_facts_file(const fs::path& path) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& rec : read_jsonl(path)) {
    std::vector<std::string> facts;
    auto it = rec.value.find("facts");
    if (it == rec.value.end() || !it->is_array()) throw ParseError(path.string(), rec.line, "missing facts array");
    for (const auto& f : *it) {
      if (f.is_string()) facts.push_back(f.get<std::string>());
      else if (f.is_object() && f.contains("text")) facts.push_back(f.at("text").get<std::string>());
      else throw ParseError(path.string(), rec.line, "facts entries must be strings or objects with text");
    }
    out[record_id(rec)] = std::move(facts);
  }
  return out;
}

std::map<std::string, std::vector<std::string>> ensure_facts(const Context& c, std::span<const Document> docs,
                                                             const TfIdfIndex& index) {
  fs::path p = c.dir / files::facts;
  if (fs::exists(p)) return read_facts_file(p);
  RetrievalConfig rc = retrieval_config(c.cfg);
  TfIdfSentenceEncoder encoder(index);
  std::map<std::string, std::vector<std::string>> out;
  std::ofstream file(p);
  if (!file) throw std::runtime_error("cannot write " + p.string());
  std::size_t warnings = 0;
  for (const Document& d : docs) {
    auto r = retrieve_facts(d.claim, index, encoder, rc, d.id);
    warnings += r.warnings.size();
    json facts = json::array();
    std::vector<std::string> texts;
    for (const auto& f : r.items) {
      facts.push_back(fact_json(f));
      texts.push_back(f.text);
    }
    file << json{{"id", d.id}, {"claim", d.claim}, {"facts", facts}}.dump() << "\n";
    out[d.id] = std::move(texts);
  }
  c.out << "facts: " << docs.size() << " claims -> " << p.string();
  if (warnings) c.out << " (" << warnings << " retrieval warnings)";
  c.out << "\n";
  return out;
}

// ----------------------------------------------------------- subcommands

void run_build_index(const Context& c) {
  auto docs = load_training_corpus(c);
  fs::remove(c.dir / files::vocab);
  fs::remove(c.dir / files::index);
  ensure_vocabulary(c, docs);
  ensure_index(c, docs);
}

void run_retrieve(const Context& c) {
  auto docs = load_training_corpus(c);
  TfIdfIndex index = ensure_index(c, docs);
  fs::remove(c.dir / files::facts);
  ensure_facts(c, docs, index);
}

ModelConfig model_config(const RunConfig& cfg, int vocab_size) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = static_cast<int>(cfg.integer("psa_lm.d_model"));
  m.n_heads = static_cast<int>(cfg.integer("psa_lm.n_heads"));
  m.n_encoder_blocks = static_cast<int>(cfg.integer("psa_lm.n_encoder_blocks"));
  m.n_decoder_blocks = static_cast<int>(cfg.integer("psa_lm.n_decoder_blocks"));
  m.ffn_dim = static_cast<int>(cfg.integer("psa_lm.ffn_dim"));
  m.max_positions = static_cast<int>(cfg.integer("psa_lm.max_positions"));
  m.init_std = cfg.real("psa_lm.init_std");
  m.validate();
  return m;
}

CRConfig cr_config(const RunConfig& cfg, const ModelConfig& m) {
  CRConfig c;
  c.vocab_size = m.vocab_size;
  c.d_model = m.d_model;
  c.d_cr = static_cast<int>(cfg.integer("claim_reconstructor.d_cr"));
  c.n_heads = static_cast<int>(cfg.integer("claim_reconstructor.n_heads"));
  c.n_blocks = static_cast<int>(cfg.integer("claim_reconstructor.n_blocks"));
  c.ffn_dim = static_cast<int>(cfg.integer("claim_reconstructor.ffn_dim"));
  c.max_positions = static_cast<int>(cfg.integer("claim_reconstructor.max_positions"));
  c.share_embeddings = cfg.boolean("claim_reconstructor.share_embeddings");
  c.init_std = m.init_std;
  c.validate();
  return c;
}

TrainingConfig training_config(const RunConfig& cfg) {
  TrainingConfig t;
  t.lambda = cfg.real("trainer.lambda");
  t.lr_encoder = cfg.real("trainer.lr_encoder");
  t.lr_decoder = cfg.real("trainer.lr_decoder");
  t.lr_cr = cfg.real("trainer.lr_cr");
  t.adam_beta1 = cfg.real("trainer.adam_beta1");
  t.adam_beta2 = cfg.real("trainer.adam_beta2");
  t.adam_eps = cfg.real("trainer.adam_eps");
  t.epochs_1 = static_cast<int>(cfg.integer("trainer.epochs_1"));
  t.epochs_2 = static_cast<int>(cfg.integer("trainer.epochs_2"));
  t.pretrain_psa_epochs = static_cast<int>(cfg.integer("trainer.pretrain_psa_epochs"));
  t.pretrain_cr_epochs = static_cast<int>(cfg.integer("trainer.pretrain_cr_epochs"));
  t.batch_size = static_cast<int>(cfg.integer("trainer.batch_size"));
  t.seed = seed_of(cfg);
  t.clip_norm = cfg.real("trainer.clip_norm");
  t.p_mask = cfg.real("trainer.p_mask");
  t.freeze_masks = cfg.boolean("trainer.freeze_masks");
  t.shuffle = cfg.boolean("trainer.shuffle");
  t.validate();
  return t;
}

json trace_json(const TrainTrace& trace, double lambda) {
  json groups = json::array();
  for (const auto& [name, lr] : trace.groups) groups.push_back({{"name", name}, {"lr", lr}});
  json rows = json::array();
  for (const auto& r : trace.rows)
    rows.push_back({{"phase", to_string(r.phase)},
                    {"epoch", r.epoch},
                    {"step", r.step},
                    {"l_cll", r.l_cll},
                    {"l_mll", r.l_mll},
                    {"l_total", r.l_total},
                    {"cll_per_token", r.cll_per_token},
                    {"fact_tokens", r.fact_tokens}});
  json ckpts = json::array();
  for (const auto& p : trace.checkpoints) ckpts.push_back(p.filename().string());
  return {{"lambda", lambda},
          {"groups", groups},
          {"phase_sequence", trace.phase_sequence()},
          {"checkpoints", ckpts},
          {"rows", rows}};
}

void run_train(const Context& c) {
  auto docs = load_training_corpus(c);
  TokenizeOptions topts = tokenize_options(c.cfg);
  TrainingConfig tcfg = training_config(c.cfg);
  Vocabulary vocab = ensure_vocabulary(c, docs);
  ModelConfig mcfg = model_config(c.cfg, vocab.size());
  CRConfig ccfg = cr_config(c.cfg, mcfg);
  if (topts.max_content_len + 1 > mcfg.max_positions ||
      topts.max_claim_len + topts.max_fact_len + 2 > mcfg.max_positions)
    throw ValidationError("psa_lm.max_positions (--max-positions) is smaller than the token budgets");
  if (topts.max_claim_len + 1 > ccfg.max_positions)
    throw ValidationError("claim_reconstructor.max_positions (--cr-max-positions) is smaller than max_claim_len + 1");
  TfIdfIndex index = ensure_index(c, docs);
  auto facts = ensure_facts(c, docs, index);

  std::vector<TokenizedExample> examples;
  for (const Document& d : docs) {
    auto it = facts.find(d.id);
    std::span<const std::string> f;
    if (it != facts.end()) f = it->second;
    examples.push_back(tokenize_example(d, f, vocab, topts));
  }

  const long per_epoch = (static_cast<long>(examples.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
  const long total = per_epoch * (tcfg.pretrain_psa_epochs + tcfg.pretrain_cr_epochs + tcfg.epochs_1 + tcfg.epochs_2);
  const long interval = c.cfg.integer("trainer.checkpoint_interval_steps");
  tcfg.checkpoint_interval_steps = interval > 0 ? interval : (interval == 0 ? std::max(1L, total / 4) : 0);

  FactGenModel model = FactGenModel::create(mcfg, ccfg, seed_of(c.cfg), vocab.fingerprint());
  Trainer trainer(model, tcfg);
  c.out << "training: " << examples.size() << " examples, " << total << " steps\n";
  const long report_every = std::max(1L, total / 20);
  TrainTrace trace = trainer.run_schedule(examples, c.dir / files::checkpoints, [&](const TraceRow& r) {
    if (r.step % report_every == 0 || r.step == total) {
      char line[160];
      std::snprintf(line, sizeof(line), "  step %5ld %-12s epoch %d  l_cll %.4f  l_mll %.4f\n", r.step,
                    to_string(r.phase), r.epoch, r.l_cll, r.l_mll);
      c.out << line;
    }
  });
  trace.write_csv(c.dir / files::trace_csv);
  {
    std::ofstream out(c.dir / files::trace_json);
    out << trace_json(trace, tcfg.lambda).dump(2) << "\n";
  }
  save_checkpoint(c.dir / files::model, model, &trainer.optimizer(), trainer.global_step());
  c.out << "model -> " << (c.dir / files::model).string() << "\n";
}

void run_generate(const Context& c) {
  const auto claim_path = c.cfg.required_path("sampler.claim_file");
  TokenizeOptions topts = tokenize_options(c.cfg);
  SamplerConfig scfg;
  scfg.p = c.cfg.real("sampler.p");
  scfg.max_length = static_cast<int>(c.cfg.integer("sampler.max_length"));
  scfg.temperature = c.cfg.real("sampler.temperature");
  scfg.repetition_penalty = c.cfg.real("sampler.repetition_penalty");
  scfg.min_length = static_cast<int>(c.cfg.integer("sampler.min_length"));
  scfg.validate();
  RetrievalConfig rc = retrieval_config(c.cfg);

  auto claims = load_claims(claim_path);
  Vocabulary vocab = Vocabulary::load(c.dir / files::vocab);
  LoadedCheckpoint ckpt = load_checkpoint(c.dir / files::model);
  check_vocabulary(ckpt.model, vocab);

  const std::string facts_mode = c.cfg.str("sampler.facts");
  std::optional<TfIdfIndex> index;
  std::map<std::string, std::vector<std::string>> given;
  if (facts_mode == "auto") index = TfIdfIndex::load(c.dir / files::index);
  else given = read_facts_file(facts_mode);

  const std::uint64_t seed = seed_of(c.cfg);
  std::ofstream out(c.dir / files::generations);
  if (!out) throw std::runtime_error("cannot write generations");
  for (std::size_t i = 0; i < claims.size(); ++i) {
    const Claim& cl = claims[i];
    std::vector<std::string> facts;
    if (index) {
      TfIdfSentenceEncoder encoder(*index);
      for (const auto& f : retrieve_facts(cl.claim, *index, encoder, rc).items) facts.push_back(f.text);
    } else if (auto it = given.find(cl.id); it != given.end()) {
      facts = it->second;
    }
    SamplerConfig per = scfg;
    per.seed = seed * 1000003ULL + i;
    Generation gen = generate(ckpt.model, vocab, cl.claim, facts, per, topts);
    out << json{{"id", cl.id}, {"claim", cl.claim}, {"facts_used", facts}, {"generated", gen.text}}.dump() << "\n";
  }
  c.out << "generations: " << claims.size() << " -> " << (c.dir / files::generations).string() << "\n";
}

void run_evaluate(const Context& c) {
  fs::path gen_path = c.cfg.path("evaluator.generated");
  if (gen_path.empty()) gen_path = c.dir / files::generations;
  const auto ref_path = c.cfg.required_path("evaluator.references");
  const fs::path report_path = inside(c.dir, c.cfg.str("evaluator.report"), "evaluator.report (--report)");
  const std::string ner = c.cfg.str("evaluator.ner");
  if (ner != "gazetteer" && ner != "rule")
    throw ValidationError("evaluator.ner (--ner) must be gazetteer or rule, got '" + ner + "'");

  std::map<std::string, std::string> refs;
  std::vector<std::string> ref_claims;
  for (const auto& rec : read_jsonl(ref_path)) {
    refs[record_id(rec)] = text_field(ref_path, rec, {"content", "reference", "text"});
    if (auto it = rec.value.find("claim"); it != rec.value.end() && it->is_string())
      ref_claims.push_back(it->get<std::string>());
  }
  std::vector<EvalSample> samples;
  for (const auto& rec : read_jsonl(gen_path)) {
    EvalSample s;
    s.id = record_id(rec);
    s.claim = text_field(gen_path, rec, {"claim"});
    s.generated = text_field(gen_path, rec, {"generated"});
    auto it = refs.find(s.id);
    if (it == refs.end()) throw ValidationError("no reference for generated id " + s.id);
    s.reference = it->second;
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw ValidationError(gen_path.string() + " has no generations");

  RuleBasedRecognizer rule;
  std::unique_ptr<EntityRecognizer> recognizer;
  if (ner == "rule") {
    recognizer = std::make_unique<RuleBasedRecognizer>();
  } else {
    std::set<std::string> entities;
    for (const auto& [id, text] : refs) entities.merge(rule.extract(text));
    for (const auto& text : ref_claims) entities.merge(rule.extract(text));
    for (const auto& s : samples) entities.merge(rule.extract(s.claim));
    recognizer = std::make_unique<GazetteerRecognizer>(std::move(entities));
  }
  LexicalStanceModel stance;
  MetricsReport report = evaluate_samples(samples, *recognizer, stance);
  if (fs::exists(c.dir / files::defender_metrics)) {
    std::ifstream in(c.dir / files::defender_metrics);
    json d = json::parse(in, nullptr, false);
    if (d.is_object() && d.contains("holdout_accuracy")) report.defender_accuracy = d["holdout_accuracy"].get<double>();
  }
  report.save(report_path);
  char line[160];
  std::snprintf(line, sizeof(line), "bleu %.6f  richness %.3f  consistency %.3f -> ", report.bleu,
                report.richness_mean, report.consistency);
  c.out << line << report_path.string() << "\n";
}

fs::path pick_checkpoint(const Context& c) {
  fs::path p = c.cfg.path("defender.checkpoint");
  const long step = c.cfg.integer("defender.checkpoint_step");
  if (p.empty()) {
    fs::path dir = c.dir / files::checkpoints;
    p = fs::exists(dir) && !fs::is_empty(dir) ? dir : c.dir / files::model;
  }
  if (!fs::is_directory(p)) return p;
  static const std::regex pattern("step_(\\d+)\\.ckpt");
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& e : fs::directory_iterator(p)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stol(m[1].str()), e.path());
  }
  if (found.empty()) throw LoadError("no step_*.ckpt files in " + p.string());
  std::sort(found.begin(), found.end());
  if (step >= 0) {
    for (const auto& [s, path] : found)
      if (s == step) return path;
    throw LoadError("no checkpoint for step " + std::to_string(step) + " in " + p.string());
  }
  const double mid = static_cast<double>(found.back().first) / 2.0;
  auto best = found.front();
  for (const auto& f : found)
    if (std::abs(static_cast<double>(f.first) - mid) < std::abs(static_cast<double>(best.first) - mid)) best = f;
  return best.second;
}

std::vector<DefenseRecord> read_texts(const fs::path& path, DefenderLabel label) {
  std::vector<DefenseRecord> out;
  for (const auto& rec : read_jsonl(path))
    out.push_back({record_id(rec), text_field(path, rec, {"text", "generated", "content"}), label});
  return out;
}

void run_defend_train(const Context& c) {
  fs::path fake = c.cfg.path("defender.fake");
  if (fake.empty()) fake = c.dir / files::generations;
  const fs::path real = c.cfg.required_path("defender.real");
  DefenderConfig dcfg;
  dcfg.epochs = static_cast<int>(c.cfg.integer("defender.epochs"));
  dcfg.batch_size = static_cast<int>(c.cfg.integer("defender.batch_size"));
  dcfg.lr_head = c.cfg.real("defender.lr_head");
  dcfg.lr_generator = c.cfg.real("defender.lr_generator");
  dcfg.holdout_fraction = c.cfg.real("defender.holdout_fraction");
  dcfg.finetune_generator = c.cfg.boolean("defender.finetune_generator");
  dcfg.seed = seed_of(c.cfg);
  dcfg.max_len = static_cast<int>(c.cfg.integer("corpus.max_content_len"));
  dcfg.validate();

  auto data = read_texts(fake, DefenderLabel::synthetic);
  auto human = read_texts(real, DefenderLabel::human);
  data.insert(data.end(), human.begin(), human.end());
  validate_dataset(data);

  const fs::path ckpt_path = pick_checkpoint(c);
  Vocabulary vocab = Vocabulary::load(c.dir / files::vocab);
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  check_vocabulary(ckpt.model, vocab);
  c.out << "defender: generator checkpoint " << ckpt_path.string() << " (step " << ckpt.global_step << ")\n";
  DefenderResult r = train_defender(data, std::move(ckpt.model.lm), ckpt.global_step, vocab, dcfg);
  r.model.save(c.dir / files::defender);
  json metrics = {{"checkpoint", ckpt_path.filename().string()},
                  {"checkpoint_step", ckpt.global_step},
                  {"finetune_generator", dcfg.finetune_generator},
                  {"n_train", r.split.train.size()},
                  {"n_holdout", r.split.holdout.size()},
                  {"train_accuracy", r.train_accuracy},
                  {"holdout_accuracy", r.holdout_accuracy}};
  std::ofstream(c.dir / files::defender_metrics) << metrics.dump(2) << "\n";
  char line[128];
  std::snprintf(line, sizeof(line), "train accuracy %.4f  held-out accuracy %.4f\n", r.train_accuracy,
                r.holdout_accuracy);
  c.out << line;
}

void run_defend_eval(const Context& c) {
  fs::path model_path = c.cfg.path("defender.model");
  if (model_path.empty()) model_path = c.dir / files::defender;
  const fs::path input = c.cfg.required_path("defender.input");
  const fs::path out_path = inside(c.dir, c.cfg.str("defender.out"), "defender.out (--out)");
  const int max_len = static_cast<int>(c.cfg.integer("corpus.max_content_len"));

  DefenderModel def = DefenderModel::load(model_path);
  Vocabulary vocab = Vocabulary::load(c.dir / files::vocab);
  if (def.generator().config().vocab_size != vocab.size() ||
      (def.vocab_fingerprint() != 0 && def.vocab_fingerprint() != vocab.fingerprint()))
    throw LoadError("defender was trained with a different vocabulary");

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  std::size_t labelled = 0, correct = 0, n = 0;
  for (const auto& rec : read_jsonl(input)) {
    const std::string text = text_field(input, rec, {"text", "generated", "content"});
    Classification cls = classify(text, def, vocab, max_len);
    out << json{{"id", record_id(rec)},
                {"label", to_string(cls.label)},
                {"score", cls.score},
                {"p_synthetic", cls.probabilities[1]}}
               .dump()
        << "\n";
    ++n;
    if (auto it = rec.value.find("label"); it != rec.value.end() && it->is_string()) {
      const std::string l = it->get<std::string>();
      if (l == "human" || l == "synthetic") {
        ++labelled;
        correct += l == to_string(cls.label);
      }
    }
  }
  c.out << "predictions: " << n << " -> " << out_path.string() << "\n";
  if (labelled)
    c.out << "accuracy on labelled inputs: " << static_cast<double>(correct) / static_cast<double>(labelled) << "\n";
}

struct Subcommand {
  const char* name;
  Command bit;
  const char* description;
  void (*run)(const Context&);
};

const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> s = {
      {"build-index", kBuildIndex, "Build the vocabulary and tf-idf index from a corpus", run_build_index},
      {"retrieve", kRetrieve, "Retrieve facts for every training claim", run_retrieve},
      {"train", kTrain, "Run the full training schedule", run_train},
      {"generate", kGenerate, "Sample content for a file of claims", run_generate},
      {"evaluate", kEvaluate, "Score generations (BLEU, richness, consistency)", run_evaluate},
      {"defend-train", kDefendTrain, "Train the synthetic-text detector", run_defend_train},
      {"defend-eval", kDefendEval, "Classify texts with a trained detector", run_defend_eval},
  };
  return s;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FactGen: fact-enhanced claim-to-content generation"};
  app.name("factgen");
  app.require_subcommand(1, 1);

  std::map<std::string, std::string> flag_values;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;  // subcommand -> field -> option
  std::map<std::string, std::string> config_files;
  for (const Subcommand& sc : subcommands()) {
    CLI::App* sub = app.add_subcommand(sc.name, sc.description);
    sub->add_option("--config", config_files[sc.name], "INI file; flags override its values");
    for (const Field& f : fields()) {
      if (!(f.commands & sc.bit)) continue;
      const std::string name = full_name(f);
      std::string help = std::string(f.help) + " [" + name + "]";
      auto* opt = sub->add_option(f.flag, flag_values[std::string(sc.name) + "|" + name], help);
      if (*f.default_value) opt->default_str(f.default_value);
      options[sc.name][name] = opt;
    }
  }

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-') {
    bool known = false;
    for (const Subcommand& sc : subcommands()) known = known || args.front() == sc.name;
    if (!known) {
      err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
      return 1;
    }
  }

  std::vector<const char*> argv{"factgen"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    auto chosen = app.get_subcommands();
    err << (chosen.empty() ? app.help() : chosen.front()->help());
    return 1;
  }

  const Subcommand* chosen = nullptr;
  for (const Subcommand& sc : subcommands())
    if (app.got_subcommand(sc.name)) chosen = &sc;
  if (chosen == nullptr) {
    err << app.help();
    return 1;
  }

  try {
    RunConfig cfg;
    if (!config_files[chosen->name].empty()) cfg.merge_file(config_files[chosen->name]);
    for (const auto& [name, opt] : options[chosen->name])
      if (opt->count() > 0) cfg.set(name, flag_values[std::string(chosen->name) + "|" + name]);
    cfg.validate();
    const fs::path dir = cfg.required_path("cli.out_dir");
    fs::create_directories(dir);
    cfg.write(dir / (std::string("config.") + chosen->name + ".ini"), chosen->name);
    Context ctx{cfg, dir, out};
    chosen->run(ctx);
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return 2;
  }
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace factgen::cli
