#include "factgen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "factgen/errors.hpp"

namespace factgen {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'G', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

const Matrix* TensorArchive::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  json header = meta;
  header["format_version"] = kCheckpointVersion;
  json table = json::array();
  for (const auto& [name, m] : tensors) table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : tensors)
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw LoadError(path.string() + " is not a checkpoint");
  auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw LoadError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  auto header_len = read_pod<std::uint64_t>(in, path);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw LoadError("truncated checkpoint header in " + path.string());
  TensorArchive a;
  try {
    a.meta = json::parse(text);
  } catch (const json::parse_error& e) {
    throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  for (const auto& t : a.meta.at("tensors")) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw LoadError("truncated tensor data in " + path.string());
    a.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  a.meta.erase("tensors");
  return a;
}

void to_json(json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},         {"d_model", c.d_model},
       {"n_heads", c.n_heads},               {"n_encoder_blocks", c.n_encoder_blocks},
       {"n_decoder_blocks", c.n_decoder_blocks}, {"ffn_dim", c.ffn_dim},
       {"max_positions", c.max_positions},   {"init_std", c.init_std}};
}

void from_json(const json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("n_encoder_blocks").get_to(c.n_encoder_blocks);
  j.at("n_decoder_blocks").get_to(c.n_decoder_blocks);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("max_positions").get_to(c.max_positions);
  j.at("init_std").get_to(c.init_std);
}

void to_json(json& j, const CRConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"d_cr", c.d_cr},
       {"n_heads", c.n_heads},       {"n_blocks", c.n_blocks},       {"ffn_dim", c.ffn_dim},
       {"max_positions", c.max_positions}, {"share_embeddings", c.share_embeddings},
       {"init_std", c.init_std}};
}

void from_json(const json& j, CRConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("d_cr").get_to(c.d_cr);
  j.at("n_heads").get_to(c.n_heads);
  j.at("n_blocks").get_to(c.n_blocks);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("max_positions").get_to(c.max_positions);
  j.at("share_embeddings").get_to(c.share_embeddings);
  j.at("init_std").get_to(c.init_std);
}

FactGenModel FactGenModel::create(const ModelConfig& model, const CRConfig& cr, std::uint64_t seed,
                                  std::uint64_t vocab_fingerprint) {
  if (cr.vocab_size != model.vocab_size) throw ValidationError("reconstructor and generator vocabularies differ");
  if (cr.d_model != model.d_model) throw ValidationError("reconstructor d_model must equal the generator's d_model");
  return FactGenModel{PsaModel(model, seed), ClaimReconstructor(cr, seed ^ 0x9e3779b97f4a7c15ULL),
                      vocab_fingerprint};
}

std::vector<Parameter*> FactGenModel::parameters() {
  auto out = lm.parameters().all();
  auto more = cr.parameters().all();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

Parameter* FactGenModel::shared_tokens() {
  return cr.config().share_embeddings ? &lm.decoder_embedding() : nullptr;
}

void load_parameters(ParameterSet& dst, const TensorArchive& src, const std::string& prefix) {
  for (Parameter* p : dst.all()) {
    const Matrix* m = src.find(prefix + p->name);
    if (m == nullptr) throw LoadError("checkpoint lacks tensor " + prefix + p->name);
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
      throw LoadError("tensor " + prefix + p->name + " has the wrong shape");
    p->value = *m;
    p->zero_grad();
  }
}

void store_parameters(TensorArchive& dst, const ParameterSet& src, const std::string& prefix) {
  for (const Parameter* p : src.all()) dst.add(prefix + p->name, p->value);
}

void save_checkpoint(const std::filesystem::path& path, FactGenModel& model, const Adam* optimizer,
                     long global_step) {
  TensorArchive a;
  a.meta["kind"] = "generator";
  a.meta["model"] = model.lm.config();
  a.meta["reconstructor"] = model.cr.config();
  a.meta["vocab_fingerprint"] = std::to_string(model.vocab_fingerprint);
  a.meta["global_step"] = global_step;
  store_parameters(a, model.lm.parameters());
  store_parameters(a, model.cr.parameters());
  if (optimizer != nullptr) {
    json groups = json::array();
    for (const auto& g : optimizer->groups()) groups.push_back({{"name", g.name}, {"lr", g.lr}});
    a.meta["optimizer"] = {{"type", "adam"},
                           {"beta1", optimizer->config().beta1},
                           {"beta2", optimizer->config().beta2},
                           {"eps", optimizer->config().eps},
                           {"steps", optimizer->steps()},
                           {"groups", groups}};
    for (const auto& [name, mv] : optimizer->moments()) {
      if (mv.m.size() == 0) continue;
      a.add("adam.m/" + name, mv.m);
      a.add("adam.v/" + name, mv.v);
    }
  }
  a.save(path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  TensorArchive a = TensorArchive::load(path);
  if (a.meta.value("kind", "") != "generator") throw LoadError(path.string() + " is not a generator checkpoint");
  ModelConfig mc;
  CRConfig cc;
  try {
    mc = a.meta.at("model").get<ModelConfig>();
    cc = a.meta.at("reconstructor").get<CRConfig>();
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": bad configuration block: " + e.what());
  }
  std::uint64_t fp = std::stoull(a.meta.value("vocab_fingerprint", std::string("0")));
  FactGenModel model = FactGenModel::create(mc, cc, 0, fp);
  load_parameters(model.lm.parameters(), a);
  load_parameters(model.cr.parameters(), a);
  long step = a.meta.value("global_step", 0L);
  return {std::move(model), step, std::move(a)};
}

void check_vocabulary(const FactGenModel& model, const Vocabulary& vocab) {
  if (model.lm.config().vocab_size != vocab.size())
    throw LoadError("checkpoint vocabulary size " + std::to_string(model.lm.config().vocab_size) +
                    " does not match vocabulary of size " + std::to_string(vocab.size()));
  if (model.vocab_fingerprint != 0 && model.vocab_fingerprint != vocab.fingerprint())
    throw LoadError("checkpoint was trained with a different vocabulary");
}

void restore_optimizer(const TensorArchive& archive, Adam& optimizer) {
  auto it = archive.meta.find("optimizer");
  if (it == archive.meta.end()) throw LoadError("checkpoint has no optimizer state");
  optimizer.set_steps(it->at("steps").get<long>());
  for (auto& [name, mv] : optimizer.moments()) {
    const Matrix* m = archive.find("adam.m/" + name);
    const Matrix* v = archive.find("adam.v/" + name);
    if (m != nullptr && v != nullptr) {
      mv.m = *m;
      mv.v = *v;
    }
  }
}

}  // namespace factgen
