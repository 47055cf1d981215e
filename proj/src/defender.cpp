#include "factgen/defender.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "factgen/errors.hpp"

namespace factgen {

const char* to_string(DefenderLabel l) { return l == DefenderLabel::synthetic ? "synthetic" : "human"; }

std::vector<int> defender_input(std::string_view text, const Vocabulary& vocab, int max_len) {
  std::vector<int> ids{special::bos};
  auto toks = encode_tokens(text, vocab);
  if (toks.empty()) throw ValidationError("defender input text has no tokens");
  if (static_cast<int>(toks.size()) > max_len) toks.resize(static_cast<std::size_t>(max_len));
  ids.insert(ids.end(), toks.begin(), toks.end());
  return ids;
}

Var pooled_representation(Graph& g, const PsaModel& model, std::span<const int> input_ids) {
  ForwardResult fr = model.decode(g, input_ids, EncoderOutput{});
  const int n = static_cast<int>(input_ids.size()) - 1;
  return ops::mean_rows(ops::slice_rows(fr.decoder_hidden, 1, n));
}

Eigen::RowVectorXd extract_representation(std::string_view text, const PsaModel& model, const Vocabulary& vocab,
                                          int max_len) {
  max_len = std::min(max_len, model.config().max_positions - 1);
  auto ids = defender_input(text, vocab, max_len);
  Graph g;
  return pooled_representation(g, model, ids).value();
}

void DefenderConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw ValidationError("defender epochs/batch_size invalid");
  if (!(lr_head > 0.0 && lr_generator > 0.0)) throw ValidationError("defender learning rates must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw ValidationError("holdout_fraction must lie in [0, 1)");
  if (max_len < 1) throw ValidationError("defender max_len must be positive");
}

DefenderModel::DefenderModel(PsaModel generator, long checkpoint_step, std::uint64_t vocab_fingerprint,
                             bool finetune_generator, std::uint64_t seed)
    : generator_(std::move(generator)),
      checkpoint_step_(checkpoint_step),
      vocab_fingerprint_(vocab_fingerprint),
      finetune_generator_(finetune_generator) {
  NormalSampler init(seed);
  head_ = make_linear(head_params_, "head", ParamGroup::classifier, generator_.config().d_model, 2, init,
                      generator_.config().init_std);
}

Var DefenderModel::logits(Graph& g, std::span<const int> input_ids) const {
  return head_.apply(g, pooled_representation(g, generator_, input_ids));
}

Var DefenderModel::logits_from_features(Graph& g, const Eigen::RowVectorXd& features) const {
  return head_.apply(g, g.constant(features));
}

void DefenderModel::save(const std::filesystem::path& path) const {
  TensorArchive a;
  a.meta["kind"] = "defender";
  a.meta["model"] = generator_.config();
  a.meta["checkpoint_step"] = checkpoint_step_;
  a.meta["vocab_fingerprint"] = std::to_string(vocab_fingerprint_);
  a.meta["finetune_generator"] = finetune_generator_;
  store_parameters(a, generator_.parameters(), "generator.");
  store_parameters(a, head_params_);
  a.save(path);
}

DefenderModel DefenderModel::load(const std::filesystem::path& path) {
  TensorArchive a = TensorArchive::load(path);
  if (a.meta.value("kind", "") != "defender") throw LoadError(path.string() + " is not a defender checkpoint");
  ModelConfig mc;
  try {
    mc = a.meta.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad configuration block: " + e.what());
  }
  DefenderModel m(PsaModel(mc, 0), a.meta.value("checkpoint_step", 0L),
                  std::stoull(a.meta.value("vocab_fingerprint", std::string("0"))),
                  a.meta.value("finetune_generator", true), 0);
  load_parameters(m.generator_.parameters(), a, "generator.");
  load_parameters(m.head_params_, a);
  return m;
}

void validate_dataset(std::span<const DefenseRecord> data) {
  std::set<std::string> human, synthetic;
  for (const auto& r : data) (r.label == DefenderLabel::human ? human : synthetic).insert(normalize_whitespace(r.text));
  if (human.empty() || synthetic.empty())
    throw ValidationError("defender dataset needs both human and synthetic texts");
  for (const auto& t : human)
    if (synthetic.count(t)) throw ValidationError("text appears in both classes: \"" + t.substr(0, 60) + "\"");
}

DefenseSplit split_dataset(std::span<const DefenseRecord> data, double holdout_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DefenseSplit s;
  for (DefenderLabel cls : {DefenderLabel::human, DefenderLabel::synthetic}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data[i].label == cls) idx.push_back(i);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    auto n_hold = static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(idx.size())));
    if (holdout_fraction > 0.0 && idx.size() >= 2) n_hold = std::clamp<std::size_t>(n_hold, 1, idx.size() - 1);
    s.holdout.insert(s.holdout.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
  }
  std::sort(s.holdout.begin(), s.holdout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

Classification classify(std::string_view text, const DefenderModel& defender, const Vocabulary& vocab, int max_len) {
  max_len = std::min(max_len, defender.generator().config().max_positions - 1);
  auto ids = defender_input(text, vocab, max_len);
  Graph g;
  Matrix p = softmax_rows(defender.logits(g, ids).value());
  Classification c;
  c.probabilities[0] = p(0, 0);
  c.probabilities[1] = p(0, 1);
  c.label = p(0, 1) > p(0, 0) ? DefenderLabel::synthetic : DefenderLabel::human;
  c.score = c.probabilities[static_cast<int>(c.label)];
  return c;
}

double accuracy(std::span<const DefenseRecord> data, std::span<const std::size_t> indices,
                const DefenderModel& defender, const Vocabulary& vocab, int max_len) {
  if (indices.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i : indices) hit += classify(data[i].text, defender, vocab, max_len).label == data[i].label;
  return static_cast<double>(hit) / static_cast<double>(indices.size());
}

DefenderResult train_defender(std::span<const DefenseRecord> data, PsaModel generator, long checkpoint_step,
                              const Vocabulary& vocab, const DefenderConfig& config) {
  config.validate();
  validate_dataset(data);
  if (generator.config().vocab_size != vocab.size())
    throw LoadError("generator vocabulary size does not match the vocabulary");
  const int max_len = std::min(config.max_len, generator.config().max_positions - 1);

  DefenderModel model(std::move(generator), checkpoint_step, vocab.fingerprint(), config.finetune_generator,
                      config.seed);
  DefenseSplit split = split_dataset(data, config.holdout_fraction, config.seed);

  std::vector<std::vector<int>> inputs;
  inputs.reserve(data.size());
  for (const auto& r : data) inputs.push_back(defender_input(r.text, vocab, max_len));

  // Frozen generator: the pooled features never change, so compute them once.
  std::vector<Eigen::RowVectorXd> features;
  if (!config.finetune_generator) {
    features.resize(data.size());
    for (std::size_t i : split.train) {
      Graph g;
      features[i] = pooled_representation(g, model.generator(), inputs[i]).value();
    }
  }

  Adam opt(AdamConfig{0.9, 0.998, 1e-8});
  opt.add_group("classifier", config.lr_head, model.head_parameters().all());
  std::vector<Parameter*> trainable = model.head_parameters().all();
  if (config.finetune_generator) {
    auto dec = model.generator().parameters().group(ParamGroup::decoder);
    opt.add_group("decoder", config.lr_generator, dec);
    trainable.insert(trainable.end(), dec.begin(), dec.end());
  }

  std::mt19937_64 order_rng(config.seed + 1);
  std::vector<std::size_t> order = split.train;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng() % i]);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (Parameter* p : trainable) p->zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        Graph g;
        Var logits = config.finetune_generator ? model.logits(g, inputs[i]) : model.logits_from_features(g, features[i]);
        Var loss = ops::cross_entropy_sum(logits, std::vector<int>{static_cast<int>(data[i].label)});
        g.backward(ops::scale(loss, inv));
      }
      clip_grad_norm(trainable, 1.0);
      opt.step();
    }
  }
  for (Parameter* p : trainable) p->zero_grad();

  DefenderResult result{std::move(model), split, 0.0, 0.0};
  result.train_accuracy = accuracy(data, result.split.train, result.model, vocab, max_len);
  result.holdout_accuracy = accuracy(data, result.split.holdout, result.model, vocab, max_len);
  return result;
}

}  // namespace factgen
