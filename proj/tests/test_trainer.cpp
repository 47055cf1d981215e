#include <gtest/gtest.h>

#include <fstream>

#include "factgen/errors.hpp"
#include "factgen/trainer.hpp"
#include "support.hpp"

using namespace factgen;

namespace {

using support::ToyData;

TrainingConfig short_schedule() {
  TrainingConfig c;
  c.pretrain_psa_epochs = 1;
  c.pretrain_cr_epochs = 1;
  c.epochs_1 = 2;
  c.epochs_2 = 1;
  c.batch_size = 4;
  c.seed = 3;
  return c;
}

FactGenModel tiny(const ToyData& d) {
  return FactGenModel::create(support::tiny_model(d.vocab.size(), 16), support::tiny_cr(d.vocab.size(), 16), 21,
                              d.vocab.fingerprint());
}

}  // namespace

TEST(Trainer, ScheduleOrderAndFactUsage) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto model = tiny(d);
  Trainer t(model, short_schedule());
  auto dir = support::scratch("trainer");
  auto trace = t.run_schedule(d.examples, dir / "ckpt");

  std::vector<std::string> want{"pretrain_psa", "pretrain_cr", "stage1", "stage1", "stage2"};
  EXPECT_EQ(trace.phase_sequence(), want);
  ASSERT_EQ(trace.rows.size(), 15u);  // 5 epochs x 3 batches
  for (const auto& r : trace.rows) {
    EXPECT_NEAR(r.l_total, r.l_cll + 0.001 * r.l_mll, 1e-12);
    if (r.phase == Phase::stage2)
      EXPECT_GT(r.fact_tokens, 0);
    else
      EXPECT_EQ(r.fact_tokens, 0);
    if (r.phase == Phase::pretrain_cr) EXPECT_EQ(r.l_cll, 0.0);
    if (r.phase == Phase::pretrain_psa) EXPECT_EQ(r.l_mll, 0.0);
  }
  EXPECT_EQ(trace.rows.back().step, 15);
  EXPECT_EQ(t.global_step(), 15);

  ASSERT_EQ(trace.groups.size(), 3u);
  EXPECT_EQ(trace.groups[0], (std::pair<std::string, double>{"encoder", 1e-3}));
  EXPECT_EQ(trace.groups[1], (std::pair<std::string, double>{"decoder", 1e-5}));
  EXPECT_EQ(trace.groups[2], (std::pair<std::string, double>{"reconstructor", 5e-5}));

  trace.write_csv(dir / "trace.csv");
  std::ifstream in(dir / "trace.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "phase,epoch,step,l_cll,l_mll,l_total,fact_tokens");
}

TEST(Trainer, SameSeedSameTrace) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto run = [&] {
    auto model = tiny(d);
    Trainer t(model, short_schedule());
    return t.run_schedule(d.examples);
  };
  auto a = run(), b = run();
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].l_total, b.rows[i].l_total);
}

TEST(Trainer, PeriodicCheckpointsAreLoadable) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto model = tiny(d);
  auto cfg = short_schedule();
  cfg.checkpoint_interval_steps = 5;
  Trainer t(model, cfg);
  auto dir = support::scratch("trainer_ckpt");
  auto trace = t.run_schedule(d.examples, dir);
  ASSERT_EQ(trace.checkpoints.size(), 3u);
  EXPECT_EQ(trace.checkpoints[0].filename(), "step_00000005.ckpt");
  auto loaded = load_checkpoint(trace.checkpoints.back());
  EXPECT_EQ(loaded.global_step, 15);
}

TEST(Trainer, EvaluateLeavesParametersUntouched) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto model = tiny(d);
  Trainer t(model, short_schedule());
  std::vector<MaskedClaim> masks;
  for (auto& ex : d.examples) masks.push_back(unmasked_claim(ex.claim_ids));
  Matrix before = model.lm.parameters().find("decoder.lm_head.weight")->value;
  auto l = t.evaluate(d.examples, masks, true);
  EXPECT_GT(l.cll, 0.0);
  EXPECT_EQ(l.mll, 0.0);
  EXPECT_EQ(model.lm.parameters().find("decoder.lm_head.weight")->value, before);
  auto s = t.joint_step(std::span(d.examples).first(2), std::span(masks).first(2), true);
  EXPECT_NE(model.lm.parameters().find("decoder.lm_head.weight")->value, before);
  EXPECT_NEAR(s.total, s.cll + 0.001 * s.mll, 1e-12);
}

TEST(Trainer, RejectsStageTwoWithoutFactsAndBadConfig) {
  auto d = support::toy_data("toy_corpus_10.jsonl", /*facts=*/false);
  auto model = tiny(d);
  Trainer t(model, short_schedule());
  EXPECT_THROW(t.run_schedule(d.examples), ValidationError);
  EXPECT_EQ(t.global_step(), 0);
  TrainingConfig bad;
  bad.lr_decoder = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = TrainingConfig{};
  bad.p_mask = 2.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Trainer, FactProjectionsUntouchedWithoutFacts) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto model = tiny(d);
  auto cfg = short_schedule();
  cfg.epochs_2 = 0;
  const Matrix fk = model.lm.parameters().at("decoder.block0.source.fact_key.weight").value;
  const Matrix fv = model.lm.parameters().at("decoder.block0.source.fact_value.bias").value;
  const Matrix ck = model.lm.parameters().at("decoder.block0.source.claim_key.weight").value;
  Trainer t(model, cfg);
  t.run_schedule(d.examples);
  EXPECT_EQ(model.lm.parameters().at("decoder.block0.source.fact_key.weight").value, fk);
  EXPECT_EQ(model.lm.parameters().at("decoder.block0.source.fact_value.bias").value, fv);
  EXPECT_NE(model.lm.parameters().at("decoder.block0.source.claim_key.weight").value, ck);
}

TEST(Trainer, ZeroLambdaMatchesLanguageModelStep) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto batch = std::span(d.examples).first(3);
  std::vector<MaskedClaim> masks;
  std::mt19937_64 rng(2);
  for (auto& ex : batch) masks.push_back(mask_claim(ex.claim_ids, 0.5, rng));
  auto cfg = short_schedule();
  cfg.lambda = 0.0;
  auto a = tiny(d), b = tiny(d);
  Trainer ta(a, cfg), tb(b, cfg);
  ta.joint_step(batch, masks, true);
  tb.lm_step(batch, true);
  auto pa = a.lm.parameters().all();
  auto pb = b.lm.parameters().all();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

TEST(Trainer, SmallStepDescends) {
  auto d = support::toy_data("toy_corpus_10.jsonl");
  auto batch = std::span(d.examples).first(2);
  std::vector<MaskedClaim> masks;
  std::mt19937_64 rng(2);
  for (auto& ex : batch) masks.push_back(mask_claim(ex.claim_ids, 0.5, rng));
  auto model = FactGenModel::create(support::tiny_model(d.vocab.size(), 8), support::tiny_cr(d.vocab.size(), 8), 6,
                                    d.vocab.fingerprint());
  auto cfg = short_schedule();
  cfg.lr_encoder = cfg.lr_decoder = cfg.lr_cr = 1e-4;
  Trainer t(model, cfg);
  double before = t.evaluate(batch, masks, true).total;
  t.joint_step(batch, masks, true);
  EXPECT_LT(t.evaluate(batch, masks, true).total, before);
}
