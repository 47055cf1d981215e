#include <gtest/gtest.h>

#include <map>

#include "factgen/errors.hpp"
#include "factgen/sampler.hpp"
#include "support.hpp"

using namespace factgen;

TEST(Nucleus, SmallestPrefixReachingMass) {
  std::vector<double> p{0.1, 0.4, 0.2, 0.3};
  EXPECT_EQ(nucleus_filter(p, 0.5), (std::vector<int>{1, 3}));
  EXPECT_EQ(nucleus_filter(p, 0.7), (std::vector<int>{1, 3}));
  EXPECT_EQ(nucleus_filter(p, 0.71), (std::vector<int>{1, 3, 2}));
  EXPECT_EQ(nucleus_filter(p, 1.0), (std::vector<int>{1, 3, 2, 0}));
  EXPECT_EQ(nucleus_filter(p, 1e-9), (std::vector<int>{1}));
}

TEST(Nucleus, TiesByIdAndZerosExcluded) {
  std::vector<double> p{0.0, 0.25, 0.25, 0.5, 0.0};
  EXPECT_EQ(nucleus_filter(p, 0.6), (std::vector<int>{3, 1}));
  EXPECT_EQ(nucleus_filter(p, 1.0), (std::vector<int>{3, 1, 2}));
  auto n = renormalized_nucleus(p, 0.6);
  EXPECT_NEAR(n.probabilities[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(n.probabilities[1], 1.0 / 3.0, 1e-15);
}

TEST(Nucleus, SamplesOnlyFromSupport) {
  std::vector<double> p{0.05, 0.6, 0.3, 0.05};
  std::mt19937_64 rng(1);
  std::map<int, int> counts;
  for (int i = 0; i < 2000; ++i) ++counts[sample_nucleus(p, 0.85, rng)];
  EXPECT_EQ(counts.size(), 2u);
  EXPECT_NEAR(counts[1] / 2000.0, 2.0 / 3.0, 0.04);
}

TEST(Sampler, TemperatureAndValidation) {
  std::vector<double> logits{0.0, std::log(3.0)};
  auto d = token_distribution(logits, 1.0);
  EXPECT_NEAR(d[1], 0.75, 1e-15);
  auto hot = token_distribution(logits, 2.0);
  EXPECT_NEAR(hot[1], std::sqrt(3.0) / (1.0 + std::sqrt(3.0)), 1e-15);
  SamplerConfig c;
  c.p = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = SamplerConfig{};
  c.max_length = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = SamplerConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

class GenerateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    data = support::toy_data("toy_corpus_10.jsonl", false);
    model = std::make_unique<FactGenModel>(FactGenModel::create(support::tiny_model(data.vocab.size(), 16),
                                                                support::tiny_cr(data.vocab.size(), 16), 4,
                                                                data.vocab.fingerprint()));
  }
  support::ToyData data;
  std::unique_ptr<FactGenModel> model;
};

TEST_F(GenerateTest, DeterministicPerSeedAndBounded) {
  SamplerConfig c;
  c.max_length = 12;
  c.seed = 5;
  std::vector<std::string> facts{"Officials said the plan follows a review."};
  auto a = generate(*model, data.vocab, data.docs[0].claim, facts, c);
  auto b = generate(*model, data.vocab, data.docs[0].claim, facts, c);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.text, b.text);
  EXPECT_LE(a.token_ids.size(), 12u);
  for (int id : a.token_ids) {
    EXPECT_NE(id, special::bos);
    EXPECT_NE(id, special::pad);
    EXPECT_NE(id, special::mask);
  }
  c.seed = 6;
  c.max_length = 1;
  EXPECT_EQ(generate(*model, data.vocab, data.docs[0].claim, facts, c).token_ids.size(), 1u);
}

TEST_F(GenerateTest, TinyNucleusIsGreedy) {
  SamplerConfig c;
  c.p = 1e-12;
  c.max_length = 10;
  auto s = generate(*model, data.vocab, data.docs[1].claim, {}, c);
  auto g = generate_greedy(*model, data.vocab, data.docs[1].claim, {}, 10);
  EXPECT_EQ(s.token_ids, g.token_ids);
}

TEST_F(GenerateTest, MinLengthSuppressesEos) {
  SamplerConfig c;
  c.max_length = 6;
  c.min_length = 6;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    c.seed = seed;
    auto r = generate(*model, data.vocab, data.docs[2].claim, {}, c);
    EXPECT_EQ(r.token_ids.size(), 6u);
    EXPECT_FALSE(r.stopped_at_eos);
  }
  Vocabulary other;
  EXPECT_THROW(generate(*model, other, "x", {}, c), LoadError);
}
