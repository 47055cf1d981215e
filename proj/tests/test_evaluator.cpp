#include <gtest/gtest.h>

#include <fstream>

#include "factgen/errors.hpp"
#include "factgen/evaluator.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace factgen;

TEST(Bleu, HandWorkedValues) {
  std::vector<std::string> h{"the cat sat on the mat"}, r{"the cat is on the mat"};
  EXPECT_NEAR(bleu(h, r), 0.002540663740773074, 1e-15);
  std::vector<std::string> h2{"the cat"}, r2{"the cat sat down"};
  EXPECT_NEAR(bleu(h2, r2), 1.1633369384516796e-05, 1e-18);
  EXPECT_NEAR(bleu(r, r), 1.0, 1e-15);
  std::vector<std::string> empty{""};
  EXPECT_EQ(bleu(empty, r), 0.0);
  std::vector<std::string> two{"a", "b"};
  EXPECT_THROW(bleu(two, r), ValidationError);
}

TEST(Bleu, CorpusLevelMatchesOracle) {
  auto docs = load_corpus(support::data("toy_heldout.jsonl"));
  std::vector<std::string> hyps, refs;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    hyps.push_back(docs[i].claim + " " + docs[(i + 1) % docs.size()].content.substr(0, 60));
    refs.push_back(docs[i].content);
  }
  EXPECT_NEAR(bleu(hyps, refs), oracle::bleu(hyps, refs), 1e-12);
}

TEST(Entities, RuleBasedMatchesOracle) {
  std::vector<std::string> texts{
      "Maria Lopez spoke in Iran on Monday. Officials from Harbor Energy agreed in 2019.",
      "The report, from Civic Health Trust, was \"false\" says Anna Berg. Next year 1999 and 3000 and 20190.",
      "\"Kenji Sato\" met (Priya Nair) at Riverstone Labs . Grace Kim left!",
      "no capitals here at all"};
  RuleBasedRecognizer r;
  for (const auto& t : texts) EXPECT_EQ(r.extract(t), oracle::entities(t)) << t;
  auto e = r.extract(texts[0]);
  EXPECT_TRUE(e.count("lopez"));
  EXPECT_TRUE(e.count("harbor energy"));
  EXPECT_TRUE(e.count("2019"));
  EXPECT_FALSE(e.count("maria lopez"));
  EXPECT_FALSE(e.count("officials from harbor energy"));
}

TEST(Entities, GazetteerAndRichness) {
  GazetteerRecognizer g({"Harbor Energy", "Iran", "2019"});
  EXPECT_EQ(g.extract("harbor energy expands in iran ; iran again"), (std::set<std::string>{"harbor energy", "iran"}));
  EXPECT_EQ(richness("harbor energy in 2019", g), 2);
  EXPECT_EQ(count_capitalized_spans("Maria Lopez met Anna Berg."), 2);
}

TEST(Stance, LexicalRule) {
  LexicalStanceModel m;
  EXPECT_EQ(m.classify("Atlas Motors expands solar power", "Atlas Motors will expand solar power soon"),
            Stance::agrees);
  EXPECT_EQ(m.classify("Atlas Motors expands solar power", "Atlas Motors denied the solar power story"),
            Stance::disagrees);
  EXPECT_EQ(m.classify("atlas motors expands solar power", "the weather was mild"), Stance::unrelated);
  EXPECT_NEAR(LexicalStanceModel::coverage("the cat sat", "a cat"), 0.5, 1e-15);
  EXPECT_EQ(parse_stance("Agrees"), Stance::agrees);
  EXPECT_FALSE(parse_stance("maybe").has_value());
}

TEST(Stance, BagOfWordsLearnsSeparableData) {
  std::vector<BagOfWordsStanceModel::Example> data;
  const char* topics[] = {"solar power", "clean water", "rail transport", "public schools"};
  for (const char* t : topics) {
    std::string claim = std::string("officials expand ") + t;
    data.push_back({claim, std::string("officials will expand ") + t + " next year", Stance::agrees});
    data.push_back({claim, std::string("officials denied plans to expand ") + t, Stance::disagrees});
    data.push_back({claim, "the football match ended early", Stance::unrelated});
  }
  BagOfWordsStanceModel m;
  m.fit(data);
  int right = 0;
  for (const auto& ex : data) right += m.classify(ex.claim, ex.content) == ex.label;
  EXPECT_EQ(right, static_cast<int>(data.size()));
}

namespace {

// Agrees exactly when the content contains "yes".
struct KeywordStance : StanceModel {
  Stance classify(std::string_view, std::string_view content) const override {
    return content.find("yes") != std::string_view::npos ? Stance::agrees : Stance::unrelated;
  }
};

}  // namespace

TEST(Consistency, ShareOfAgreement) {
  std::vector<std::pair<std::string, std::string>> pairs{{"c", "yes"}, {"c", "no"}, {"c", "yes"}, {"c", "yes yes"}};
  EXPECT_DOUBLE_EQ(consistency(pairs, KeywordStance{}), 0.75);
  EXPECT_THROW(consistency({}, KeywordStance{}), ValidationError);
}

TEST(Report, JsonSchema) {
  std::vector<EvalSample> s{{"a", "Iran approves budget", "iran approves budget yes", "Iran approves a budget"},
                            {"b", "Kenya bans fishing", "unrelated words", "Kenya bans fishing quotas"}};
  GazetteerRecognizer g({"iran", "kenya"});
  auto r = evaluate_samples(s, g, KeywordStance{});
  EXPECT_DOUBLE_EQ(r.consistency, 0.5);
  EXPECT_DOUBLE_EQ(r.richness_mean, 0.5);
  auto j = r.to_json();
  EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(j["samples"].size(), 2u);
  EXPECT_TRUE(j.contains("bleu"));
  auto dir = support::scratch("report");
  r.save(dir / "report.json");
  std::ifstream in(dir / "report.json");
  EXPECT_EQ(nlohmann::json::parse(in)["consistency"], 0.5);
}
