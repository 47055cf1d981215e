#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "factgen/cli.hpp"
#include "factgen/errors.hpp"
#include "support.hpp"

using namespace factgen;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  auto bad = run({"frobnicate"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"train", "--no-such-flag", "1"}).code, 1);
}

TEST(Cli, MissingRequiredFieldNamesFlag) {
  auto dir = support::scratch("cli_missing");
  auto r = run({"build-index", "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("corpus.path (--corpus)"), std::string::npos) << r.err;
}

TEST(Cli, ConfigFileValidation) {
  auto dir = support::scratch("cli_config");
  std::ofstream(dir / "bad.ini") << "[trainer]\nnot_a_key = 1\n";
  auto r = run({"build-index", "--config", (dir / "bad.ini").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("not_a_key"), std::string::npos);

  cli::RunConfig c;
  std::ofstream(dir / "ok.ini") << "[corpus]\npath = sub/corpus.jsonl\n[sampler]\np = 0.5\n";
  c.merge_file(dir / "ok.ini");
  EXPECT_EQ(c.path("corpus.path"), dir / "sub/corpus.jsonl");
  EXPECT_DOUBLE_EQ(c.real("sampler.p"), 0.5);
  c.set("sampler.p", "abc");
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Cli, BuildIndexAndRetrieve) {
  auto dir = support::scratch("cli_index");
  auto r = run({"build-index", "--corpus", support::data("toy_corpus_10.jsonl").string(), "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / cli::files::index));
  EXPECT_TRUE(std::filesystem::exists(dir / cli::files::vocab));
  EXPECT_TRUE(std::filesystem::exists(dir / "config.build-index.ini"));
  auto q = run({"retrieve", "--corpus", support::data("toy_corpus_10.jsonl").string(), "--out-dir", dir.string(),
                "--k1", "2", "--k2", "2"});
  ASSERT_EQ(q.code, 0) << q.err;
  EXPECT_TRUE(std::filesystem::exists(dir / cli::files::facts));
}

TEST(Cli, OutputPathsStayInsideRunDirectory) {
  auto dir = support::scratch("cli_escape");
  std::ofstream(dir / "g.jsonl") << "{\"id\":\"a\",\"text\":\"x\"}\n";
  auto r = run({"evaluate", "--out-dir", dir.string(), "--generated", (dir / "g.jsonl").string(), "--references",
                (dir / "g.jsonl").string(), "--report", "../escape.json"});
  EXPECT_EQ(r.code, 1);
}
