#include <doctest.h>

#include <fstream>
#include <sstream>

#include "halluc/cli.hpp"
#include "halluc/corpus.hpp"
#include "support.hpp"

using namespace halluc;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string fx(const std::string& name) { return testing::fixture(name).string(); }

void write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("validate") {
  auto r = run({"validate", fx("corpus.jsonl")});
  CHECK(r.code == 0);
  CHECK(r.out.empty());
  CHECK(r.err.empty());

  testing::TempDir dir("cli-validate");
  write(dir / "bad.jsonl",
        R"({"id":"broken-7","image_ref":"i","prompt":"p","response":"hello world","spans":[{"start":0,"end":6,"label":"inaccurate"},{"start":4,"end":8,"label":"analysis"}],"split":"train"})"
        "\n");
  r = run({"validate", (dir / "bad.jsonl").string()});
  CHECK(r.code == 1);
  CHECK(r.out.find("broken-7") != std::string::npos);
  CHECK(r.out.find("overlap") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  auto r = run({"validate", fx("corpus.jsonl"), "--bogus"});
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"nonsense"}).code == 2);
  CHECK(run({"select", fx("scores_abc.jsonl")}).code == 2);  // --n is required
  CHECK(run({"select", fx("scores_abc.jsonl"), "--n", "1", "--mode", "median"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("select on the three-candidate fixture") {
  auto r = run({"select", fx("scores_abc.jsonl"), "--n", "3", "--mode", "best", "--seed", "1"});
  CHECK(r.code == 0);
  CHECK(r.out == R"({"prompt_id":"","n":3,"mode":"best","chosen":"b","score":0.2})" "\n");
  r = run({"select", fx("scores_abc.jsonl"), "--n", "3", "--mode", "worst"});
  CHECK(r.out.find(R"("chosen":"c")") != std::string::npos);
  r = run({"select", fx("scores_abc.jsonl"), "--n", "4"});
  CHECK(r.code == 1);
}

TEST_CASE("stats and condense") {
  auto r = run({"stats", fx("corpus.jsonl"), "--out", "csv"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("metric,value\n", 0) == 0);
  CHECK(r.out.find("records_train,18\n") != std::string::npos);
  r = run({"stats", fx("corpus.jsonl"), "--out", "json"});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"inaccurate_density\"") != std::string::npos);

  r = run({"condense", fx("corpus.jsonl")});
  CHECK(r.code == 0);
  std::size_t lines = 0;
  for (char c : r.out) lines += c == '\n';
  CHECK(lines == 24);
  CHECK(r.out.find("\"sentence_labels\"") != std::string::npos);
}

TEST_CASE("correlate reports undefined correlation") {
  testing::TempDir dir("cli-corr");
  write(dir / "flat.csv", "id,reward_score,human_score\na,0.5,0.7\nb,0.5,0.7\n");
  auto r = run({"correlate", (dir / "flat.csv").string()});
  CHECK(r.code == 1);
  CHECK(r.out.find("undefined") != std::string::npos);
  write(dir / "line.csv", "id,reward_score,human_score\na,0,1\nb,1,0.5\nc,2,0\n");
  r = run({"correlate", (dir / "line.csv").string(), "--points", (dir / "pts.csv").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("pearson_r,-1\n") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "pts.csv"));
}

TEST_CASE("full pipeline on the bundled fixtures") {
  testing::TempDir dir("cli-pipeline");
  const auto model = (dir / "rm.bin").string();
  const auto scores = (dir / "scores.jsonl").string();
  const auto joined = (dir / "joined.csv").string();

  REQUIRE(run({"train-rm", fx("corpus.jsonl"), "--config", fx("rm.conf"), "--out", model, "--seed", "3"}).code == 0);
  auto r = run({"eval-rm", fx("corpus.jsonl"), "--model", model});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"macro_f1\"") != std::string::npos);

  REQUIRE(run({"score", fx("generations.jsonl"), "--model", model, "-o", scores}).code == 0);
  r = run({"select", scores, "--n", "2", "--mode", "best", "--seed", "4"});
  CHECK(r.code == 0);
  std::size_t lines = 0;
  for (char c : r.out) lines += c == '\n';
  CHECK(lines == 4);  // one per prompt

  r = run({"curve", scores, "--grid", "1,2,4", "--draws", "10", "--variance-detail"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("n,mean,variance,variance_across_prompts,variance_across_draws\n", 0) == 0);
  CHECK(run({"curve", scores, "--grid", "1,x"}).code == 1);
  CHECK(run({"curve", scores, "--grid", "1,8"}).code == 1);

  REQUIRE(run({"rate", fx("generations_annotated.jsonl"), "--scores", scores, "-o", joined}).code == 0);
  r = run({"correlate", joined});
  CHECK(r.code == 0);
  CHECK(r.out.find("n,16\n") != std::string::npos);

  r = run({"rate", fx("corpus.jsonl")});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("id,hallucination_rate,human_score\n", 0) == 0);
  // Missing score for a record is a data error.
  CHECK(run({"rate", fx("corpus.jsonl"), "--scores", scores}).code == 1);
}

TEST_CASE("train-fdpo from a reward checkpoint and from scratch") {
  testing::TempDir dir("cli-fdpo");
  const auto policy = (dir / "policy.bin").string();
  auto r = run({"train-fdpo", fx("corpus.jsonl"), "--mode", "da", "--config", fx("fdpo.json"), "--out", policy});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"mode\":\"da\"") != std::string::npos);
  const auto again = (dir / "again.bin").string();
  r = run({"train-fdpo", fx("corpus.jsonl"), "--model", policy, "--config", fx("fdpo.json"), "--out", again,
           "--epochs", "1"});
  CHECK(r.code == 0);
  CHECK(Scorer::load(again).vocab() == Scorer::load(policy).vocab());
  testing::TempDir bad("cli-fdpo-bad");
  write(bad / "cfg.json", R"({"beta": -1})");
  CHECK(run({"train-fdpo", fx("corpus.jsonl"), "--config", (bad / "cfg.json").string(), "--out", policy}).code == 1);
}

TEST_CASE("missing files are reported, not thrown") {
  auto r = run({"score", fx("generations.jsonl"), "--model", "/nonexistent/model.bin"});
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);
  CHECK(run({"validate", "/nonexistent.jsonl"}).code == 1);
}
