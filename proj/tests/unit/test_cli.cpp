#include <gtest/gtest.h>

#include <cstdlib>

#include "json.hpp"
#include "promptscope/import.hpp"
#include "promptscope/store.hpp"
#include "support/stub_provider.hpp"
#include "support/test_util.hpp"

using namespace promptscope;
using namespace promptscope::testing;
using Json = nlohmann::ordered_json;

namespace {

/// Runs the CLI against a stub embedding service reachable through the
/// endpoint environment variable.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    service_ = new StubEmbeddingService(StubEmbeddingProvider::from_fixture_file(fixture("micro_prompts.json")));
    ::setenv(kEndpointEnvVar, service_->endpoint().c_str(), 1);
  }

  static void TearDownTestSuite() {
    ::unsetenv(kEndpointEnvVar);
    delete service_;
    service_ = nullptr;
  }

  void SetUp() override {
    store_ = (dir_ / "micro.psv").string();
    const auto r = cli("ingest --store " + shell_quote(store_) + " --input " +
                       shell_quote(fixture("micro_store.jsonl").string()) + " --strict");
    ASSERT_EQ(r.exit_code, 0) << r.out;
  }

  static CommandResult cli(const std::string& args) {
    return run(std::string(PROMPTSCOPE_CLI) + " " + args + " 2>/dev/null");
  }

  static StubEmbeddingService* service_;
  TempDir dir_;
  std::string store_;
};

StubEmbeddingService* CliTest::service_ = nullptr;

}  // namespace

TEST_F(CliTest, InfoOnFixtureStore) {
  const auto r = cli("info --store " + shell_quote(store_) + " --json");
  ASSERT_EQ(r.exit_code, 0);
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["dim"], 512);
  EXPECT_EQ(j["count"], 25);
  EXPECT_EQ(j["version"], 1);
  EXPECT_TRUE(j["checksum"].is_string());
  const auto text = cli("info --store " + shell_quote(store_));
  EXPECT_NE(text.out.find("dim      512"), std::string::npos);
  EXPECT_NE(text.out.find("count    25"), std::string::npos);
}

TEST_F(CliTest, EvaluateAllCorrectIsOne) {
  const auto truth = fixture("micro_truth.tsv").string();
  const auto report = (dir_ / "report.json").string();
  const auto r = cli("evaluate --predictions " + shell_quote(truth) + " --truth " + shell_quote(truth) +
                     " --report " + shell_quote(report));
  ASSERT_EQ(r.exit_code, 0);
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["macro_f1"].get<double>(), 1.0);
  EXPECT_EQ(j["evaluated"], 25);
  EXPECT_EQ(read_file(report), r.out);
}

TEST_F(CliTest, ClassifyThenEvaluateMatchesFrozenFixture) {
  const auto preds = (dir_ / "pred.tsv").string();
  auto r = cli("classify --store " + shell_quote(store_) + " --classes " +
               shell_quote(fixture("micro_classes.tsv").string()) + " --out " + shell_quote(preds));
  ASSERT_EQ(r.exit_code, 0);
  r = cli("evaluate --predictions " + shell_quote(preds) + " --truth " +
          shell_quote(fixture("micro_truth.tsv").string()) + " --labels clear,fog,night,rain,snow");
  ASSERT_EQ(r.exit_code, 0);
  const auto j = Json::parse(r.out);
  EXPECT_NEAR(j["macro_f1"].get<double>(), 656.0 / 825.0, 1e-12);
  EXPECT_EQ(j["confusion"]["raw"][2][0], 1);  // a clear image predicted night
}

TEST_F(CliTest, SearchJsonAndTable) {
  auto r = cli("search --store " + shell_quote(store_) + " --positive fog --k 5 --json");
  ASSERT_EQ(r.exit_code, 0);
  const auto j = Json::parse(r.out);
  ASSERT_EQ(j["results"].size(), 5u);
  EXPECT_EQ(j["results"][0]["id"].get<std::string>().substr(0, 3), "fog");
  r = cli("search --store " + shell_quote(store_) + " --image-id night-1 --k 2");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("night-1"), std::string::npos);
  EXPECT_NE(r.out.find("    1  1 "), std::string::npos) << r.out;
}

TEST_F(CliTest, ExpandTable) {
  const auto r = cli("expand --lexicon " + shell_quote(fixture("lexicon_sample.tsv").string()) + " --term carriage");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("hypernym: horse-drawn_vehicle"), std::string::npos);
  EXPECT_NE(r.out.find("antonym: -"), std::string::npos);
  EXPECT_NE(r.out.find("holonym: -"), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli("").exit_code, 1);
  EXPECT_EQ(cli("search --store " + shell_quote(store_) + " --positive fog --k 0").exit_code, 1);
  EXPECT_EQ(cli("info --store " + shell_quote((dir_ / "missing.psv").string())).exit_code, 2);
  auto bytes = read_file(store_);
  bytes[bytes.size() / 2] ^= 0x10;
  write_file(dir_ / "bad.psv", bytes);
  EXPECT_EQ(cli("info --store " + shell_quote((dir_ / "bad.psv").string())).exit_code, 4);
  EXPECT_EQ(cli("--endpoint http://127.0.0.1:1 search --store " + shell_quote(store_) + " --positive fog").exit_code, 3);
  EXPECT_EQ(cli("search --store " + shell_quote(store_) + " --image-id nope").exit_code, 1);
}

TEST_F(CliTest, IngestAppendsAndLenientSkips) {
  const auto extra = dir_ / "extra.jsonl";
  std::string line = R"({"id": "new-0", "embedding": [)";
  for (int i = 0; i < 512; ++i) line += (i ? ", " : "") + std::string(i == 7 ? "1" : "0");
  write_file(extra, line + "]}\n" + R"({"id": "short", "embedding": [1, 2]})" + "\n" + line + "]}\n");
  auto r = cli("ingest --store " + shell_quote(store_) + " --input " + shell_quote(extra.string()));
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("ingested 1 records (skipped 2)"), std::string::npos) << r.out;
  EXPECT_EQ(Store::open(store_).size(), 26u);
  r = cli("ingest --store " + shell_quote(store_) + " --input " + shell_quote(extra.string()) + " --strict");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_EQ(Store::open(store_).size(), 26u);
}

TEST_F(CliTest, ConfigFileSuppliesStore) {
  const auto cfg = dir_ / "ps.conf";
  write_file(cfg, "store = " + store_ + "\ndefault_k = 3\n");
  const auto r = cli("--config " + shell_quote(cfg.string()) + " search --positive rain --json");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(Json::parse(r.out)["results"].size(), 3u);
}
