#include <gtest/gtest.h>

#include <thread>

#include "promptscope/import.hpp"
#include "promptscope/service.hpp"
#include "support/stub_provider.hpp"
#include "support/test_util.hpp"

using namespace promptscope;
using namespace promptscope::testing;
using api::Json;

namespace {

Store micro_store() {
  std::ifstream in(fixture("micro_store.jsonl"));
  auto imported = import_json_lines(in);
  Store s(imported.dim);
  s.ingest(std::move(imported.records));
  return s;
}

/// Service mounted on a loopback server for the lifetime of the fixture.
class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override { start(micro_store(), std::nullopt); }

  void start(Store store, std::optional<std::filesystem::path> path) {
    stop();
    auto stub = std::make_shared<StubEmbeddingProvider>(
        StubEmbeddingProvider::from_fixture_file(fixture("micro_prompts.json")));
    provider_ = stub;
    auto lexicon = std::make_shared<const Lexicon>(load_lexicon(fixture("lexicon_sample.tsv")));
    service_ = std::make_unique<Service>(std::move(store), ServiceSettings{std::move(path), 20, {2}},
                                         std::make_shared<const api::ProviderHandle>(stub), lexicon);
    server_ = std::make_unique<httplib::Server>();
    service_->mount(*server_);
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  void stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  void TearDown() override { stop(); }

  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

  std::pair<int, Json> post(const std::string& path, const Json& body) const {
    auto res = client().Post(path, body.dump(), "application/json");
    if (!res) return {-1, Json()};
    return {res->status, Json::parse(res->body)};
  }

  std::pair<int, Json> get(const std::string& path) const {
    auto res = client().Get(path);
    if (!res) return {-1, Json()};
    return {res->status, Json::parse(res->body)};
  }

  std::shared_ptr<const StubEmbeddingProvider> provider_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, HealthAndInfo) {
  auto [status, body] = get("/health");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["version"], 1);
  std::tie(status, body) = get("/v1/store/info");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["dim"], 512);
  EXPECT_EQ(body["count"], 25);
  EXPECT_EQ(body["version"], 1);
}

TEST_F(ServiceTest, RecordLookup) {
  auto [status, body] = get("/v1/records/fog-2");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["record"]["uri"], "file:///acdc/fog/2.png");
  EXPECT_EQ(body["record"]["embedding"].size(), 512u);
  std::tie(status, body) = get("/v1/records/nope");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(body["error"]["code"], "NotFound");
}

TEST_F(ServiceTest, SearchMatchesEngine) {
  auto [status, body] = post("/v1/search", {{"positive_texts", {"fog"}}, {"k", 7}});
  ASSERT_EQ(status, 200);
  ASSERT_EQ(body["results"].size(), 7u);
  const auto ctx = service_->context();
  const auto want = top_k(ctx.snapshot, {{provider_->embed_text(std::string("fog"))}, {}, 7, Aggregation::MeanEmbedding});
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(body["results"][i]["id"], want[i].id);
    EXPECT_EQ(body["results"][i]["rank"], i + 1);
    EXPECT_EQ(body["results"][i]["score"].get<double>(), want[i].score.value);
    EXPECT_EQ(body["results"][i]["uri"], ctx.snapshot.uri(want[i].index));
  }
  EXPECT_EQ(body["plan"]["positive_texts"], Json::array({"fog"}));
}

TEST_F(ServiceTest, SearchRejectsBadRequests) {
  EXPECT_EQ(post("/v1/search", {{"positive_texts", {"fog"}}, {"k", 0}}).first, 400);
  EXPECT_EQ(post("/v1/search", {{"positive_texts", {"fog"}}, {"k", 10001}}).first, 400);
  EXPECT_EQ(post("/v1/search", Json::object()).first, 400);
  EXPECT_EQ(post("/v1/search", {{"positive_texts", "fog"}}).first, 400);
  EXPECT_EQ(post("/v1/search", {{"positive_texts", {"fog"}}, {"aggregation", "median"}}).first, 400);
  EXPECT_EQ(post("/v1/search", {{"positive_image_refs", {"missing"}}}).first, 404);
  auto res = client().Post("/v1/search", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceTest, ImageRefSelfMatch) {
  auto [status, body] = post("/v1/search", {{"positive_image_refs", {"rain-3"}}, {"k", 3}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body["results"][0]["id"], "rain-3");
  EXPECT_NEAR(body["results"][0]["score"].get<double>(), 1.0, 1e-12);
}

TEST_F(ServiceTest, NegativesAndDebugBreakdown) {
  auto [status, body] =
      post("/v1/search", {{"positive_texts", {"snow"}}, {"negative_texts", {"rain"}}, {"k", 25}, {"debug", true}});
  ASSERT_EQ(status, 200);
  for (const auto& r : body["results"]) {
    EXPECT_EQ(r["score_positive"].get<double>() - r["score_negative"].get<double>(), r["score"].get<double>());
  }
}

TEST_F(ServiceTest, LexiconExpansionShowsPlan) {
  auto [status, body] = post("/v1/search", {{"positive_texts", {"night"}}, {"expand_with_lexicon", {"synonym", "antonym"}}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body["plan"]["positive_texts"], Json::array({"night", "dark", "nighttime"}));
  EXPECT_EQ(body["plan"]["negative_texts"], Json::array({"day"}));
}

TEST_F(ServiceTest, Expand) {
  auto [status, body] = post("/v1/expand", {{"term", "carriage"}, {"types", {"synonym", "hypernym"}}});
  ASSERT_EQ(status, 200);
  ASSERT_EQ(body["senses"].size(), 1u);
  const auto& s = body["senses"][0];
  EXPECT_EQ(s["synonyms"], Json::array({"carriage", "equipage", "rig"}));
  EXPECT_EQ(s["hypernyms"], Json::array({"horse-drawn_vehicle"}));
  EXPECT_EQ(s["plan"]["positive_prompts"], Json::array({"carriage", "equipage", "rig", "horse-drawn vehicle"}));
  EXPECT_EQ(s["plan"]["negative_prompts"], Json::array());
  std::tie(status, body) = post("/v1/expand", {{"term", "zzzz-unknown"}});
  EXPECT_EQ(status, 200);
  EXPECT_TRUE(body["senses"].empty());
}

TEST_F(ServiceTest, ClassifyAndEvaluate) {
  Json classes = Json::array();
  for (const char* c : {"clear", "fog", "night", "rain", "snow"}) classes.push_back({{"label", c}, {"prompt", c}});
  auto [status, body] = post("/v1/classify", {{"classes", classes}});
  ASSERT_EQ(status, 200);
  ASSERT_EQ(body["predictions"].size(), 25u);
  Json truth = Json::array();
  for (const auto& p : body["predictions"]) {
    const auto id = p["id"].get<std::string>();
    truth.push_back({{"id", id}, {"label", id.substr(0, id.find('-'))}});
  }
  std::tie(status, body) =
      post("/v1/evaluate", {{"predictions", body["predictions"]}, {"ground_truth", truth}, {"labels", body["labels"]}});
  ASSERT_EQ(status, 200);
  EXPECT_NEAR(body["macro_f1"].get<double>(), 656.0 / 825.0, 1e-12);
  EXPECT_EQ(body["evaluated"], 25);
  EXPECT_EQ(body["confusion"]["rows"], "predicted");
}

TEST_F(ServiceTest, ClassifyNeedsTwoClasses) {
  EXPECT_EQ(post("/v1/classify", {{"classes", {{{"label", "a"}, {"prompt", "fog"}}}}}).first, 400);
}

TEST_F(ServiceTest, SearchByImageUpload) {
  httplib::MultipartFormDataItems items = {{"image", "\x89PNG fake bytes", "tile.png", "image/png"},
                                           {"k", "4", "", ""}};
  auto res = client().Post("/v1/search/by-image", items);
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const auto body = Json::parse(res->body);
  EXPECT_EQ(body["results"].size(), 4u);
  EXPECT_EQ(body["plan"]["positive_image_refs"], Json::array({"upload:tile.png"}));
  httplib::MultipartFormDataItems bad = {{"image", "bytes", "doc.pdf", "application/pdf"}};
  res = client().Post("/v1/search/by-image", bad);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceTest, ProviderFailureIs502) {
  stop();
  Store store = micro_store();
  service_ = std::make_unique<Service>(
      std::move(store), ServiceSettings{}, std::make_shared<const api::ProviderHandle>([]() -> std::shared_ptr<const EmbeddingProvider> {
        throw Error(ErrorCode::Transport, "unreachable");
      }),
      nullptr);
  server_ = std::make_unique<httplib::Server>();
  service_->mount(*server_);
  port_ = server_->bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  auto [status, body] = post("/v1/search", {{"positive_texts", {"fog"}}});
  EXPECT_EQ(status, 502);
  EXPECT_EQ(body["error"]["code"], "Transport");
  // Image-ref searches need no provider.
  EXPECT_EQ(post("/v1/search", {{"positive_image_refs", {"fog-1"}}}).first, 200);
}

TEST_F(ServiceTest, IngestPersistsAndIsVisibleToLaterQueries) {
  TempDir dir;
  Store store(3);
  store.ingest({{"a", "", {1, 0, 0}, {}}});
  start(std::move(store), dir / "s.psv");
  auto [status, body] = post("/v1/ingest", {{"records", {{{"id", "b"}, {"embedding", {0, 1, 0}}}}}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body["count"], 2);
  EXPECT_EQ(Store::open(dir / "s.psv").size(), 2u);
  EXPECT_EQ(post("/v1/ingest", {{"records", {{{"id", "b"}, {"embedding", {0, 1, 0}}}}}}).first, 409);
  EXPECT_EQ(post("/v1/ingest", {{"records", {{{"id", "c"}, {"embedding", {0, 1}}}}}}).first, 400);
  EXPECT_EQ(get("/v1/store/info").second["count"], 2);
}

TEST_F(ServiceTest, ConcurrentReadsDuringIngest) {
  std::atomic<int> failures{0};
  std::vector<std::jthread> readers;
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      for (int i = 0; i < 10; ++i) {
        if (post("/v1/search", {{"positive_image_refs", {"snow-0"}}, {"k", 5}}).first != 200) ++failures;
      }
    });
  }
  for (int i = 0; i < 10; ++i) {
    std::vector<float> v(512, 0.0f);
    v[10 + i] = 1.0f;
    EXPECT_EQ(post("/v1/ingest", {{"records", {{{"id", "extra-" + std::to_string(i)}, {"embedding", v}}}}}).first, 200);
  }
  readers.clear();
  EXPECT_EQ(failures, 0);
  EXPECT_EQ(get("/v1/store/info").second["count"], 35);
}

TEST(Config, ParsesKeyValueFile) {
  std::istringstream in(
      "# comment\n[promptscope]\nstore = \"data/s.psv\"\nprovider_endpoint=http://h:1\ndefault_k = 7\nlexicon = l.tsv\n");
  const auto cfg = api::parse_config(in);
  EXPECT_EQ(cfg.store, "data/s.psv");
  EXPECT_EQ(cfg.provider_endpoint, "http://h:1");
  EXPECT_EQ(cfg.default_k, 7u);
  EXPECT_EQ(cfg.lexicon, "l.tsv");
  std::istringstream bad("colour = blue\n");
  EXPECT_THROW(api::parse_config(bad), Error);
  std::istringstream badk("default_k = 0\n");
  EXPECT_THROW(api::parse_config(badk), Error);
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(Error(ErrorCode::NotFound, "")), 404);
  EXPECT_EQ(http_status(Error(ErrorCode::DuplicateId, "")), 409);
  EXPECT_EQ(http_status(Error(ErrorCode::InvalidArgument, "")), 400);
  EXPECT_EQ(http_status(api::ProviderFailure(ErrorCode::DimensionMismatch, "")), 502);
  EXPECT_EQ(http_status(Error(ErrorCode::ChecksumMismatch, "")), 500);
}
