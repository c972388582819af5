#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "promptscope/api.hpp"
#include "promptscope/lexicon.hpp"
#include "promptscope/store.hpp"

namespace promptscope {

/// HTTP status for a failed request.
inline int http_status(const Error& e) {
  if (dynamic_cast<const api::ProviderFailure*>(&e) != nullptr) return 502;
  switch (e.code()) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::DuplicateId: return 409;
    case ErrorCode::Io:
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::ChecksumMismatch:
    case ErrorCode::TruncatedFile: return 500;
    default: return 400;
  }
}

inline api::Json error_json(std::string_view code, const std::string& message) {
  api::Json j;
  j["version"] = api::kResponseVersion;
  j["error"] = {{"code", code}, {"message", message}};
  return j;
}

struct ServiceSettings {
  std::optional<std::filesystem::path> store_path;
  std::size_t default_k = 20;
  ParallelOptions parallel;
};

/// Owns one store and serves queries against per-request snapshots. Reads
/// share the lock; ingest takes it exclusively.
class Service {
 public:
  Service(Store store, ServiceSettings settings, std::shared_ptr<const api::ProviderHandle> provider,
          std::shared_ptr<const Lexicon> lexicon)
      : store_(std::move(store)), settings_(std::move(settings)), provider_(std::move(provider)),
        lexicon_(std::move(lexicon)) {}

  api::Context context() const {
    std::shared_lock lock(mutex_);
    api::Context ctx{store_.snapshot(),
                     settings_.store_path ? std::optional(settings_.store_path->string()) : std::nullopt,
                     store_.checksum(),
                     provider_.get(),
                     lexicon_.get(),
                     settings_.default_k,
                     settings_.parallel};
    return ctx;
  }

  /// Appends records and, when the service has a store path, persists them.
  api::Json ingest(const api::Json& body) {
    std::unique_lock lock(mutex_);
    auto batch = api::parse_ingest(body, store_.dim());
    const auto accepted = store_.ingest(std::move(batch));
    if (settings_.store_path && accepted > 0) store_.save(*settings_.store_path);
    api::Json j;
    j["version"] = api::kResponseVersion;
    j["accepted"] = accepted;
    j["count"] = store_.size();
    return j;
  }

  /// Registers all routes on `server`.
  void mount(httplib::Server& server) {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, api::Json{{"version", api::kResponseVersion}, {"status", "ok"}});
    });
    server.Get("/v1/store/info", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] { return api::info(context()); });
    });
    server.Get(R"(/v1/records/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return api::record(context(), req.matches[1].str()); });
    });
    server.Post("/v1/search", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return api::search(context(), parse_body(req)); });
    });
    server.Post("/v1/search/by-image", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return search_by_image(req); });
    });
    server.Post("/v1/classify", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return api::classify(context(), parse_body(req)); });
    });
    server.Post("/v1/evaluate", [](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return api::evaluate(parse_body(req)); });
    });
    server.Post("/v1/expand", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return api::expand(context(), parse_body(req)); });
    });
    server.Post("/v1/ingest", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return ingest(parse_body(req)); });
    });
  }

 private:
  static void reply(httplib::Response& res, int status, const api::Json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
  }

  template <typename Fn>
  static void handle(httplib::Response& res, Fn&& fn) {
    try {
      reply(res, 200, fn());
    } catch (const Error& e) {
      reply(res, http_status(e), error_json(to_string(e.code()), e.what()));
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, error_json("InvalidArgument", e.what()));
    }
  }

  static api::Json parse_body(const httplib::Request& req) {
    try {
      return api::Json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("malformed JSON body: ") + e.what());
    }
  }

  // multipart/form-data: file part "image"; optional fields "k", "aggregation",
  // and repeated "negative_texts".
  api::Json search_by_image(const httplib::Request& req) const {
    if (!req.has_file("image")) throw Error(ErrorCode::InvalidArgument, "multipart field 'image' is required");
    const auto file = req.get_file_value("image");
    api::Json body = api::Json::object();
    if (req.has_file("k")) {
      try {
        body["k"] = std::stoll(req.get_file_value("k").content);
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "'k' must be an integer");
      }
    }
    if (req.has_file("aggregation")) body["aggregation"] = req.get_file_value("aggregation").content;
    if (req.has_file("negative_texts")) {
      api::Json neg = api::Json::array();
      for (const auto& f : req.get_file_values("negative_texts")) neg.push_back(f.content);
      body["negative_texts"] = neg;
    }
    const std::vector<api::ImageUpload> uploads = {
        {file.filename.empty() ? "image" : file.filename, file.content, file.content_type}};
    return api::search(context(), body, uploads);
  }

  mutable std::shared_mutex mutex_;
  Store store_;
  ServiceSettings settings_;
  std::shared_ptr<const api::ProviderHandle> provider_;
  std::shared_ptr<const Lexicon> lexicon_;
};

}  // namespace promptscope
