#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "promptscope/embedding.hpp"
#include "promptscope/error.hpp"

namespace promptscope {

inline constexpr const char* kEndpointEnvVar = "PROMPTSCOPE_EMBED_ENDPOINT";

struct ProviderDescriptor {
  std::string endpoint;
  std::string model_id;
  std::size_t dim = 0;
  std::chrono::milliseconds timeout{10000};
};

inline constexpr std::array<std::string_view, 5> kImageMediaTypes = {
    "image/jpeg", "image/png", "image/webp", "image/bmp", "image/gif"};

inline bool is_supported_media_type(std::string_view media_type) {
  return std::find(kImageMediaTypes.begin(), kImageMediaTypes.end(), media_type) != kImageMediaTypes.end();
}

/// Source of text and image embeddings. Search and evaluation only ever see
/// the vectors, never the provider.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual const ProviderDescriptor& descriptor() const = 0;
  virtual std::vector<EmbeddingVector> embed_text(std::span<const std::string> texts) const = 0;
  virtual EmbeddingVector embed_image(std::string_view image_bytes, std::string_view media_type) const = 0;

  EmbeddingVector embed_text(const std::string& text) const {
    auto v = embed_text(std::span<const std::string>(&text, 1));
    return std::move(v.front());
  }
};

inline void check_text_batch(std::span<const std::string> texts) {
  if (texts.empty()) throw Error(ErrorCode::EmptyInput, "empty text batch");
  for (const auto& t : texts) {
    if (t.empty()) throw Error(ErrorCode::InvalidArgument, "empty text in batch");
  }
}

inline void check_image_request(std::string_view image_bytes, std::string_view media_type) {
  if (image_bytes.empty()) throw Error(ErrorCode::EmptyInput, "empty image payload");
  if (!is_supported_media_type(media_type)) {
    throw Error(ErrorCode::UnsupportedMediaType, "media type '" + std::string(media_type) + "' not accepted");
  }
}

/// Converts a JSON number array into a validated, nonzero embedding of `dim`.
inline EmbeddingVector vector_from_json(const nlohmann::json& arr, std::size_t dim) {
  if (!arr.is_array()) throw Error(ErrorCode::InvalidVector, "embedding is not an array");
  if (arr.size() != dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected dim " + std::to_string(dim) + ", got " + std::to_string(arr.size()));
  }
  std::vector<float> values;
  values.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw Error(ErrorCode::InvalidVector, "embedding component is not a number");
    values.push_back(static_cast<float>(v.get<double>()));
  }
  EmbeddingVector out(std::move(values));
  if (out.is_zero()) throw Error(ErrorCode::InvalidVector, "embedding has zero norm");
  return out;
}

/// Client for the JSON embedding service:
///   GET  /v1/info        -> {"model", "dim"}
///   POST /v1/embed/text  {"texts": [...]}                   -> {"model", "dim", "embeddings": [[...]...]}
///   POST /v1/embed/image {"media_type", "data_base64"}      -> {"model", "dim", "embedding": [...]}
/// Transport failures are retried twice with exponential backoff; HTTP error
/// statuses are not retried. Instances are immutable and safe to share.
class HttpEmbeddingClient final : public EmbeddingProvider {
 public:
  struct Options {
    std::chrono::milliseconds timeout{10000};
    std::chrono::milliseconds backoff{100};
    int max_retries = 2;
  };

  /// Queries /v1/info to learn the model id and dimension.
  explicit HttpEmbeddingClient(std::string endpoint) : HttpEmbeddingClient(std::move(endpoint), Options{}) {}

  HttpEmbeddingClient(std::string endpoint, Options options) : options_(options) {
    while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
    if (endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "empty provider endpoint");
    if (options.timeout.count() <= 0) throw Error(ErrorCode::InvalidArgument, "timeout must be positive");
    descriptor_.endpoint = std::move(endpoint);
    descriptor_.timeout = options.timeout;
    const auto info = request("GET", "/v1/info", "");
    const auto& model = field(info, "model");
    descriptor_.model_id = model.is_string() ? model.get<std::string>() : model.dump();
    const auto& d = field(info, "dim");
    const auto dim = d.is_number_integer() ? d.get<std::int64_t>() : std::int64_t{0};
    if (dim < 1) throw Error(ErrorCode::InvalidVector, "service reported invalid dim " + std::to_string(dim));
    descriptor_.dim = static_cast<std::size_t>(dim);
  }

  const ProviderDescriptor& descriptor() const override { return descriptor_; }

  std::vector<EmbeddingVector> embed_text(std::span<const std::string> texts) const override {
    check_text_batch(texts);
    nlohmann::json body = {{"texts", texts}};
    const auto resp = request("POST", "/v1/embed/text", body.dump());
    check_dim(resp);
    const auto& arr = field(resp, "embeddings");
    if (!arr.is_array() || arr.size() != texts.size()) {
      throw Error(ErrorCode::InvalidVector, "service returned " + std::to_string(arr.size()) + " embeddings for " +
                                                std::to_string(texts.size()) + " texts");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(arr.size());
    for (const auto& v : arr) out.push_back(vector_from_json(v, descriptor_.dim));
    return out;
  }

  using EmbeddingProvider::embed_text;

  EmbeddingVector embed_image(std::string_view image_bytes, std::string_view media_type) const override {
    check_image_request(image_bytes, media_type);
    nlohmann::json body = {{"media_type", media_type},
                           {"data_base64", httplib::detail::base64_encode(std::string(image_bytes))}};
    const auto resp = request("POST", "/v1/embed/image", body.dump());
    check_dim(resp);
    return vector_from_json(field(resp, "embedding"), descriptor_.dim);
  }

 private:
  static const nlohmann::json& field(const nlohmann::json& resp, const char* name) {
    if (!resp.is_object() || !resp.contains(name)) {
      throw Error(ErrorCode::InvalidVector, std::string("service response lacks '") + name + "'");
    }
    return resp[name];
  }

  void check_dim(const nlohmann::json& resp) const {
    const auto& d = field(resp, "dim");
    const auto dim = d.is_number_integer() ? d.get<std::int64_t>() : std::int64_t{-1};
    if (dim != static_cast<std::int64_t>(descriptor_.dim)) {
      throw Error(ErrorCode::DimensionMismatch, "service switched to dim " + std::to_string(dim));
    }
  }

  nlohmann::json request(const std::string& method, const std::string& path, const std::string& body) const {
    auto delay = options_.backoff;
    for (int attempt = 0;; ++attempt) {
      httplib::Client client(descriptor_.endpoint);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(descriptor_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(descriptor_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      auto res = method == "GET" ? client.Get(path) : client.Post(path, body, "application/json");
      if (!res) {
        if (attempt < options_.max_retries) {
          std::this_thread::sleep_for(delay);
          delay *= 2;
          continue;
        }
        throw Error(ErrorCode::Transport, method + " " + descriptor_.endpoint + path + ": " +
                                              httplib::to_string(res.error()));
      }
      if (res->status < 200 || res->status >= 300) throw ServiceError(res->status, res->body);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidVector, std::string("malformed service response: ") + e.what());
      }
    }
  }

  Options options_;
  ProviderDescriptor descriptor_;
};

/// Endpoint from PROMPTSCOPE_EMBED_ENDPOINT if set, else `fallback`.
inline std::string resolve_endpoint(std::string fallback) {
  if (const char* env = std::getenv(kEndpointEnvVar); env != nullptr && *env != '\0') return env;
  return fallback;
}

}  // namespace promptscope
