#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "promptscope/embedding.hpp"
#include "promptscope/error.hpp"
#include "promptscope/store.hpp"

namespace promptscope {

enum class ImportFormat { JsonLines, RawMatrix };

inline ImportFormat parse_import_format(std::string_view s) {
  if (s == "jsonl" || s == "JsonLines") return ImportFormat::JsonLines;
  if (s == "raw" || s == "RawMatrix") return ImportFormat::RawMatrix;
  throw Error(ErrorCode::InvalidArgument, "unknown import format '" + std::string(s) + "'");
}

struct ImportOptions {
  /// Abort on the first bad line instead of skipping it.
  bool strict = true;
  /// Required dim; when unset, the first valid record decides.
  std::optional<std::size_t> dim;
  /// Sidecar id file for RawMatrix; defaults to "<path>.ids".
  std::optional<std::filesystem::path> ids_path;
};

struct ImportIssue {
  std::size_t line;
  ErrorCode code;
  std::string message;
};

struct ImportResult {
  std::size_t dim = 0;
  std::vector<ImageRecord> records;
  std::vector<ImportIssue> skipped;  // lenient mode only
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ImportSink {
 public:
  ImportSink(const ImportOptions& options, ImportResult& result) : options_(options), result_(result) {
    if (options.dim) {
      if (*options.dim == 0) throw Error(ErrorCode::InvalidDimension, "dim must be >= 1");
      result_.dim = *options.dim;
    }
  }

  /// Runs `make` for one input line; errors either abort or get tallied.
  template <typename Make>
  void line(std::size_t line_no, Make&& make) {
    try {
      ImageRecord rec = make();
      if (result_.dim == 0) result_.dim = rec.embedding.dim();
      if (rec.embedding.dim() != result_.dim) {
        throw Error(ErrorCode::DimensionMismatch, "record '" + rec.id + "' has dim " +
                                                      std::to_string(rec.embedding.dim()) + ", expected " +
                                                      std::to_string(result_.dim));
      }
      if (rec.embedding.is_zero()) throw Error(ErrorCode::InvalidVector, "record '" + rec.id + "' has zero norm");
      if (rec.id.empty() || rec.id.size() > kMaxIdBytes) {
        throw Error(ErrorCode::InvalidRecord, "id length must be in [1, 4096] bytes");
      }
      if (!seen_.insert(rec.id).second) throw Error(ErrorCode::DuplicateId, "duplicate id '" + rec.id + "'");
      result_.records.push_back(std::move(rec));
    } catch (const Error& e) {
      if (options_.strict) throw Error(e.code(), e.what(), line_no);
      result_.skipped.push_back({line_no, e.code(), e.what()});
    }
  }

 private:
  const ImportOptions& options_;
  ImportResult& result_;
  std::unordered_set<std::string> seen_;
};

inline ImageRecord record_from_json_line(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "line is not a JSON object");
  if (!j.contains("id") || !j["id"].is_string()) throw Error(ErrorCode::ParseError, "missing string field 'id'");
  if (!j.contains("embedding") || !j["embedding"].is_array()) {
    throw Error(ErrorCode::ParseError, "missing array field 'embedding'");
  }
  std::string uri;
  if (j.contains("uri")) {
    if (!j["uri"].is_string()) throw Error(ErrorCode::ParseError, "field 'uri' must be a string");
    uri = j["uri"].get<std::string>();
  }
  std::vector<float> values;
  values.reserve(j["embedding"].size());
  for (const auto& v : j["embedding"]) {
    if (!v.is_number()) throw Error(ErrorCode::ParseError, "embedding component is not a number");
    values.push_back(static_cast<float>(v.get<double>()));
  }
  if (values.empty()) throw Error(ErrorCode::DimensionMismatch, "empty embedding");
  Tags tags;
  if (j.contains("tags")) {
    if (!j["tags"].is_object()) throw Error(ErrorCode::ParseError, "field 'tags' must be an object");
    for (const auto& [k, v] : j["tags"].items()) {
      if (!v.is_string()) throw Error(ErrorCode::ParseError, "tag '" + k + "' is not a string");
      tags.emplace(k, v.get<std::string>());
    }
  }
  return {j["id"].get<std::string>(), std::move(uri), EmbeddingVector(std::move(values)), std::move(tags)};
}

}  // namespace detail

/// One JSON object per line: {"id": str, "uri": str, "embedding": [num...], "tags": {str: str}}.
/// "uri" and "tags" are optional. Blank lines are ignored.
inline ImportResult import_json_lines(std::istream& in, const ImportOptions& options = {}) {
  ImportResult result;
  detail::ImportSink sink(options, result);
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    sink.line(line_no, [&] { return detail::record_from_json_line(text); });
  }
  return result;
}

/// Raw matrix: u32 little-endian dim, then rows of dim float32 little-endian
/// values. Ids come one per line from the sidecar file; row i gets id line i.
/// Issue line numbers refer to the (1-based) row.
inline ImportResult import_raw_matrix(const std::filesystem::path& path, const ImportOptions& options = {}) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 4) throw Error(ErrorCode::ParseError, "raw matrix lacks dim header");
  format::Reader in(bytes);
  const std::size_t dim = in.get<std::uint32_t>();
  if (dim == 0) throw Error(ErrorCode::InvalidDimension, "raw matrix declares dim 0");
  if (options.dim && *options.dim != dim) {
    throw Error(ErrorCode::DimensionMismatch,
                "raw matrix has dim " + std::to_string(dim) + ", expected " + std::to_string(*options.dim));
  }
  if (in.remaining() % (4 * dim) != 0) throw Error(ErrorCode::ParseError, "payload is not a whole number of rows");
  const std::size_t rows = in.remaining() / (4 * dim);

  const auto ids_path = options.ids_path.value_or(std::filesystem::path(path.string() + ".ids"));
  std::ifstream ids_in(ids_path);
  if (!ids_in) throw Error(ErrorCode::Io, "cannot open id sidecar " + ids_path.string());
  std::vector<std::string> ids;
  for (std::string id; std::getline(ids_in, id);) {
    if (!id.empty() && id.back() == '\r') id.pop_back();
    ids.push_back(std::move(id));
  }
  if (ids.size() != rows) {
    throw Error(ErrorCode::ParseError, "id sidecar has " + std::to_string(ids.size()) + " lines for " +
                                           std::to_string(rows) + " rows");
  }

  ImportOptions opts = options;
  opts.dim = dim;
  ImportResult result;
  detail::ImportSink sink(opts, result);
  result.records.reserve(rows);
  std::vector<float> values(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto& v : values) v = std::bit_cast<float>(in.get<std::uint32_t>());
    sink.line(r + 1, [&] { return ImageRecord{ids[r], "", EmbeddingVector(values), {}}; });
  }
  return result;
}

inline ImportResult import_embeddings(const std::filesystem::path& path, ImportFormat format,
                                      const ImportOptions& options = {}) {
  if (format == ImportFormat::RawMatrix) return import_raw_matrix(path, options);
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return import_json_lines(in, options);
}

/// Inverse of import_raw_matrix. Writes the matrix to `path` and ids to
/// `ids_path` (default "<path>.ids").
inline void export_raw_matrix(std::span<const ImageRecord> records, std::size_t dim, const std::filesystem::path& path,
                              std::optional<std::filesystem::path> ids_path = std::nullopt) {
  std::string bytes;
  format::put<std::uint32_t>(bytes, static_cast<std::uint32_t>(dim));
  std::string ids;
  for (const auto& r : records) {
    require_same_dim(dim, r.embedding.dim());
    for (float f : r.embedding.values()) format::put<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(f));
    ids += r.id;
    ids += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  std::ofstream out_ids(ids_path.value_or(std::filesystem::path(path.string() + ".ids")),
                        std::ios::binary | std::ios::trunc);
  if (!out || !out_ids) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out_ids.write(ids.data(), static_cast<std::streamsize>(ids.size()));
}

/// Inverse of import_json_lines; floats are written with round-trip precision.
inline void export_json_lines(std::ostream& out, std::span<const ImageRecord> records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["uri"] = r.uri;
    j["embedding"] = std::vector<float>(r.embedding.values().begin(), r.embedding.values().end());
    if (!r.tags.empty()) j["tags"] = r.tags;
    out << j.dump() << '\n';
  }
}

}  // namespace promptscope
