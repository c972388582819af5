#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <boost/crc.hpp>

#include "promptscope/embedding.hpp"
#include "promptscope/error.hpp"

namespace promptscope {

using Tags = std::map<std::string, std::string>;

struct ImageRecord {
  std::string id;
  std::string uri;
  EmbeddingVector embedding;
  Tags tags;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

inline constexpr std::size_t kMaxIdBytes = 4096;

/// Contiguous, column-packed batch of records. This is both the unit of
/// ingestion and the immutable segment a snapshot is made of.
class RecordBatch {
 public:
  explicit RecordBatch(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw Error(ErrorCode::InvalidDimension, "dim must be >= 1");
  }

  void reserve(std::size_t n) {
    ids_.reserve(n);
    uris_.reserve(n);
    tags_.reserve(n);
    norms_.reserve(n);
    values_.reserve(n * dim_);
  }

  /// Appends one record after validating id, dim and norm. Rejects ids already
  /// present in this batch.
  void add(std::string id, std::string uri, std::span<const float> embedding, Tags tags = {}) {
    if (id.empty() || id.size() > kMaxIdBytes) {
      throw Error(ErrorCode::InvalidRecord, "id length must be in [1, 4096] bytes");
    }
    if (embedding.size() != dim_) {
      throw Error(ErrorCode::DimensionMismatch,
                  "record '" + id + "' has dim " + std::to_string(embedding.size()) +
                      ", store dim is " + std::to_string(dim_));
    }
    if (uri.size() > UINT32_MAX || tags.size() > UINT16_MAX) {
      throw Error(ErrorCode::InvalidRecord, "record '" + id + "' uri or tag set too large");
    }
    for (const auto& [k, v] : tags) {
      if (k.size() > UINT16_MAX || v.size() > UINT16_MAX) {
        throw Error(ErrorCode::InvalidRecord, "record '" + id + "' tag too long");
      }
    }
    for (float v : embedding) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidVector, "record '" + id + "' has non-finite values");
    }
    const double norm = detail::l2_norm(embedding);
    if (norm == 0.0) throw Error(ErrorCode::ZeroVector, "record '" + id + "' has a zero embedding");
    if (!index_.emplace(id, ids_.size()).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate id '" + id + "'");
    }
    ids_.push_back(std::move(id));
    uris_.push_back(std::move(uri));
    tags_.push_back(std::move(tags));
    norms_.push_back(norm);
    values_.insert(values_.end(), embedding.begin(), embedding.end());
  }

  void add(ImageRecord record) {
    add(std::move(record.id), std::move(record.uri), record.embedding.values(), std::move(record.tags));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::string& uri(std::size_t i) const { return uris_[i]; }
  const Tags& tags(std::size_t i) const { return tags_[i]; }
  double norm(std::size_t i) const { return norms_[i]; }
  std::span<const float> embedding(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }
  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  ImageRecord record(std::size_t i) const {
    return {ids_[i], uris_[i], EmbeddingVector::from_span(embedding(i)), tags_[i]};
  }

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<std::string> uris_;
  std::vector<Tags> tags_;
  std::vector<double> norms_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Immutable point-in-time view over a store. Cheap to copy; segments are
/// shared with the store and never mutated after publication.
class StoreSnapshot {
 public:
  struct Segment {
    std::size_t offset;  // global insertion index of the segment's first record
    std::shared_ptr<const RecordBatch> batch;
  };

  explicit StoreSnapshot(std::size_t dim) : dim_(dim) {}
  StoreSnapshot(std::size_t dim, std::vector<Segment> segments) : dim_(dim), segments_(std::move(segments)) {
    for (const auto& s : segments_) count_ += s.batch->size();
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::span<const Segment> segments() const noexcept { return segments_; }

  const std::string& id(std::size_t i) const { auto [b, j] = locate(i); return b->id(j); }
  const std::string& uri(std::size_t i) const { auto [b, j] = locate(i); return b->uri(j); }
  const Tags& tags(std::size_t i) const { auto [b, j] = locate(i); return b->tags(j); }
  double norm(std::size_t i) const { auto [b, j] = locate(i); return b->norm(j); }
  std::span<const float> embedding(std::size_t i) const { auto [b, j] = locate(i); return b->embedding(j); }
  ImageRecord record(std::size_t i) const { auto [b, j] = locate(i); return b->record(j); }

  /// Insertion index of `id`, if present.
  std::optional<std::size_t> find(std::string_view id) const {
    for (const auto& s : segments_) {
      if (auto j = s.batch->find(id)) return s.offset + *j;
    }
    return std::nullopt;
  }

  std::vector<ImageRecord> records() const {
    std::vector<ImageRecord> out;
    out.reserve(count_);
    for (std::size_t i = 0; i < count_; ++i) out.push_back(record(i));
    return out;
  }

  friend bool operator==(const StoreSnapshot& a, const StoreSnapshot& b) {
    if (a.dim_ != b.dim_ || a.count_ != b.count_) return false;
    for (std::size_t i = 0; i < a.count_; ++i) {
      if (a.record(i) != b.record(i)) return false;
    }
    return true;
  }

 private:
  std::pair<const RecordBatch*, std::size_t> locate(std::size_t i) const {
    if (i >= count_) throw Error(ErrorCode::NotFound, "record index " + std::to_string(i) + " out of range");
    auto it = std::upper_bound(segments_.begin(), segments_.end(), i,
                               [](std::size_t v, const Segment& s) { return v < s.offset; });
    --it;
    return {it->batch.get(), i - it->offset};
  }

  std::size_t dim_;
  std::vector<Segment> segments_;
  std::size_t count_ = 0;
};

inline ImageRecord get_record(const StoreSnapshot& snapshot, std::string_view id) {
  auto i = snapshot.find(id);
  if (!i) throw Error(ErrorCode::NotFound, "no record with id '" + std::string(id) + "'");
  return snapshot.record(*i);
}

namespace format {

inline constexpr char kMagic[4] = {'P', 'S', 'V', 'S'};
inline constexpr std::uint16_t kVersion = 1;
// magic(4) version(2) dim(4) count(8) crc(4)
inline constexpr std::size_t kHeaderSize = 22;
inline constexpr std::size_t kCrcOffset = 18;

using Crc32c = boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true>;

/// CRC32C over every byte after the magic except the checksum field itself.
inline std::uint32_t checksum(std::string_view file) {
  Crc32c crc;
  crc.process_bytes(file.data() + 4, kCrcOffset - 4);
  crc.process_bytes(file.data() + kHeaderSize, file.size() - kHeaderSize);
  return crc.checksum();
}

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view data, std::size_t pos = 0) : data_(data), pos_(pos) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(ErrorCode::TruncatedFile, "unexpected end of store file");
  }

  std::string_view data_;
  std::size_t pos_;
};

}  // namespace format

/// Serializes a snapshot into the native store format (little-endian).
inline std::string serialize(const StoreSnapshot& snapshot) {
  std::string out;
  out.append(format::kMagic, 4);
  format::put<std::uint16_t>(out, format::kVersion);
  format::put<std::uint32_t>(out, static_cast<std::uint32_t>(snapshot.dim()));
  format::put<std::uint64_t>(out, snapshot.size());
  format::put<std::uint32_t>(out, 0);  // checksum placeholder
  for (const auto& seg : snapshot.segments()) {
    const RecordBatch& b = *seg.batch;
    for (std::size_t j = 0; j < b.size(); ++j) {
      format::put<std::uint16_t>(out, static_cast<std::uint16_t>(b.id(j).size()));
      out += b.id(j);
      format::put<std::uint32_t>(out, static_cast<std::uint32_t>(b.uri(j).size()));
      out += b.uri(j);
      format::put<std::uint16_t>(out, static_cast<std::uint16_t>(b.tags(j).size()));
      for (const auto& [k, v] : b.tags(j)) {
        format::put<std::uint16_t>(out, static_cast<std::uint16_t>(k.size()));
        out += k;
        format::put<std::uint16_t>(out, static_cast<std::uint16_t>(v.size()));
        out += v;
      }
      for (float f : b.embedding(j)) format::put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  const std::uint32_t crc = format::checksum(out);
  for (std::size_t i = 0; i < 4; ++i) out[format::kCrcOffset + i] = static_cast<char>((crc >> (8 * i)) & 0xFF);
  return out;
}

struct ParsedStore {
  std::size_t dim;
  std::uint32_t checksum;
  RecordBatch records;
};

/// Validates and decodes a store file image. Structural errors surface as
/// TruncatedFile/InvalidRecord; any other corruption as ChecksumMismatch.
inline ParsedStore deserialize(std::string_view file) {
  if (file.size() < 4 || std::memcmp(file.data(), format::kMagic, 4) != 0) {
    if (file.size() < 4) throw Error(ErrorCode::TruncatedFile, "file shorter than magic");
    throw Error(ErrorCode::BadMagic, "not a store file");
  }
  if (file.size() < format::kHeaderSize) throw Error(ErrorCode::TruncatedFile, "incomplete header");
  format::Reader header(file, 4);
  const auto version = header.get<std::uint16_t>();
  if (version != format::kVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "store format version " + std::to_string(version));
  }
  const auto dim = header.get<std::uint32_t>();
  const auto count = header.get<std::uint64_t>();
  const auto stored_crc = header.get<std::uint32_t>();
  if (dim == 0) throw Error(ErrorCode::InvalidRecord, "store header declares dim 0");

  // Walk the record structure before checking the CRC so truncation is reported
  // as such. Float payloads are only decoded after the checksum passes.
  struct Span { std::string_view id, uri; std::vector<std::pair<std::string_view, std::string_view>> tags; std::string_view payload; };
  std::vector<Span> spans;
  spans.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, file.size() / (4ull * dim) + 1)));
  format::Reader in(file, format::kHeaderSize);
  for (std::uint64_t r = 0; r < count; ++r) {
    Span s;
    s.id = in.bytes(in.get<std::uint16_t>());
    s.uri = in.bytes(in.get<std::uint32_t>());
    const auto ntags = in.get<std::uint16_t>();
    for (std::uint16_t t = 0; t < ntags; ++t) {
      auto k = in.bytes(in.get<std::uint16_t>());
      auto v = in.bytes(in.get<std::uint16_t>());
      s.tags.emplace_back(k, v);
    }
    s.payload = in.bytes(std::size_t{4} * dim);
    spans.push_back(std::move(s));
  }
  if (in.remaining() != 0) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after last record");

  const std::uint32_t crc = format::checksum(file);
  if (crc != stored_crc) throw Error(ErrorCode::ChecksumMismatch, "store checksum does not match contents");

  RecordBatch batch(dim);
  batch.reserve(spans.size());
  std::vector<float> values(dim);
  for (auto& s : spans) {
    format::Reader p(s.payload);
    for (auto& v : values) v = std::bit_cast<float>(p.get<std::uint32_t>());
    Tags tags;
    for (auto [k, v] : s.tags) {
      if (!tags.emplace(std::string(k), std::string(v)).second) {
        throw Error(ErrorCode::InvalidRecord, "duplicate tag key in record '" + std::string(s.id) + "'");
      }
    }
    try {
      batch.add(std::string(s.id), std::string(s.uri), values, std::move(tags));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidRecord, e.what());
    }
  }
  return {dim, crc, std::move(batch)};
}

/// Append-only store of image records. Single writer; snapshots are immutable
/// and may be shared freely across reader threads.
class Store {
 public:
  explicit Store(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw Error(ErrorCode::InvalidDimension, "dim must be >= 1");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return count_; }

  /// CRC32C recorded by the last save() or open(), if any.
  std::optional<std::uint32_t> checksum() const noexcept { return checksum_; }

  /// All-or-nothing append; on any error the store is unchanged.
  std::size_t ingest(RecordBatch batch) {
    require_same_dim(dim_, batch.dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (ids_.contains(batch.id(i))) {
        throw Error(ErrorCode::DuplicateId, "id '" + batch.id(i) + "' already in store");
      }
    }
    const std::size_t n = batch.size();
    if (n == 0) return 0;
    for (std::size_t i = 0; i < n; ++i) ids_.insert(batch.id(i));
    segments_.push_back({count_, std::make_shared<const RecordBatch>(std::move(batch))});
    count_ += n;
    checksum_.reset();
    return n;
  }

  std::size_t ingest(std::vector<ImageRecord> records) {
    RecordBatch batch(dim_);
    batch.reserve(records.size());
    for (auto& r : records) batch.add(std::move(r));
    return ingest(std::move(batch));
  }

  StoreSnapshot snapshot() const { return StoreSnapshot(dim_, segments_); }

  /// Writes to a sibling temp file then renames over `path`.
  void save(const std::filesystem::path& path) {
    const std::string bytes = serialize(snapshot());
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "rename to " + path.string() + ": " + ec.message());
    checksum_ = format::checksum(bytes);
  }

  static Store open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorCode::Io, "read error on " + path.string());
    auto parsed = deserialize(bytes);
    Store store(parsed.dim);
    store.ingest(std::move(parsed.records));
    store.checksum_ = parsed.checksum;
    return store;
  }

 private:
  std::size_t dim_;
  std::vector<StoreSnapshot::Segment> segments_;
  std::size_t count_ = 0;
  std::unordered_set<std::string> ids_;
  std::optional<std::uint32_t> checksum_;
};

inline Store create_store(std::size_t dim) { return Store(dim); }

}  // namespace promptscope
