#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "promptscope/embedding.hpp"
#include "promptscope/eval.hpp"
#include "promptscope/lexicon.hpp"
#include "promptscope/provider.hpp"
#include "promptscope/search.hpp"
#include "promptscope/store.hpp"

// Request/response handling shared by the CLI and the HTTP service. Every
// response is an ordered JSON object carrying "version".
namespace promptscope::api {

using Json = nlohmann::ordered_json;

inline constexpr int kResponseVersion = 1;
inline constexpr std::size_t kMaxK = 10000;

/// Wraps any failure raised while talking to the embedding provider so callers
/// can map it to 502 / exit code 3 regardless of the underlying code.
class ProviderFailure : public Error {
 public:
  explicit ProviderFailure(const Error& cause) : Error(cause.code(), cause.what()) {}
  ProviderFailure(ErrorCode code, const std::string& message) : Error(code, message) {}
};

/// Lazily constructed provider; construction is retried on the next call if
/// it fails. Safe to share across threads.
class ProviderHandle {
 public:
  using Factory = std::function<std::shared_ptr<const EmbeddingProvider>()>;

  ProviderHandle() = default;
  explicit ProviderHandle(Factory factory) : factory_(std::move(factory)) {}
  explicit ProviderHandle(std::shared_ptr<const EmbeddingProvider> provider) : provider_(std::move(provider)) {}

  const EmbeddingProvider& get() const {
    std::lock_guard lock(mutex_);
    if (!provider_) {
      if (!factory_) throw ProviderFailure(ErrorCode::Transport, "no embedding provider configured");
      try {
        provider_ = factory_();
      } catch (const Error& e) {
        throw ProviderFailure(e);
      }
    }
    return *provider_;
  }

  /// Descriptor if the provider has already been constructed.
  std::optional<ProviderDescriptor> peek() const {
    std::lock_guard lock(mutex_);
    if (!provider_) return std::nullopt;
    return provider_->descriptor();
  }

 private:
  Factory factory_;
  mutable std::mutex mutex_;
  mutable std::shared_ptr<const EmbeddingProvider> provider_;
};

struct Context {
  StoreSnapshot snapshot;
  std::optional<std::string> store_path;
  std::optional<std::uint32_t> checksum;
  const ProviderHandle* provider = nullptr;
  const Lexicon* lexicon = nullptr;
  std::size_t default_k = 20;
  ParallelOptions parallel;
};

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline std::vector<std::string> string_list(const Json& body, const char* key) {
  std::vector<std::string> out;
  if (!body.contains(key) || body[key].is_null()) return out;
  const auto& arr = body[key];
  if (!arr.is_array()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be an array");
  for (const auto& v : arr) {
    if (!v.is_string()) throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline void push_unique(std::vector<std::string>& list, const std::string& s) {
  if (std::find(list.begin(), list.end(), s) == list.end()) list.push_back(s);
}

inline Json linkage_set_json(const LinkageSet& set, LinkageSelection types) {
  Json j;
  j["seed"] = set.seed;
  j["sense_id"] = set.sense_id;
  j["gloss"] = set.sense_gloss;
  for (auto t : kAllLinkageTypes) j[std::string(to_string(t)) + "s"] = set.list(t);
  const auto plan = build_prompt_plan(set, types);
  j["plan"] = {{"positive_prompts", plan.positive_prompts},
               {"negative_prompts", plan.negative_prompts},
               {"warnings", plan.warnings}};
  return j;
}

inline std::vector<EmbeddingVector> embed_texts(const Context& ctx, const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  if (ctx.provider == nullptr) throw ProviderFailure(ErrorCode::Transport, "no embedding provider configured");
  const EmbeddingProvider& provider = ctx.provider->get();
  std::vector<EmbeddingVector> out;
  try {
    out = provider.embed_text(texts);
  } catch (const Error& e) {
    throw ProviderFailure(e);
  }
  for (const auto& v : out) {
    if (v.dim() != ctx.snapshot.dim()) {
      throw ProviderFailure(ErrorCode::DimensionMismatch, "provider dim " + std::to_string(v.dim()) +
                                                              " does not match store dim " +
                                                              std::to_string(ctx.snapshot.dim()));
    }
  }
  return out;
}

inline std::size_t parse_k(const Json& body, std::size_t default_k) {
  if (!body.contains("k") || body["k"].is_null()) return default_k;
  const auto& k = body["k"];
  if (!k.is_number_integer()) throw Error(ErrorCode::InvalidArgument, "'k' must be an integer");
  const auto v = k.get<std::int64_t>();
  if (v < 1 || v > static_cast<std::int64_t>(kMaxK)) {
    throw Error(ErrorCode::InvalidArgument, "'k' must be in [1, 10000]");
  }
  return static_cast<std::size_t>(v);
}

inline LabelMap label_map_from_json(const Json& body, const char* key) {
  if (!body.contains(key) || !body[key].is_array()) {
    throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' must be an array of {id, label}");
  }
  LabelMap out;
  for (const auto& e : body[key]) {
    if (!e.is_object() || !e.contains("id") || !e["id"].is_string() || !e.contains("label") ||
        !e["label"].is_string()) {
      throw Error(ErrorCode::InvalidArgument, std::string("'") + key + "' entries need string id and label");
    }
    out.add(e["id"].get<std::string>(), e["label"].get<std::string>());
  }
  return out;
}

inline Json optional_string(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

}  // namespace detail

inline Json label_map_json(const LabelMap& labels) {
  Json arr = Json::array();
  for (const auto& [id, label] : labels) arr.push_back({{"id", id}, {"label", label}});
  return arr;
}

inline std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

/// 9 significant digits, for human-readable tables.
inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Operations

inline Json info(const Context& ctx) {
  Json j;
  j["version"] = kResponseVersion;
  j["dim"] = ctx.snapshot.dim();
  j["count"] = ctx.snapshot.size();
  j["store_path"] = detail::optional_string(ctx.store_path);
  j["checksum"] = ctx.checksum ? Json(hex32(*ctx.checksum)) : Json(nullptr);
  return j;
}

inline Json record(const Context& ctx, const std::string& id) {
  const auto rec = get_record(ctx.snapshot, id);
  Json j;
  j["version"] = kResponseVersion;
  j["record"] = {{"id", rec.id},
                 {"uri", rec.uri},
                 {"tags", rec.tags},
                 {"dim", rec.embedding.dim()},
                 {"embedding", std::vector<float>(rec.embedding.values().begin(), rec.embedding.values().end())}};
  return j;
}

inline Json expand(const Context& ctx, const Json& body) {
  if (ctx.lexicon == nullptr) throw Error(ErrorCode::InvalidArgument, "no lexicon loaded");
  if (!body.contains("term") || !body["term"].is_string() || body["term"].get<std::string>().empty()) {
    throw Error(ErrorCode::InvalidArgument, "'term' must be a non-empty string");
  }
  LinkageSelection types = LinkageSelection::all();
  if (body.contains("types") && !body["types"].is_null()) {
    types = LinkageSelection{};
    for (const auto& t : detail::string_list(body, "types")) {
      auto parsed = parse_linkage_type(t);
      if (!parsed) throw Error(ErrorCode::InvalidArgument, "unknown linkage type '" + t + "'");
      types.insert(*parsed);
    }
  }
  const auto term = body["term"].get<std::string>();
  Json j;
  j["version"] = kResponseVersion;
  j["term"] = term;
  j["senses"] = Json::array();
  for (const auto& set : ctx.lexicon->expand(term, types)) j["senses"].push_back(detail::linkage_set_json(set, types));
  return j;
}

/// Uploaded image to add as a positive prompt (by-image search).
struct ImageUpload {
  std::string name;
  std::string bytes;
  std::string media_type;
};

/// Search request fields: positive_texts, negative_texts, positive_image_refs,
/// k, aggregation ("mean" | "max"), expand_with_lexicon (linkage types), debug.
inline Json search(const Context& ctx, const Json& body, const std::vector<ImageUpload>& uploads = {}) {
  if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  const auto positive_texts = detail::string_list(body, "positive_texts");
  const auto negative_texts = detail::string_list(body, "negative_texts");
  const auto image_refs = detail::string_list(body, "positive_image_refs");
  const std::size_t k = detail::parse_k(body, ctx.default_k);
  Aggregation aggregation = Aggregation::MeanEmbedding;
  if (body.contains("aggregation") && !body["aggregation"].is_null()) {
    if (!body["aggregation"].is_string()) throw Error(ErrorCode::InvalidArgument, "'aggregation' must be a string");
    aggregation = parse_aggregation(body["aggregation"].get<std::string>());
  }
  const bool debug = body.value("debug", false);
  if (positive_texts.empty() && negative_texts.empty() && image_refs.empty() && uploads.empty()) {
    throw Error(ErrorCode::InvalidArgument, "request needs at least one positive or negative prompt");
  }
  for (const auto* list : {&positive_texts, &negative_texts}) {
    for (const auto& t : *list) {
      if (t.empty()) throw Error(ErrorCode::InvalidArgument, "prompt texts must be non-empty");
    }
  }

  // Effective prompt plan.
  std::vector<std::string> positives, negatives, warnings;
  for (const auto& t : negative_texts) detail::push_unique(negatives, t);
  const bool expanding = body.contains("expand_with_lexicon") && !body["expand_with_lexicon"].is_null();
  LinkageSelection types;
  if (expanding) {
    if (ctx.lexicon == nullptr) throw Error(ErrorCode::InvalidArgument, "lexicon expansion requested but none loaded");
    for (const auto& t : detail::string_list(body, "expand_with_lexicon")) {
      auto parsed = parse_linkage_type(t);
      if (!parsed) throw Error(ErrorCode::InvalidArgument, "unknown linkage type '" + t + "'");
      types.insert(*parsed);
    }
  }
  for (const auto& text : positive_texts) {
    detail::push_unique(positives, text);
    if (!expanding) continue;
    for (const auto& set : ctx.lexicon->expand(text, types)) {
      const auto plan = build_prompt_plan(set, types);
      for (const auto& p : plan.positive_prompts) detail::push_unique(positives, p);
      for (const auto& n : plan.negative_prompts) detail::push_unique(negatives, n);
      for (const auto& w : plan.warnings) detail::push_unique(warnings, w);
    }
  }
  std::erase_if(positives, [&](const std::string& p) {
    if (std::find(negatives.begin(), negatives.end(), p) == negatives.end()) return false;
    warnings.push_back("'" + p + "' is both positive and negative; kept as negative prompt");
    return true;
  });

  PromptQuery query;
  query.k = k;
  query.aggregation = aggregation;
  {
    std::vector<std::string> texts = positives;
    texts.insert(texts.end(), negatives.begin(), negatives.end());
    auto embedded = detail::embed_texts(ctx, texts);
    query.positives.assign(std::make_move_iterator(embedded.begin()),
                           std::make_move_iterator(embedded.begin() + static_cast<std::ptrdiff_t>(positives.size())));
    query.negatives.assign(std::make_move_iterator(embedded.begin() + static_cast<std::ptrdiff_t>(positives.size())),
                           std::make_move_iterator(embedded.end()));
  }
  for (const auto& ref : image_refs) {
    auto idx = ctx.snapshot.find(ref);
    if (!idx) throw Error(ErrorCode::NotFound, "no record with id '" + ref + "'");
    query.positives.push_back(EmbeddingVector::from_span(ctx.snapshot.embedding(*idx)));
  }
  for (const auto& up : uploads) {
    if (ctx.provider == nullptr) throw ProviderFailure(ErrorCode::Transport, "no embedding provider configured");
    check_image_request(up.bytes, up.media_type);
    try {
      auto v = ctx.provider->get().embed_image(up.bytes, up.media_type);
      if (v.dim() != ctx.snapshot.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "provider dim does not match store dim");
      }
      query.positives.push_back(std::move(v));
    } catch (const ProviderFailure&) {
      throw;
    } catch (const Error& e) {
      throw ProviderFailure(e);
    }
  }
  if (query.positives.empty() && query.negatives.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no prompts left after resolving the plan");
  }

  const auto results = top_k(ctx.snapshot, query, {ctx.parallel, debug});

  Json j;
  j["version"] = kResponseVersion;
  j["k"] = k;
  j["aggregation"] = to_string(aggregation);
  Json refs = image_refs;
  for (const auto& up : uploads) refs.push_back("upload:" + up.name);
  j["plan"] = {{"positive_texts", positives},
               {"negative_texts", negatives},
               {"positive_image_refs", refs},
               {"warnings", warnings}};
  j["results"] = Json::array();
  for (const auto& r : results) {
    Json row;
    row["rank"] = r.rank;
    row["id"] = r.id;
    row["uri"] = ctx.snapshot.uri(r.index);
    row["score"] = r.score.value;
    if (r.breakdown) {
      row["score_positive"] = r.breakdown->first;
      row["score_negative"] = r.breakdown->second;
    }
    j["results"].push_back(std::move(row));
  }
  return j;
}

/// Classes: [{"label": str, "prompt": str}, ...] in tie-break order.
inline std::vector<std::pair<std::string, std::string>> parse_classes(const Json& body) {
  if (!body.is_object() || !body.contains("classes") || !body["classes"].is_array()) {
    throw Error(ErrorCode::InvalidArgument, "'classes' must be an array of {label, prompt}");
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& c : body["classes"]) {
    if (!c.is_object() || !c.contains("label") || !c["label"].is_string() || !c.contains("prompt") ||
        !c["prompt"].is_string()) {
      throw Error(ErrorCode::InvalidArgument, "class entries need string label and prompt");
    }
    out.emplace_back(c["label"].get<std::string>(), c["prompt"].get<std::string>());
  }
  return out;
}

inline Json classify(const Context& ctx, const Json& body) {
  const auto classes = parse_classes(body);
  if (classes.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
  std::vector<std::string> prompts;
  for (const auto& c : classes) {
    if (c.second.empty()) throw Error(ErrorCode::InvalidArgument, "class prompts must be non-empty");
    prompts.push_back(c.second);
  }
  auto embedded = detail::embed_texts(ctx, prompts);
  std::vector<ClassPromptSet::Entry> entries;
  for (std::size_t i = 0; i < classes.size(); ++i) entries.push_back({classes[i].first, std::move(embedded[i])});
  const ClassPromptSet set(std::move(entries));
  const auto predictions = promptscope::classify(ctx.snapshot, set, ctx.parallel);

  Json j;
  j["version"] = kResponseVersion;
  j["labels"] = set.labels();
  j["prompts"] = prompts;
  j["predictions"] = label_map_json(predictions);
  return j;
}

inline Json report_json(const EvaluationReport& r) {
  Json j;
  j["version"] = kResponseVersion;
  j["labels"] = r.confusion.labels;
  j["evaluated"] = r.evaluated;
  j["confusion"] = {{"rows", "predicted"},
                    {"columns", "ground_truth"},
                    {"raw", r.confusion.raw},
                    {"column_normalized", r.confusion.column_normalized}};
  Json f1 = Json::object();
  for (std::size_t i = 0; i < r.per_class_f1.size(); ++i) f1[r.confusion.labels[i]] = r.per_class_f1[i];
  j["per_class_f1"] = f1;
  j["macro_f1"] = r.macro_f1;
  j["provenance"] = {{"store", detail::optional_string(r.provenance.store_path)},
                     {"prompts", r.provenance.prompts},
                     {"provider", detail::optional_string(r.provenance.provider)}};
  return j;
}

/// Body: {"predictions": [{id, label}], "ground_truth": [{id, label}],
///        "labels": [...] (optional), "provenance": {store, prompts, provider} (optional)}.
inline Json evaluate(const Json& body) {
  if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  const auto predictions = detail::label_map_from_json(body, "predictions");
  const auto truth = detail::label_map_from_json(body, "ground_truth");
  auto labels = detail::string_list(body, "labels");
  if (labels.empty()) labels = labels_in_order(truth, predictions);
  Provenance prov;
  if (body.contains("provenance") && body["provenance"].is_object()) {
    const auto& p = body["provenance"];
    if (p.contains("store") && p["store"].is_string()) prov.store_path = p["store"].get<std::string>();
    if (p.contains("provider") && p["provider"].is_string()) prov.provider = p["provider"].get<std::string>();
    prov.prompts = detail::string_list(p, "prompts");
  }
  return report_json(promptscope::evaluate(predictions, truth, labels, std::move(prov)));
}

/// Body: {"records": [{id, uri, embedding, tags}]}. Returns the batch ready to ingest.
inline RecordBatch parse_ingest(const Json& body, std::size_t dim) {
  if (!body.is_object() || !body.contains("records") || !body["records"].is_array()) {
    throw Error(ErrorCode::InvalidArgument, "'records' must be an array");
  }
  RecordBatch batch(dim);
  for (const auto& r : body["records"]) {
    if (!r.is_object() || !r.contains("id") || !r["id"].is_string() || !r.contains("embedding")) {
      throw Error(ErrorCode::InvalidArgument, "records need string id and embedding");
    }
    auto v = vector_from_json(r["embedding"], dim);
    Tags tags;
    if (r.contains("tags") && r["tags"].is_object()) {
      for (const auto& [key, val] : r["tags"].items()) {
        if (!val.is_string()) throw Error(ErrorCode::InvalidArgument, "tag values must be strings");
        tags.emplace(key, val.get<std::string>());
      }
    }
    batch.add(r["id"].get<std::string>(), r.value("uri", std::string{}), v.values(), std::move(tags));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Config file: key = value lines, '#' comments, optional double quotes.
//   store = data/images.psvs
//   provider_endpoint = http://127.0.0.1:8099
//   default_k = 20
//   lexicon = data/lexicon.tsv

struct Config {
  std::optional<std::string> store;
  std::optional<std::string> provider_endpoint;
  std::optional<std::size_t> default_k;
  std::optional<std::string> lexicon;
};

inline Config parse_config(std::istream& in) {
  Config cfg;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#' || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "expected key = value", line_no);
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key == "store") {
      cfg.store = value;
    } else if (key == "provider_endpoint") {
      cfg.provider_endpoint = value;
    } else if (key == "lexicon") {
      cfg.lexicon = value;
    } else if (key == "default_k") {
      try {
        const auto k = std::stoll(value);
        if (k < 1 || k > static_cast<long long>(kMaxK)) throw std::out_of_range("k");
        cfg.default_k = static_cast<std::size_t>(k);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, "default_k must be an integer in [1, 10000]", line_no);
      }
    } else {
      throw Error(ErrorCode::ParseError, "unknown key '" + key + "'", line_no);
    }
  }
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  return parse_config(in);
}

}  // namespace promptscope::api
