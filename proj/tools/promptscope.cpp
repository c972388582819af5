// promptscope: command-line front end for the vector store, search engine,
// lexicon expansion and zero-shot evaluation.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"

#include "promptscope/promptscope.hpp"

namespace ps = promptscope;
namespace fs = std::filesystem;
using ps::api::Json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitProvider = 3;
constexpr int kExitStore = 4;
constexpr const char* kDefaultEndpoint = "http://127.0.0.1:8099";

int exit_code(const ps::Error& e) {
  if (dynamic_cast<const ps::api::ProviderFailure*>(&e) != nullptr) return kExitProvider;
  switch (e.code()) {
    case ps::ErrorCode::BadMagic:
    case ps::ErrorCode::UnsupportedVersion:
    case ps::ErrorCode::ChecksumMismatch:
    case ps::ErrorCode::TruncatedFile:
    case ps::ErrorCode::InvalidRecord: return kExitStore;
    case ps::ErrorCode::Transport:
    case ps::ErrorCode::ServiceError: return kExitProvider;
    case ps::ErrorCode::InvalidArgument:
    case ps::ErrorCode::NotFound:
    case ps::ErrorCode::EmptyInput: return kExitUsage;
    default: return kExitIo;
  }
}

struct Common {
  std::string config_path;
  std::string endpoint;
  std::size_t threads = 0;
  ps::api::Config config;

  void load() {
    if (!config_path.empty()) config = ps::api::load_config(config_path);
  }

  std::string resolved_endpoint() const {
    if (!endpoint.empty()) return endpoint;
    return ps::resolve_endpoint(config.provider_endpoint.value_or(kDefaultEndpoint));
  }

  std::string store_or(const std::string& flag) const {
    if (!flag.empty()) return flag;
    if (config.store) return *config.store;
    throw ps::Error(ps::ErrorCode::InvalidArgument, "--store is required");
  }

  std::shared_ptr<const ps::api::ProviderHandle> provider() const {
    const std::string url = resolved_endpoint();
    return std::make_shared<const ps::api::ProviderHandle>(
        [url] { return std::make_shared<const ps::HttpEmbeddingClient>(url); });
  }

  std::shared_ptr<const ps::Lexicon> lexicon(const std::string& flag) const {
    std::string path = flag.empty() ? config.lexicon.value_or("") : flag;
    if (path.empty()) return nullptr;
    return std::make_shared<const ps::Lexicon>(ps::load_lexicon(path));
  }
};

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    if (end > start) out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

Json classes_json(const ps::LabelMap& classes) {
  Json arr = Json::array();
  for (const auto& [label, prompt] : classes) arr.push_back({{"label", label}, {"prompt", prompt}});
  return Json{{"classes", arr}};
}

void print_linkage_text(const Json& expanded) {
  if (expanded["senses"].empty()) {
    std::cout << "no senses for '" << expanded["term"].get<std::string>() << "'\n";
    return;
  }
  for (const auto& sense : expanded["senses"]) {
    std::cout << sense["seed"].get<std::string>() << " [" << sense["sense_id"].get<std::string>() << "]";
    if (!sense["gloss"].get<std::string>().empty()) std::cout << "  " << sense["gloss"].get<std::string>();
    std::cout << "\n";
    for (auto t : ps::kAllLinkageTypes) {
      const std::string key = std::string(ps::to_string(t)) + "s";
      std::cout << "  " << ps::to_string(t) << ": ";
      const auto& list = sense[key];
      if (list.empty()) std::cout << "-";
      for (std::size_t i = 0; i < list.size(); ++i) std::cout << (i ? ", " : "") << list[i].get<std::string>();
      std::cout << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"promptscope: semantic image search over embedding vectors"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "key = value config file");
  app.add_option("--endpoint", common.endpoint, "embedding service URL (overrides PROMPTSCOPE_EMBED_ENDPOINT)");
  app.add_option("--threads", common.threads, "scan threads (0 = all cores)");

  // ingest
  std::string store_path, input_path, format = "jsonl", ids_path;
  bool strict = false;
  std::size_t dim = 0;
  auto* ingest = app.add_subcommand("ingest", "import embeddings and append them to a store");
  ingest->add_option("--store", store_path, "store file (created if missing)");
  ingest->add_option("--input", input_path, "input file")->required();
  ingest->add_option("--format", format, "jsonl | raw")->check(CLI::IsMember({"jsonl", "raw"}));
  ingest->add_option("--ids", ids_path, "id sidecar for raw format (default <input>.ids)");
  ingest->add_option("--dim", dim, "required embedding dim");
  ingest->add_flag("--strict", strict, "abort on the first bad input line");

  // search
  std::vector<std::string> positives, negatives, image_ids;
  std::size_t k = 0;
  std::string expand_types, lexicon_path, aggregation = "mean";
  bool as_json = false, debug = false;
  auto* search = app.add_subcommand("search", "rank stored images against prompts");
  search->add_option("--store", store_path, "store file");
  search->add_option("--positive", positives, "positive text prompt")->take_all();
  search->add_option("--negative", negatives, "negative text prompt")->take_all();
  search->add_option("--image-id", image_ids, "stored record to use as positive prompt")->take_all();
  search->add_option("--k", k, "result count (default 20)")->check(CLI::Range(std::size_t{1}, ps::api::kMaxK));
  search->add_option("--expand", expand_types, "expand positives via lexicon, e.g. synonym,hypernym");
  search->add_option("--lexicon", lexicon_path, "lexicon TSV");
  search->add_option("--aggregation", aggregation, "mean | max")->check(CLI::IsMember({"mean", "max"}));
  search->add_flag("--json", as_json, "print JSON");
  search->add_flag("--debug", debug, "include positive/negative score breakdown");

  // expand
  std::string term, types;
  auto* expand = app.add_subcommand("expand", "print lexical linkages for a term");
  expand->add_option("--lexicon", lexicon_path, "lexicon TSV");
  expand->add_option("--term", term, "seed term")->required();
  expand->add_option("--types", types, "comma-separated linkage types (default all)");
  expand->add_flag("--json", as_json, "print JSON");

  // classify
  std::string classes_path, out_path;
  auto* classify = app.add_subcommand("classify", "zero-shot classify every stored image");
  classify->add_option("--store", store_path, "store file");
  classify->add_option("--classes", classes_path, "TSV of label<TAB>prompt text")->required();
  classify->add_option("--out", out_path, "write id<TAB>label predictions here (default stdout)");
  classify->add_flag("--json", as_json, "print JSON instead of TSV");

  // evaluate
  std::string predictions_path, truth_path, report_path, labels_csv, provider_name, provenance_store;
  auto* evaluate = app.add_subcommand("evaluate", "confusion matrix and macro F1 for predictions");
  evaluate->add_option("--predictions", predictions_path, "id<TAB>label predictions")->required();
  evaluate->add_option("--truth", truth_path, "id<TAB>label ground truth")->required();
  evaluate->add_option("--report", report_path, "also write the JSON report here");
  evaluate->add_option("--labels", labels_csv, "label order (default: order of appearance)");
  evaluate->add_option("--store", provenance_store, "store path to record in provenance");
  evaluate->add_option("--classes", classes_path, "class prompt TSV to record in provenance");
  evaluate->add_option("--provider", provider_name, "provider identity to record in provenance");

  // serve
  std::string listen = "127.0.0.1:8080";
  auto* serve = app.add_subcommand("serve", "start the HTTP query service");
  serve->add_option("--store", store_path, "store file");
  serve->add_option("--listen", listen, "host:port");
  serve->add_option("--lexicon", lexicon_path, "lexicon TSV");
  serve->add_option("--k", k, "default result count")->check(CLI::Range(std::size_t{1}, ps::api::kMaxK));

  // info
  auto* info = app.add_subcommand("info", "print store dim, count and checksum");
  info->add_option("--store", store_path, "store file");
  info->add_flag("--json", as_json, "print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    common.load();
    const ps::ParallelOptions parallel{common.threads};
    const std::size_t default_k = k != 0 ? k : common.config.default_k.value_or(20);

    auto make_context = [&](const ps::Store& store, const std::string& path,
                            const ps::api::ProviderHandle* provider, const ps::Lexicon* lexicon) {
      return ps::api::Context{store.snapshot(), path, store.checksum(), provider, lexicon, default_k, parallel};
    };

    if (*ingest) {
      const std::string path = common.store_or(store_path);
      ps::ImportOptions opts;
      opts.strict = strict;
      if (dim != 0) opts.dim = dim;
      if (!ids_path.empty()) opts.ids_path = ids_path;
      std::optional<ps::Store> store;
      if (fs::exists(path)) {
        store.emplace(ps::Store::open(path));
        opts.dim = store->dim();
      }
      auto result = ps::import_embeddings(input_path, ps::parse_import_format(format), opts);
      for (const auto& issue : result.skipped) {
        std::cerr << "skipped line " << issue.line << ": " << issue.message << "\n";
      }
      if (!store) {
        if (result.dim == 0) throw ps::Error(ps::ErrorCode::EmptyInput, "no valid records and no existing store");
        store.emplace(result.dim);
      }
      const auto accepted = store->ingest(std::move(result.records));
      store->save(path);
      std::cout << "ingested " << accepted << " records (skipped " << result.skipped.size() << "); store " << path
                << " now has " << store->size() << " records, checksum " << ps::api::hex32(*store->checksum())
                << "\n";
      return 0;
    }

    if (*info) {
      const std::string path = common.store_or(store_path);
      const auto store = ps::Store::open(path);
      const auto j = ps::api::info(make_context(store, path, nullptr, nullptr));
      if (as_json) {
        print_json(j);
      } else {
        std::cout << "store    " << path << "\n"
                  << "dim      " << store.dim() << "\n"
                  << "count    " << store.size() << "\n"
                  << "checksum " << j["checksum"].get<std::string>() << " (verified)\n";
      }
      return 0;
    }

    if (*expand) {
      const auto lexicon = common.lexicon(lexicon_path);
      if (!lexicon) throw ps::Error(ps::ErrorCode::InvalidArgument, "--lexicon is required");
      Json body{{"term", term}};
      if (!types.empty()) body["types"] = split_csv(types);
      const ps::Store dummy(1);
      const auto j = ps::api::expand(make_context(dummy, "", nullptr, lexicon.get()), body);
      if (as_json) {
        print_json(j);
      } else {
        print_linkage_text(j);
      }
      return 0;
    }

    if (*search) {
      const std::string path = common.store_or(store_path);
      const auto store = ps::Store::open(path);
      const auto provider = common.provider();
      const auto lexicon = common.lexicon(lexicon_path);
      Json body;
      body["positive_texts"] = positives;
      body["negative_texts"] = negatives;
      body["positive_image_refs"] = image_ids;
      body["k"] = default_k;
      body["aggregation"] = aggregation;
      if (!expand_types.empty()) body["expand_with_lexicon"] = split_csv(expand_types);
      if (debug) body["debug"] = true;
      const auto j = ps::api::search(make_context(store, path, provider.get(), lexicon.get()), body);
      if (as_json) {
        print_json(j);
        return 0;
      }
      const auto& plan = j["plan"];
      std::cout << "positives: " << plan["positive_texts"].dump() << "  negatives: " << plan["negative_texts"].dump()
                << "  images: " << plan["positive_image_refs"].dump() << "\n";
      for (const auto& w : plan["warnings"]) std::cout << "warning: " << w.get<std::string>() << "\n";
      std::printf("%5s  %-16s  %s\n", "rank", "score", "id / uri");
      for (const auto& r : j["results"]) {
        std::printf("%5zu  %-16s  %s  %s\n", r["rank"].get<std::size_t>(),
                    ps::api::format_score(r["score"].get<double>()).c_str(), r["id"].get<std::string>().c_str(),
                    r["uri"].get<std::string>().c_str());
      }
      return 0;
    }

    if (*classify) {
      const std::string path = common.store_or(store_path);
      const auto store = ps::Store::open(path);
      const auto provider = common.provider();
      const auto classes = ps::read_label_tsv(fs::path(classes_path));
      const auto j = ps::api::classify(make_context(store, path, provider.get(), nullptr), classes_json(classes));
      if (as_json) {
        print_json(j);
        return 0;
      }
      ps::LabelMap predictions;
      for (const auto& p : j["predictions"]) predictions.add(p["id"].get<std::string>(), p["label"].get<std::string>());
      if (out_path.empty()) {
        ps::write_label_tsv(std::cout, predictions);
      } else {
        std::ofstream out(out_path);
        if (!out) throw ps::Error(ps::ErrorCode::Io, "cannot write " + out_path);
        ps::write_label_tsv(out, predictions);
      }
      return 0;
    }

    if (*evaluate) {
      Json body;
      body["predictions"] = ps::api::label_map_json(ps::read_label_tsv(fs::path(predictions_path)));
      body["ground_truth"] = ps::api::label_map_json(ps::read_label_tsv(fs::path(truth_path)));
      if (!labels_csv.empty()) body["labels"] = split_csv(labels_csv);
      if (!provenance_store.empty() || !classes_path.empty() || !provider_name.empty()) {
        Json prov = Json::object();
        if (!provenance_store.empty()) prov["store"] = provenance_store;
        if (!classes_path.empty()) {
          std::vector<std::string> prompts;
          for (const auto& [label, prompt] : ps::read_label_tsv(fs::path(classes_path))) prompts.push_back(prompt);
          prov["prompts"] = prompts;
        }
        if (!provider_name.empty()) prov["provider"] = provider_name;
        body["provenance"] = prov;
      }
      const auto j = ps::api::evaluate(body);
      print_json(j);
      if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw ps::Error(ps::ErrorCode::Io, "cannot write " + report_path);
        out << j.dump(2) << "\n";
      }
      return 0;
    }

    if (*serve) {
      const std::string path = common.store_or(store_path);
      auto store = ps::Store::open(path);
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw ps::Error(ps::ErrorCode::InvalidArgument, "--listen must be host:port");
      const std::string host = listen.substr(0, colon);
      int port = 0;
      const std::string port_text = listen.substr(colon + 1);
      const auto [end, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
      if (ec != std::errc{} || end != port_text.data() + port_text.size() || port < 1 || port > 65535) {
        throw ps::Error(ps::ErrorCode::InvalidArgument, "--listen port must be 1-65535");
      }
      ps::Service service(std::move(store), {path, default_k, parallel}, common.provider(),
                          common.lexicon(lexicon_path));
      httplib::Server server;
      service.mount(server);
      std::cerr << "serving " << path << " on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw ps::Error(ps::ErrorCode::Io, "cannot listen on " + listen);
      return 0;
    }
  } catch (const ps::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
