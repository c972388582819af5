#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <istream>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "promptscope/error.hpp"

namespace promptscope {

enum class LinkageType { Synonym, Antonym, Hypernym, Hyponym, Meronym, Holonym };

inline constexpr std::array<LinkageType, 6> kAllLinkageTypes = {
    LinkageType::Synonym, LinkageType::Antonym, LinkageType::Hypernym,
    LinkageType::Hyponym, LinkageType::Meronym, LinkageType::Holonym};

inline std::string_view to_string(LinkageType t) {
  switch (t) {
    case LinkageType::Synonym: return "synonym";
    case LinkageType::Antonym: return "antonym";
    case LinkageType::Hypernym: return "hypernym";
    case LinkageType::Hyponym: return "hyponym";
    case LinkageType::Meronym: return "meronym";
    case LinkageType::Holonym: return "holonym";
  }
  return "?";
}

inline std::optional<LinkageType> parse_linkage_type(std::string_view s) {
  for (auto t : kAllLinkageTypes) {
    const auto name = to_string(t);
    if (s == name) return t;
    // Accept plural forms and the -y nouns ("meronymy", "holonymy").
    if (s.size() == name.size() + 1 && s.substr(0, name.size()) == name && (s.back() == 's' || s.back() == 'y')) {
      return t;
    }
  }
  return std::nullopt;
}

/// Set of linkage types, e.g. parsed from "synonym,hypernym".
class LinkageSelection {
 public:
  constexpr LinkageSelection() = default;
  LinkageSelection(std::initializer_list<LinkageType> types) {
    for (auto t : types) insert(t);
  }

  static LinkageSelection all() {
    LinkageSelection s;
    for (auto t : kAllLinkageTypes) s.insert(t);
    return s;
  }

  static LinkageSelection parse(std::string_view csv) {
    LinkageSelection s;
    std::size_t start = 0;
    while (start <= csv.size()) {
      auto end = csv.find(',', start);
      if (end == std::string_view::npos) end = csv.size();
      auto item = csv.substr(start, end - start);
      while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
      while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
      if (item == "all") return all();
      if (!item.empty()) {
        auto t = parse_linkage_type(item);
        if (!t) throw Error(ErrorCode::InvalidArgument, "unknown linkage type '" + std::string(item) + "'");
        s.insert(*t);
      }
      start = end + 1;
    }
    return s;
  }

  void insert(LinkageType t) { bits_ |= 1u << static_cast<unsigned>(t); }
  bool contains(LinkageType t) const { return (bits_ >> static_cast<unsigned>(t)) & 1u; }
  bool empty() const { return bits_ == 0; }

 private:
  unsigned bits_ = 0;
};

/// Lexical expansion of one sense of a seed term. Lists are deduplicated,
/// lexicographically sorted, lowercase, with underscores for spaces.
struct LinkageSet {
  std::string seed;
  std::string sense_id;
  std::string sense_gloss;
  std::array<std::vector<std::string>, 6> links;

  const std::vector<std::string>& list(LinkageType t) const { return links[static_cast<std::size_t>(t)]; }
  std::vector<std::string>& list(LinkageType t) { return links[static_cast<std::size_t>(t)]; }
  const std::vector<std::string>& synonyms() const { return list(LinkageType::Synonym); }
  const std::vector<std::string>& antonyms() const { return list(LinkageType::Antonym); }
  const std::vector<std::string>& hypernyms() const { return list(LinkageType::Hypernym); }
  const std::vector<std::string>& hyponyms() const { return list(LinkageType::Hyponym); }
  const std::vector<std::string>& meronyms() const { return list(LinkageType::Meronym); }
  const std::vector<std::string>& holonyms() const { return list(LinkageType::Holonym); }

  friend bool operator==(const LinkageSet&, const LinkageSet&) = default;
};

struct PromptPlan {
  std::vector<std::string> positive_prompts;
  std::vector<std::string> negative_prompts;
  std::vector<std::string> warnings;

  friend bool operator==(const PromptPlan&, const PromptPlan&) = default;
};

/// Lowercases ASCII, trims, and turns inner spaces into underscores.
inline std::string normalize_term(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == ' ') {
      out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

inline std::string term_to_prompt(std::string_view term) {
  std::string out(term);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

/// In-memory lexicon loaded from the 4-column TSV interchange format:
///
///   seed <TAB> sense-id <TAB> linkage-type <TAB> target
///   seed <TAB> sense-id <TAB> gloss        <TAB> definition text
///
/// Blank lines and lines starting with '#' are ignored.
class Lexicon {
 public:
  static Lexicon parse(std::istream& in) {
    Lexicon lex;
    std::string line;
    std::size_t line_no = 0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      std::vector<std::string_view> cols;
      std::string_view rest(line);
      for (;;) {
        auto tab = rest.find('\t');
        cols.push_back(rest.substr(0, tab));
        if (tab == std::string_view::npos) break;
        rest.remove_prefix(tab + 1);
      }
      if (cols.size() != 4) {
        throw Error(ErrorCode::ParseError, "expected 4 tab-separated columns, got " + std::to_string(cols.size()),
                    line_no);
      }
      const std::string seed = normalize_term(cols[0]);
      const std::string sense(cols[1]);
      if (seed.empty() || sense.empty() || cols[3].empty()) {
        throw Error(ErrorCode::ParseError, "empty seed, sense or target", line_no);
      }
      auto& entry = lex.entries_[seed][sense];
      if (cols[2] == "gloss") {
        entry.gloss = std::string(cols[3]);
      } else {
        auto type = parse_linkage_type(cols[2]);
        if (!type) throw Error(ErrorCode::ParseError, "unknown linkage type '" + std::string(cols[2]) + "'", line_no);
        const std::string target = normalize_term(cols[3]);
        if (target.empty()) throw Error(ErrorCode::ParseError, "empty target", line_no);
        entry.links[static_cast<std::size_t>(*type)].insert(target);
      }
      ++rows;
    }
    if (rows == 0) throw Error(ErrorCode::EmptyLexicon, "lexicon has no rows");
    return lex;
  }

  static Lexicon load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open lexicon " + path.string());
    return parse(in);
  }

  std::size_t seed_count() const noexcept { return entries_.size(); }

  /// One LinkageSet per sense of `term`, ordered by sense id. Only the
  /// requested linkage lists are populated. Unknown terms yield an empty list.
  std::vector<LinkageSet> expand(std::string_view term, LinkageSelection types = LinkageSelection::all()) const {
    std::vector<LinkageSet> out;
    const std::string seed = normalize_term(term);
    auto it = entries_.find(seed);
    if (it == entries_.end()) return out;
    for (const auto& [sense, entry] : it->second) {
      LinkageSet set{seed, sense, entry.gloss, {}};
      for (auto t : kAllLinkageTypes) {
        if (!types.contains(t)) continue;
        const auto& src = entry.links[static_cast<std::size_t>(t)];
        set.list(t).assign(src.begin(), src.end());
      }
      out.push_back(std::move(set));
    }
    return out;
  }

 private:
  struct SenseEntry {
    std::string gloss;
    std::array<std::set<std::string>, 6> links;
  };
  std::map<std::string, std::map<std::string, SenseEntry>> entries_;
};

inline Lexicon load_lexicon(const std::filesystem::path& path) { return Lexicon::load(path); }

/// Turns a linkage set into prompt text. Positives are the seed followed by the
/// selected synonym, hypernym, hyponym, meronym and holonym terms in that order;
/// antonyms become negatives. A term in both roles stays negative only and a
/// warning is recorded.
inline PromptPlan build_prompt_plan(const LinkageSet& set,
                                    LinkageSelection include = LinkageSelection::all()) {
  static constexpr std::array<LinkageType, 5> kPositiveOrder = {
      LinkageType::Synonym, LinkageType::Hypernym, LinkageType::Hyponym,
      LinkageType::Meronym, LinkageType::Holonym};

  PromptPlan plan;
  std::set<std::string> negatives;
  if (include.contains(LinkageType::Antonym)) {
    for (const auto& a : set.antonyms()) {
      auto p = term_to_prompt(a);
      if (negatives.insert(p).second) plan.negative_prompts.push_back(std::move(p));
    }
  }

  std::set<std::string> seen;
  auto add_positive = [&](const std::string& term, std::string_view role) {
    auto p = term_to_prompt(term);
    if (negatives.contains(p)) {
      plan.warnings.push_back("'" + p + "' is both " + std::string(role) + " and antonym; kept as negative prompt");
      return;
    }
    if (seen.insert(p).second) plan.positive_prompts.push_back(std::move(p));
  };
  add_positive(set.seed, "seed");
  for (auto t : kPositiveOrder) {
    if (!include.contains(t)) continue;
    for (const auto& term : set.list(t)) add_positive(term, to_string(t));
  }
  return plan;
}

}  // namespace promptscope
