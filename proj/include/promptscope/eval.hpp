#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promptscope/embedding.hpp"
#include "promptscope/parallel.hpp"
#include "promptscope/search.hpp"
#include "promptscope/store.hpp"

namespace promptscope {

/// Ordered class labels with one prompt embedding each. Order matters: it is
/// the argmax tie-break.
class ClassPromptSet {
 public:
  struct Entry {
    std::string label;
    EmbeddingVector prompt;
  };

  explicit ClassPromptSet(std::vector<Entry> entries) : entries_(std::move(entries)) {
    if (entries_.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.label.empty()) throw Error(ErrorCode::InvalidArgument, "empty class label");
      require_same_dim(entries_.front().prompt.dim(), e.prompt.dim());
      require_nonzero(e.prompt, "class prompt '" + e.label + "'");
      for (std::size_t j = 0; j < i; ++j) {
        if (entries_[j].label == e.label) throw Error(ErrorCode::InvalidArgument, "duplicate label '" + e.label + "'");
      }
    }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t dim() const noexcept { return entries_.front().prompt.dim(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.label);
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

/// Insertion-ordered id -> label map (predictions or ground truth).
class LabelMap {
 public:
  void add(std::string id, std::string label) {
    if (!index_.emplace(id, entries_.size()).second) {
      throw Error(ErrorCode::DuplicateId, "id '" + id + "' labelled twice");
    }
    entries_.emplace_back(std::move(id), std::move(label));
  }

  const std::string* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const LabelMap& a, const LabelMap& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads a two-column `id<TAB>label` file.
inline LabelMap read_label_tsv(std::istream& in) {
  LabelMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw Error(ErrorCode::ParseError, "expected 2 tab-separated columns", line_no);
    }
    try {
      out.add(line.substr(0, tab), line.substr(tab + 1));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), line_no);
    }
  }
  return out;
}

inline LabelMap read_label_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_label_tsv(in);
}

inline void write_label_tsv(std::ostream& out, const LabelMap& labels) {
  for (const auto& [id, label] : labels) out << id << '\t' << label << '\n';
}

/// Argmax class index per record (insertion order). Ties go to the earliest
/// class in the prompt set.
inline std::vector<std::size_t> classify_indices(const StoreSnapshot& snapshot, const ClassPromptSet& prompts,
                                                 const ParallelOptions& parallel = {}) {
  require_same_dim(snapshot.dim(), prompts.dim());
  if (snapshot.empty()) throw Error(ErrorCode::EmptySnapshot, "nothing to classify");
  std::vector<std::size_t> out(snapshot.size());
  parallel_chunks(snapshot.size(), parallel.resolved(), [&](std::size_t, std::size_t b, std::size_t e) {
    detail::for_each_record(snapshot, b, e, [&](std::size_t i, std::span<const float> x, double n) {
      std::size_t best = 0;
      double best_score = detail::cosine(x, n, prompts[0].prompt.values(), prompts[0].prompt.norm());
      for (std::size_t c = 1; c < prompts.size(); ++c) {
        const double s = detail::cosine(x, n, prompts[c].prompt.values(), prompts[c].prompt.norm());
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      out[i] = best;
    });
  });
  return out;
}

inline LabelMap classify(const StoreSnapshot& snapshot, const ClassPromptSet& prompts,
                         const ParallelOptions& parallel = {}) {
  const auto idx = classify_indices(snapshot, prompts, parallel);
  LabelMap out;
  for (std::size_t i = 0; i < idx.size(); ++i) out.add(snapshot.id(i), prompts[idx[i]].label);
  return out;
}

/// Rows are predicted labels, columns are ground-truth labels.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::uint64_t>> raw;
  std::vector<std::vector<double>> column_normalized;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : raw) for (auto v : row) t += v;
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(const LabelMap& predictions, const LabelMap& ground_truth,
                                        const std::vector<std::string>& labels) {
  std::unordered_map<std::string, std::size_t> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!label_index.emplace(labels[i], i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate label '" + labels[i] + "'");
    }
  }
  auto lookup = [&](const std::string& label) {
    auto it = label_index.find(label);
    if (it == label_index.end()) throw Error(ErrorCode::UnknownLabel, "label '" + label + "' not in label list");
    return it->second;
  };

  const std::size_t n = labels.size();
  ConfusionMatrix cm{labels, std::vector(n, std::vector<std::uint64_t>(n, 0)),
                     std::vector(n, std::vector<double>(n, 0.0))};
  for (const auto& [id, predicted] : predictions) {
    const std::string* truth = ground_truth.find(id);
    if (!truth) throw Error(ErrorCode::MissingGroundTruth, "no ground truth for id '" + id + "'");
    ++cm.raw[lookup(predicted)][lookup(*truth)];
  }
  for (std::size_t t = 0; t < n; ++t) {
    std::uint64_t column = 0;
    for (std::size_t p = 0; p < n; ++p) column += cm.raw[p][t];
    if (column == 0) continue;
    for (std::size_t p = 0; p < n; ++p) {
      cm.column_normalized[p][t] = static_cast<double>(cm.raw[p][t]) / static_cast<double>(column);
    }
  }
  return cm;
}

namespace detail {

inline double ratio_or_zero(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace detail

/// Per-class F1 in label order; any 0/0 precision, recall or F1 counts as 0.
inline std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  const std::size_t n = cm.labels.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += static_cast<double>(cm.raw[c][j]);
      col += static_cast<double>(cm.raw[j][c]);
    }
    const double tp = static_cast<double>(cm.raw[c][c]);
    const double precision = detail::ratio_or_zero(tp, row);
    const double recall = detail::ratio_or_zero(tp, col);
    out[c] = detail::ratio_or_zero(2.0 * precision * recall, precision + recall);
  }
  return out;
}

inline double macro_f1(const ConfusionMatrix& cm) {
  const auto f1 = per_class_f1(cm);
  if (f1.empty()) return 0.0;
  double sum = 0.0;
  for (double v : f1) sum += v;
  return sum / static_cast<double>(f1.size());
}

inline double macro_f1(const LabelMap& predictions, const LabelMap& ground_truth,
                       const std::vector<std::string>& labels) {
  return macro_f1(confusion_matrix(predictions, ground_truth, labels));
}

struct Provenance {
  std::optional<std::string> store_path;
  std::vector<std::string> prompts;
  std::optional<std::string> provider;
};

struct EvaluationReport {
  ConfusionMatrix confusion;
  std::vector<double> per_class_f1;
  double macro_f1 = 0.0;
  std::uint64_t evaluated = 0;
  Provenance provenance;
};

inline EvaluationReport evaluate(const LabelMap& predictions, const LabelMap& ground_truth,
                                 const std::vector<std::string>& labels, Provenance provenance = {}) {
  EvaluationReport r;
  r.confusion = confusion_matrix(predictions, ground_truth, labels);
  r.per_class_f1 = promptscope::per_class_f1(r.confusion);
  r.macro_f1 = promptscope::macro_f1(r.confusion);
  r.evaluated = r.confusion.total();
  r.provenance = std::move(provenance);
  return r;
}

/// Label list in first-appearance order over ground truth, then predictions.
inline std::vector<std::string> labels_in_order(const LabelMap& ground_truth, const LabelMap& predictions) {
  std::vector<std::string> out;
  auto add = [&](const std::string& l) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  };
  for (const auto& [id, l] : ground_truth) add(l);
  for (const auto& [id, l] : predictions) add(l);
  return out;
}

/// Five-number summary plus mean; quartiles by linear interpolation between
/// closest ranks.
struct ScoreSummary {
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

inline double quantile_sorted(std::span<const double> sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ScoreSummary summarize(std::vector<double> values) {
  ScoreSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  return s;
}

/// profile[t][c]: distribution of cos(image, prompt c) over images whose
/// ground truth is class t. Empty ground-truth classes have count 0.
using SimilarityProfile = std::vector<std::vector<ScoreSummary>>;

inline SimilarityProfile similarity_profile(const StoreSnapshot& snapshot, const ClassPromptSet& prompts,
                                            const LabelMap& ground_truth) {
  require_same_dim(snapshot.dim(), prompts.dim());
  if (snapshot.empty()) throw Error(ErrorCode::EmptySnapshot, "nothing to profile");
  const std::size_t n = prompts.size();
  std::unordered_map<std::string, std::size_t> label_index;
  for (std::size_t c = 0; c < n; ++c) label_index.emplace(prompts[c].label, c);

  std::vector<std::vector<std::vector<double>>> buckets(n, std::vector<std::vector<double>>(n));
  detail::for_each_record(snapshot, 0, snapshot.size(), [&](std::size_t i, std::span<const float> x, double norm) {
    const std::string* truth = ground_truth.find(snapshot.id(i));
    if (!truth) throw Error(ErrorCode::MissingGroundTruth, "no ground truth for id '" + snapshot.id(i) + "'");
    auto it = label_index.find(*truth);
    if (it == label_index.end()) throw Error(ErrorCode::UnknownLabel, "label '" + *truth + "' has no prompt");
    for (std::size_t c = 0; c < n; ++c) {
      buckets[it->second][c].push_back(detail::cosine(x, norm, prompts[c].prompt.values(), prompts[c].prompt.norm()));
    }
  });

  SimilarityProfile out(n, std::vector<ScoreSummary>(n));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < n; ++c) out[t][c] = summarize(std::move(buckets[t][c]));
  }
  return out;
}

}  // namespace promptscope
