#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptscope/embedding.hpp"
#include "promptscope/parallel.hpp"
#include "promptscope/store.hpp"

namespace promptscope {

enum class Aggregation {
  MeanEmbedding,  // one cosine against the mean of the prompt vectors
  MaxScore,       // best cosine over the individual prompt vectors
};

inline std::string_view to_string(Aggregation a) {
  return a == Aggregation::MeanEmbedding ? "mean" : "max";
}

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "mean" || s == "MeanEmbedding") return Aggregation::MeanEmbedding;
  if (s == "max" || s == "MaxScore") return Aggregation::MaxScore;
  throw Error(ErrorCode::InvalidArgument, "unknown aggregation '" + std::string(s) + "'");
}

struct PromptQuery {
  std::vector<EmbeddingVector> positives;
  std::vector<EmbeddingVector> negatives;
  std::size_t k = 20;
  Aggregation aggregation = Aggregation::MeanEmbedding;
};

struct ScoredResult {
  std::string id;
  SimilarityScore score;
  std::size_t rank = 0;   // 1-based
  std::size_t index = 0;  // insertion index in the snapshot
  // Debug breakdown (positive side, negative side); set when requested.
  std::optional<std::pair<double, double>> breakdown;
};

struct SearchOptions {
  ParallelOptions parallel;
  bool breakdown = false;
};

namespace detail {

/// One side (positive or negative) of a query, ready for scanning.
class PromptSide {
 public:
  PromptSide() = default;
  PromptSide(std::span<const EmbeddingVector> prompts, Aggregation mode) {
    if (prompts.empty()) return;
    if (mode == Aggregation::MeanEmbedding) {
      vectors_.push_back(mean_embedding(prompts));
    } else {
      vectors_.assign(prompts.begin(), prompts.end());
    }
  }

  bool empty() const noexcept { return vectors_.empty(); }

  double score(std::span<const float> x, double x_norm) const noexcept {
    if (vectors_.empty()) return 0.0;
    double best = cosine(x, x_norm, vectors_.front().values(), vectors_.front().norm());
    for (std::size_t p = 1; p < vectors_.size(); ++p) {
      best = std::max(best, cosine(x, x_norm, vectors_[p].values(), vectors_[p].norm()));
    }
    return best;
  }

 private:
  std::vector<EmbeddingVector> vectors_;
};

struct PreparedQuery {
  PromptSide positive;
  PromptSide negative;

  double score(std::span<const float> x, double x_norm) const noexcept {
    return positive.score(x, x_norm) - negative.score(x, x_norm);
  }
};

inline PreparedQuery prepare(const StoreSnapshot& snapshot, const PromptQuery& query) {
  if (query.positives.empty() && query.negatives.empty()) {
    throw Error(ErrorCode::InvalidArgument, "query needs at least one positive or negative prompt");
  }
  if (query.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  for (const auto* side : {&query.positives, &query.negatives}) {
    for (const auto& v : *side) {
      require_same_dim(snapshot.dim(), v.dim());
      require_nonzero(v, "prompt");
    }
  }
  return {PromptSide(query.positives, query.aggregation), PromptSide(query.negatives, query.aggregation)};
}

/// Calls fn(global_index, embedding, norm) for every record in [begin, end).
template <typename Fn>
void for_each_record(const StoreSnapshot& snapshot, std::size_t begin, std::size_t end, Fn&& fn) {
  for (const auto& seg : snapshot.segments()) {
    const std::size_t seg_begin = seg.offset;
    const std::size_t seg_end = seg.offset + seg.batch->size();
    const std::size_t lo = std::max(begin, seg_begin);
    const std::size_t hi = std::min(end, seg_end);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t j = i - seg_begin;
      fn(i, seg.batch->embedding(j), seg.batch->norm(j));
    }
  }
}

struct Candidate {
  double score;
  std::size_t index;
};

/// Total order used for ranking: higher score first, then lower insertion index.
inline bool ranks_ahead(const Candidate& a, const Candidate& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.index < b.index);
}

}  // namespace detail

/// Cosine of every record against one prompt, indexed by insertion order.
/// Per-record computation is independent, so results do not depend on the
/// thread count.
inline std::vector<SimilarityScore> score_all(const StoreSnapshot& snapshot, const EmbeddingVector& prompt,
                                              const ParallelOptions& parallel = {}) {
  require_same_dim(snapshot.dim(), prompt.dim());
  require_nonzero(prompt, "prompt");
  std::vector<SimilarityScore> out(snapshot.size());
  parallel_chunks(snapshot.size(), parallel.resolved(), [&](std::size_t, std::size_t b, std::size_t e) {
    detail::for_each_record(snapshot, b, e, [&](std::size_t i, std::span<const float> x, double n) {
      out[i] = {detail::cosine(x, n, prompt.values(), prompt.norm())};
    });
  });
  return out;
}

/// Combined score s_pos - s_neg of every record, indexed by insertion order.
/// A side with no prompts contributes 0.
inline std::vector<SimilarityScore> aggregate_query(const StoreSnapshot& snapshot, const PromptQuery& query,
                                                    const ParallelOptions& parallel = {}) {
  const auto prepared = detail::prepare(snapshot, query);
  std::vector<SimilarityScore> out(snapshot.size());
  parallel_chunks(snapshot.size(), parallel.resolved(), [&](std::size_t, std::size_t b, std::size_t e) {
    detail::for_each_record(snapshot, b, e, [&](std::size_t i, std::span<const float> x, double n) {
      out[i] = {prepared.score(x, n)};
    });
  });
  return out;
}

/// The k best records by combined score. Each worker keeps a bounded heap of
/// its k best; the merge sorts the union under the same total order, so the
/// output is identical for any partitioning.
inline std::vector<ScoredResult> top_k(const StoreSnapshot& snapshot, const PromptQuery& query,
                                       const SearchOptions& options = {}) {
  const auto prepared = detail::prepare(snapshot, query);
  const std::size_t k = std::min(query.k, snapshot.size());
  if (k == 0) return {};

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.parallel.resolved(), snapshot.size()));
  std::vector<std::vector<detail::Candidate>> partial(workers);
  parallel_chunks(snapshot.size(), workers, [&](std::size_t w, std::size_t b, std::size_t e) {
    auto& heap = partial[w];
    heap.reserve(k);
    detail::for_each_record(snapshot, b, e, [&](std::size_t i, std::span<const float> x, double n) {
      detail::Candidate c{prepared.score(x, n), i};
      if (heap.size() < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end(), detail::ranks_ahead);
      } else if (detail::ranks_ahead(c, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), detail::ranks_ahead);
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end(), detail::ranks_ahead);
      }
    });
  });

  std::vector<detail::Candidate> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  std::sort(merged.begin(), merged.end(), detail::ranks_ahead);
  merged.resize(k);

  std::vector<ScoredResult> results;
  results.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    const auto& c = merged[r];
    ScoredResult res{snapshot.id(c.index), {c.score}, r + 1, c.index, std::nullopt};
    if (options.breakdown) {
      const auto x = snapshot.embedding(c.index);
      const double n = snapshot.norm(c.index);
      res.breakdown = std::pair{prepared.positive.score(x, n), prepared.negative.score(x, n)};
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace promptscope
