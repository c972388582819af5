#pragma once

#include <bit>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptscope/error.hpp"

namespace promptscope {

/// Similarity value. Pure cosine scores lie in [-1, 1]; a positive score minus
/// a negative score lies in [-2, 2].
struct SimilarityScore {
  double value = 0.0;

  friend auto operator<=>(const SimilarityScore&, const SimilarityScore&) = default;
};

namespace detail {

// All reductions run in ascending index order with 64-bit accumulators. The
// scan kernel and the public API share these so every path yields the same bits.
inline double dot(std::span<const float> x, std::span<const float> y) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  }
  return acc;
}

inline double l2_norm(std::span<const float> x) noexcept {
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

inline double cosine(std::span<const float> x, double x_norm,
                     std::span<const float> y, double y_norm) noexcept {
  return dot(x, y) / (x_norm * y_norm);
}

}  // namespace detail

/// Fixed-dimension embedding stored as 32-bit floats with a cached L2 norm.
/// Values are always finite; a zero vector is representable but is rejected by
/// every operation that would divide by its norm.
class EmbeddingVector {
 public:
  explicit EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
    validate();
    norm_ = detail::l2_norm(values_);
  }

  EmbeddingVector(std::initializer_list<float> values)
      : EmbeddingVector(std::vector<float>(values)) {}

  static EmbeddingVector from_span(std::span<const float> values) {
    return EmbeddingVector(std::vector<float>(values.begin(), values.end()));
  }

  std::size_t dim() const noexcept { return values_.size(); }
  double norm() const noexcept { return norm_; }
  bool is_zero() const noexcept { return norm_ == 0.0; }
  std::span<const float> values() const noexcept { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  /// Bitwise comparison of the float payload (distinguishes -0.0 from 0.0).
  friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) noexcept {
    if (a.values_.size() != b.values_.size()) return false;
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
      if (std::bit_cast<std::uint32_t>(a.values_[i]) != std::bit_cast<std::uint32_t>(b.values_[i])) {
        return false;
      }
    }
    return true;
  }

 private:
  void validate() const {
    if (values_.empty()) {
      throw Error(ErrorCode::InvalidDimension, "embedding must have at least one component");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw Error(ErrorCode::InvalidVector, "non-finite component at index " + std::to_string(i));
      }
    }
  }

  std::vector<float> values_;
  double norm_ = 0.0;
};

inline void require_nonzero(const EmbeddingVector& v, std::string_view what = "vector") {
  if (v.is_zero()) throw Error(ErrorCode::ZeroVector, std::string(what) + " has zero norm");
}

inline void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::DimensionMismatch,
                "dim " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

/// dot(x, y) / (|x| |y|), accumulated in double. Exactly symmetric.
inline SimilarityScore cosine_similarity(const EmbeddingVector& x, const EmbeddingVector& y) {
  require_same_dim(x.dim(), y.dim());
  require_nonzero(x);
  require_nonzero(y);
  return {detail::cosine(x.values(), x.norm(), y.values(), y.norm())};
}

/// Positive-prompt score minus negative-prompt score.
constexpr SimilarityScore combine_scores(SimilarityScore positive, SimilarityScore negative) noexcept {
  return {positive.value - negative.value};
}

/// Componentwise mean (summed in double in list order, then rounded to float).
inline EmbeddingVector mean_embedding(std::span<const EmbeddingVector> vectors) {
  if (vectors.empty()) throw Error(ErrorCode::EmptyInput, "mean of an empty vector list");
  const std::size_t dim = vectors.front().dim();
  std::vector<double> sum(dim, 0.0);
  for (const auto& v : vectors) {
    require_same_dim(dim, v.dim());
    for (std::size_t i = 0; i < dim; ++i) sum[i] += static_cast<double>(v[i]);
  }
  const auto n = static_cast<double>(vectors.size());
  std::vector<float> mean(dim);
  for (std::size_t i = 0; i < dim; ++i) mean[i] = static_cast<float>(sum[i] / n);
  EmbeddingVector out(std::move(mean));
  if (out.is_zero()) throw Error(ErrorCode::ZeroVector, "mean embedding cancels to zero");
  return out;
}

}  // namespace promptscope
