#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "promptscope/embedding.hpp"
#include "promptscope/store.hpp"

namespace promptscope::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(PROMPTSCOPE_FIXTURES) / name;
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("promptscope-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

struct CommandResult {
  int exit_code;
  std::string out;
};

/// Runs a shell command, capturing stdout (stderr passes through).
inline CommandResult run(const std::string& command) {
  CommandResult result{-1, {}};
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) return result;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) result.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

// ---------------------------------------------------------------------------
// Random data

inline std::vector<float> random_values(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> v(dim);
  for (;;) {
    bool nonzero = false;
    for (auto& x : v) {
      x = static_cast<float>(normal(rng));
      nonzero |= x != 0.0f;
    }
    if (nonzero) return v;
  }
}

inline EmbeddingVector random_vector(std::mt19937_64& rng, std::size_t dim) {
  return EmbeddingVector(random_values(rng, dim));
}

inline std::vector<ImageRecord> random_records(std::mt19937_64& rng, std::size_t count, std::size_t dim,
                                               const std::string& prefix = "img-") {
  std::vector<ImageRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({prefix + std::to_string(i), "file:///data/" + std::to_string(i) + ".jpg",
                   random_vector(rng, dim), {}});
  }
  return out;
}

inline Store random_store(std::mt19937_64& rng, std::size_t count, std::size_t dim) {
  Store s(dim);
  s.ingest(random_records(rng, count, dim));
  return s;
}

// ---------------------------------------------------------------------------
// Independent oracles. These deliberately avoid the library's kernels and
// recompute everything from raw float payloads.

inline double oracle_cosine(const std::vector<float>& x, const std::vector<float>& y) {
  double dot = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  for (std::size_t i = 0; i < x.size(); ++i) xx += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  for (std::size_t i = 0; i < y.size(); ++i) yy += static_cast<double>(y[i]) * static_cast<double>(y[i]);
  return dot / (std::sqrt(xx) * std::sqrt(yy));
}

inline long double extended_cosine(std::span<const float> x, std::span<const float> y) {
  long double dot = 0.0L, xx = 0.0L, yy = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double a = x[i], b = y[i];
    dot += a * b;
    xx += a * a;
    yy += b * b;
  }
  return dot / (std::sqrt(xx) * std::sqrt(yy));
}

inline std::vector<float> oracle_mean(const std::vector<std::vector<float>>& vs) {
  std::vector<double> sum(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += static_cast<double>(v[i]);
  }
  std::vector<float> out(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out[i] = static_cast<float>(sum[i] / static_cast<double>(vs.size()));
  return out;
}

inline std::vector<float> raw(const EmbeddingVector& v) { return {v.values().begin(), v.values().end()}; }

/// Combined score per record, by the textbook recipe: aggregate each side,
/// take cosines, subtract; an absent side counts 0.
inline std::vector<double> oracle_scores(const std::vector<std::vector<float>>& records,
                                         const std::vector<std::vector<float>>& positives,
                                         const std::vector<std::vector<float>>& negatives, bool max_mode) {
  auto side = [&](const std::vector<float>& x, const std::vector<std::vector<float>>& prompts) {
    if (prompts.empty()) return 0.0;
    if (!max_mode) return oracle_cosine(x, oracle_mean(prompts));
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& p : prompts) best = std::max(best, oracle_cosine(x, p));
    return best;
  };
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& x : records) out.push_back(side(x, positives) - side(x, negatives));
  return out;
}

struct OracleHit {
  std::size_t index;
  double score;
};

/// Full stable sort by (-score, insertion index), truncated to k.
inline std::vector<OracleHit> oracle_top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<OracleHit> all;
  for (std::size_t i = 0; i < scores.size(); ++i) all.push_back({i, scores[i]});
  std::stable_sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) { return a.score > b.score; });
  all.resize(std::min(k, all.size()));
  return all;
}

/// Per-class F1 by direct counting over (predicted, truth) pairs.
inline double oracle_macro_f1(const std::vector<std::pair<std::string, std::string>>& pred_truth,
                              const std::vector<std::string>& labels) {
  double sum = 0.0;
  for (const auto& c : labels) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [p, t] : pred_truth) {
      if (p == c && t == c) ++tp;
      if (p == c && t != c) ++fp;
      if (p != c && t == c) ++fn;
    }
    sum += (2 * tp + fp + fn) == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return sum / static_cast<double>(labels.size());
}

}  // namespace promptscope::testing
