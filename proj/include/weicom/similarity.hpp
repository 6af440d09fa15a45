#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#if defined(__AVX2__) || defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "weicom/embedding_store.hpp"
#include "weicom/error.hpp"
#include "weicom/parallel.hpp"

namespace weicom {

/// Per-candidate scores plus the mask of rows that may not be ranked.
struct ScoreVector {
  std::vector<double> scores;
  std::vector<std::uint8_t> excluded;

  ScoreVector() = default;
  explicit ScoreVector(std::vector<double> s) : scores(std::move(s)), excluded(scores.size(), 0) {}

  std::size_t size() const noexcept { return scores.size(); }
  bool is_excluded(std::size_t i) const noexcept { return excluded[i] != 0; }
  void exclude(std::size_t i) { excluded.at(i) = 1; }
  std::size_t eligible_count() const noexcept {
    return scores.size() - static_cast<std::size_t>(std::count(excluded.begin(), excluded.end(), std::uint8_t{1}));
  }
};

struct RankedEntry {
  std::size_t row;
  std::string id;
  double score;

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

using RankedList = std::vector<RankedEntry>;

namespace detail {

inline constexpr std::size_t kDotLanes = 8;

// Fixed lane assignment and fixed reduction tree: the result depends only on
// the two inputs, never on how rows are split across threads. Every lane
// update is a fused multiply-add on all code paths.
inline double reduce_lanes(const double (&lanes)[kDotLanes]) {
  return ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
}

// Adds row[i..i+8) * q[i..i+8) into the eight lanes, for every full block.
// Returns the index of the first unprocessed element.
inline std::size_t accumulate_blocks(const float* row, const float* q, std::size_t n, double (&lanes)[kDotLanes]) {
  std::size_t i = 0;
#if defined(__AVX512F__)
  __m512d acc = _mm512_setzero_pd();
  for (; i + kDotLanes <= n; i += kDotLanes)
    acc = _mm512_fmadd_pd(_mm512_cvtps_pd(_mm256_loadu_ps(row + i)), _mm512_cvtps_pd(_mm256_loadu_ps(q + i)), acc);
  _mm512_storeu_pd(lanes, acc);
#elif defined(__AVX2__) && defined(__FMA__)
  __m256d lo = _mm256_setzero_pd(), hi = _mm256_setzero_pd();
  for (; i + kDotLanes <= n; i += kDotLanes) {
    lo = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm_loadu_ps(row + i)), _mm256_cvtps_pd(_mm_loadu_ps(q + i)), lo);
    hi = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm_loadu_ps(row + i + 4)), _mm256_cvtps_pd(_mm_loadu_ps(q + i + 4)), hi);
  }
  _mm256_storeu_pd(lanes, lo);
  _mm256_storeu_pd(lanes + 4, hi);
#else
  for (std::size_t j = 0; j < kDotLanes; ++j) lanes[j] = 0.0;
  for (; i + kDotLanes <= n; i += kDotLanes)
    for (std::size_t j = 0; j < kDotLanes; ++j)
      lanes[j] = std::fma(static_cast<double>(row[i + j]), static_cast<double>(q[i + j]), lanes[j]);
#endif
  return i;
}

inline double finish_dot(const float* row, const float* q, std::size_t i, std::size_t n, const double (&lanes)[kDotLanes]) {
  double tail = 0.0;
  for (; i < n; ++i) tail = std::fma(static_cast<double>(row[i]), static_cast<double>(q[i]), tail);
  return reduce_lanes(lanes) + tail;
}

// Four independent (row, query) dot products in lockstep, each computed
// exactly as dot() computes it.
inline void dot4(const float* const (&rows)[4], const float* const (&qs)[4], std::size_t n, double (&out)[4]) {
  double lanes[4][kDotLanes];
  std::size_t i = 0;
#if defined(__AVX512F__)
  __m512d acc[4] = {_mm512_setzero_pd(), _mm512_setzero_pd(), _mm512_setzero_pd(), _mm512_setzero_pd()};
  for (; i + kDotLanes <= n; i += kDotLanes)
    for (int m = 0; m < 4; ++m)
      acc[m] = _mm512_fmadd_pd(_mm512_cvtps_pd(_mm256_loadu_ps(rows[m] + i)), _mm512_cvtps_pd(_mm256_loadu_ps(qs[m] + i)),
                               acc[m]);
  for (int m = 0; m < 4; ++m) _mm512_storeu_pd(lanes[m], acc[m]);
#elif defined(__AVX2__) && defined(__FMA__)
  __m256d lo[4], hi[4];
  for (int m = 0; m < 4; ++m) lo[m] = hi[m] = _mm256_setzero_pd();
  for (; i + kDotLanes <= n; i += kDotLanes)
    for (int m = 0; m < 4; ++m) {
      lo[m] = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm_loadu_ps(rows[m] + i)), _mm256_cvtps_pd(_mm_loadu_ps(qs[m] + i)), lo[m]);
      hi[m] = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm_loadu_ps(rows[m] + i + 4)), _mm256_cvtps_pd(_mm_loadu_ps(qs[m] + i + 4)),
                              hi[m]);
    }
  for (int m = 0; m < 4; ++m) {
    _mm256_storeu_pd(lanes[m], lo[m]);
    _mm256_storeu_pd(lanes[m] + 4, hi[m]);
  }
#else
  for (int m = 0; m < 4; ++m) i = accumulate_blocks(rows[m], qs[m], n, lanes[m]);
#endif
  for (int m = 0; m < 4; ++m) out[m] = finish_dot(rows[m], qs[m], i, n, lanes[m]);
}

}  // namespace detail

inline double dot(std::span<const float> a, std::span<const float> b) {
  double lanes[detail::kDotLanes];
  const std::size_t i = detail::accumulate_blocks(a.data(), b.data(), a.size(), lanes);
  return detail::finish_dot(a.data(), b.data(), i, a.size(), lanes);
}

/// Two dot products over the same row; each result is bit-identical to
/// dot(row, qa) and dot(row, qb).
inline std::pair<double, double> dot2(std::span<const float> row, std::span<const float> qa, std::span<const float> qb) {
  return {dot(row, qa), dot(row, qb)};
}

inline void check_query_dim(std::span<const float> query, const Corpus& corpus) {
  if (query.size() != corpus.dim())
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.size()) + " != corpus dim " +
                                            std::to_string(corpus.dim()));
}

/// Raw cosine scores of a unit query against every corpus row.
inline ScoreVector similarities(std::span<const float> query, const Corpus& corpus,
                                std::size_t threads = default_thread_count()) {
  check_query_dim(query, corpus);
  std::vector<double> scores(corpus.count());
  const auto& images = corpus.images();
  parallel_for(corpus.count(), threads, [&](std::size_t begin, std::size_t end) {
    std::size_t i = begin;
    const float* q = query.data();
    for (; i + 4 <= end; i += 4) {
      double out[4];
      detail::dot4({images.row(i).data(), images.row(i + 1).data(), images.row(i + 2).data(), images.row(i + 3).data()},
                   {q, q, q, q}, query.size(), out);
      std::copy(out, out + 4, scores.begin() + static_cast<std::ptrdiff_t>(i));
    }
    for (; i < end; ++i) scores[i] = dot(query, images.row(i));
  });
  return ScoreVector(std::move(scores));
}

/// Image-query and text-query scores from a single scan of the corpus.
inline std::pair<ScoreVector, ScoreVector> similarities_pair(std::span<const float> image_query,
                                                             std::span<const float> text_query, const Corpus& corpus,
                                                             std::size_t threads = default_thread_count()) {
  check_query_dim(image_query, corpus);
  check_query_dim(text_query, corpus);
  std::vector<double> image_scores(corpus.count());
  std::vector<double> text_scores(corpus.count());
  const auto& images = corpus.images();
  parallel_for(corpus.count(), threads, [&](std::size_t begin, std::size_t end) {
    std::size_t i = begin;
    const float* qa = image_query.data();
    const float* qb = text_query.data();
    for (; i + 2 <= end; i += 2) {
      const float* r0 = images.row(i).data();
      const float* r1 = images.row(i + 1).data();
      double out[4];
      detail::dot4({r0, r0, r1, r1}, {qa, qb, qa, qb}, image_query.size(), out);
      image_scores[i] = out[0];
      text_scores[i] = out[1];
      image_scores[i + 1] = out[2];
      text_scores[i + 1] = out[3];
    }
    for (; i < end; ++i) std::tie(image_scores[i], text_scores[i]) = dot2(images.row(i), image_query, text_query);
  });
  return {ScoreVector(std::move(image_scores)), ScoreVector(std::move(text_scores))};
}

/// Row indices of the best `k` eligible rows: descending score, ties broken
/// by ascending image id.
inline std::vector<std::size_t> ranked_rows(const ScoreVector& sv, std::size_t k, const Corpus& corpus) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (sv.size() != corpus.count() || sv.excluded.size() != sv.size())
    throw Error(ErrorCode::LengthMismatch, "score vector length does not match corpus");

  std::vector<std::size_t> rows;
  rows.reserve(sv.size());
  for (std::size_t i = 0; i < sv.size(); ++i)
    if (!sv.is_excluded(i)) rows.push_back(i);

  auto before = [&](std::size_t a, std::size_t b) {
    if (sv.scores[a] != sv.scores[b]) return sv.scores[a] > sv.scores[b];
    return corpus.id_rank(a) < corpus.id_rank(b);
  };
  const std::size_t take = std::min(k, rows.size());
  if (take < rows.size()) {
    std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end(), before);
    rows.resize(take);
  } else {
    std::sort(rows.begin(), rows.end(), before);
  }
  return rows;
}

inline RankedList top_k(const ScoreVector& sv, std::size_t k, const Corpus& corpus) {
  const auto rows = ranked_rows(sv, k, corpus);
  RankedList out;
  out.reserve(rows.size());
  for (std::size_t row : rows) out.push_back({row, corpus.record(row).id, sv.scores[row]});
  return out;
}

}  // namespace weicom
