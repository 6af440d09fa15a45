#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "weicom/embedding_store.hpp"
#include "weicom/error.hpp"
#include "weicom/similarity.hpp"

namespace weicom {

inline constexpr double kSigmaFloor = 1e-12;

/// Standard normal CDF, 0.5 * erfc(-z / sqrt(2)).
inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

/// Scores mapped into [0, 1]; excluded rows hold 0 and stay excluded.
struct NormalizedScores {
  std::vector<double> scores;
  std::vector<std::uint8_t> excluded;

  std::size_t size() const noexcept { return scores.size(); }
};

/// Standardizes the eligible scores with their mean and population standard
/// deviation, then applies the standard normal CDF.
inline NormalizedScores normalize_scores(const ScoreVector& sv) {
  const std::size_t n = sv.size();
  const std::size_t eligible = sv.eligible_count();
  if (eligible < 2)
    throw Error(ErrorCode::TooFewCandidates, "normalization needs at least 2 eligible candidates, got " +
                                                 std::to_string(eligible));

  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (!sv.is_excluded(i)) sum += sv.scores[i];
  const double mean = sum / static_cast<double>(eligible);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sv.is_excluded(i)) continue;
    const double d = sv.scores[i] - mean;
    ss += d * d;
  }
  const double sigma = std::sqrt(ss / static_cast<double>(eligible));

  NormalizedScores out{std::vector<double>(n, 0.0), sv.excluded};
  for (std::size_t i = 0; i < n; ++i) {
    if (sv.is_excluded(i)) continue;
    out.scores[i] = sigma < kSigmaFloor ? 0.5 : std_normal_cdf((sv.scores[i] - mean) / sigma);
  }
  return out;
}

/// Mean of the two raw score vectors.
inline ScoreVector average_baseline(const ScoreVector& sg, const ScoreVector& sf) {
  if (sg.size() != sf.size()) throw Error(ErrorCode::LengthMismatch, "score vectors differ in length");
  if (sg.excluded != sf.excluded) throw Error(ErrorCode::LengthMismatch, "score vectors differ in exclusion sets");
  ScoreVector out(std::vector<double>(sg.size()));
  out.excluded = sg.excluded;
  for (std::size_t i = 0; i < sg.size(); ++i) out.scores[i] = (sg.scores[i] + sf.scores[i]) / 2.0;
  return out;
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error(ErrorCode::LambdaOutOfRange, "lambda must lie in [0, 1], got " + std::to_string(lambda));
}

/// lambda * text + (1 - lambda) * image over normalized scores.
inline ScoreVector weicom_fuse(const NormalizedScores& sg_norm, const NormalizedScores& sf_norm, double lambda) {
  check_lambda(lambda);
  if (sg_norm.size() != sf_norm.size()) throw Error(ErrorCode::LengthMismatch, "normalized vectors differ in length");
  ScoreVector out(std::vector<double>(sg_norm.size()));
  for (std::size_t i = 0; i < sg_norm.size(); ++i) {
    out.scores[i] = lambda * sg_norm.scores[i] + (1.0 - lambda) * sf_norm.scores[i];
    if (sg_norm.excluded[i] || sf_norm.excluded[i]) out.excluded[i] = 1;
  }
  return out;
}

enum class MethodKind { TextOnly, ImageOnly, Average, WeiCom };

struct Method {
  MethodKind kind = MethodKind::WeiCom;
  double lambda = 0.5;

  static Method text_only() { return {MethodKind::TextOnly, 1.0}; }
  static Method image_only() { return {MethodKind::ImageOnly, 0.0}; }
  static Method average() { return {MethodKind::Average, 0.5}; }
  static Method weicom(double lambda) {
    check_lambda(lambda);
    return {MethodKind::WeiCom, lambda};
  }

  bool needs_image() const noexcept { return kind != MethodKind::TextOnly; }
  bool needs_text() const noexcept { return kind != MethodKind::ImageOnly; }

  friend bool operator==(const Method&, const Method&) = default;
};

inline std::string_view method_name(MethodKind kind) {
  switch (kind) {
    case MethodKind::TextOnly: return "text_only";
    case MethodKind::ImageOnly: return "image_only";
    case MethodKind::Average: return "average";
    case MethodKind::WeiCom: return "weicom";
  }
  return "unknown";
}

inline MethodKind parse_method_kind(std::string_view name) {
  const std::string lower = to_lower(name);
  if (lower == "text_only") return MethodKind::TextOnly;
  if (lower == "image_only") return MethodKind::ImageOnly;
  if (lower == "average") return MethodKind::Average;
  if (lower == "weicom") return MethodKind::WeiCom;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

/// Row label used in rendered report tables.
inline std::string method_label(const Method& m) {
  switch (m.kind) {
    case MethodKind::TextOnly: return "Text";
    case MethodKind::ImageOnly: return "Image";
    case MethodKind::Average: return "Text & Image";
    case MethodKind::WeiCom: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "WeiCom (lambda=%.2f)", m.lambda);
      return buf;
    }
  }
  return "unknown";
}

/// Image part and text part of a composed query. An embedding may be left
/// empty when the method does not use it.
struct ComposedQuery {
  std::vector<float> image_embedding;
  std::vector<float> text_embedding;
  std::optional<std::string> query_image_id;
};

/// Builds a query from a corpus image and a text-table entry.
inline ComposedQuery make_query(const Corpus& corpus, std::string_view image_id, std::string_view text) {
  ComposedQuery q;
  const auto row = corpus.images().row(corpus.row_of(image_id));
  q.image_embedding.assign(row.begin(), row.end());
  const auto t = get_text_embedding(corpus, text);
  q.text_embedding.assign(t.begin(), t.end());
  q.query_image_id = std::string(image_id);
  return q;
}

/// Final per-row scores a method ranks by, with the exclusion mask applied.
/// The query image row is excluded before normalization statistics.
inline ScoreVector fused_scores(const ComposedQuery& q, const Corpus& corpus, const Method& method,
                                bool exclude_query_image, std::size_t threads = default_thread_count()) {
  if (method.kind == MethodKind::WeiCom) check_lambda(method.lambda);
  if (method.needs_image() && q.image_embedding.empty())
    throw Error(ErrorCode::InvalidArgument, std::string(method_name(method.kind)) + " needs an image embedding");
  if (method.needs_text() && q.text_embedding.empty())
    throw Error(ErrorCode::InvalidArgument, std::string(method_name(method.kind)) + " needs a text embedding");

  std::optional<std::size_t> excluded_row;
  if (exclude_query_image && q.query_image_id) excluded_row = corpus.row_of(*q.query_image_id);
  auto apply_exclusion = [&](ScoreVector& sv) {
    if (excluded_row) sv.exclude(*excluded_row);
  };

  if (method.kind == MethodKind::ImageOnly) {
    auto sf = similarities(q.image_embedding, corpus, threads);
    apply_exclusion(sf);
    return sf;
  }
  if (method.kind == MethodKind::TextOnly) {
    auto sg = similarities(q.text_embedding, corpus, threads);
    apply_exclusion(sg);
    return sg;
  }

  auto [sf, sg] = similarities_pair(q.image_embedding, q.text_embedding, corpus, threads);
  apply_exclusion(sf);
  apply_exclusion(sg);
  if (method.kind == MethodKind::Average) return average_baseline(sg, sf);
  return weicom_fuse(normalize_scores(sg), normalize_scores(sf), method.lambda);
}

inline RankedList retrieve(const ComposedQuery& q, const Corpus& corpus, const Method& method, std::size_t k,
                           bool exclude_query_image, std::size_t threads = default_thread_count()) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  return top_k(fused_scores(q, corpus, method, exclude_query_image, threads), k, corpus);
}

}  // namespace weicom
