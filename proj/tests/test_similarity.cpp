#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "weicom/similarity.hpp"

namespace weicom {
namespace {

Corpus tiny_corpus(const std::vector<std::vector<float>>& rows, std::vector<std::string> ids) {
  std::vector<ImageRecord> records;
  for (auto& id : ids) records.push_back({id, "c", {}});
  return Corpus::create(EmbeddingMatrix::from_rows(rows), std::move(records), TextTable{});
}

std::vector<std::string> ids_of(const RankedList& list) {
  std::vector<std::string> out;
  for (const auto& e : list) out.push_back(e.id);
  return out;
}

TEST(Similarities, DirectDotProducts) {
  auto c = tiny_corpus({{1, 0}, {0, 1}}, {"a", "b"});
  const std::vector<float> q{0.6f, 0.8f};
  auto sv = similarities(q, c);
  EXPECT_NEAR(sv.scores[0], 0.6, 1e-7);
  EXPECT_NEAR(sv.scores[1], 0.8, 1e-7);
  EXPECT_EQ(sv.eligible_count(), 2u);
}

TEST(Similarities, SelfAndOrthogonal) {
  std::mt19937_64 rng(1);
  Corpus c = oracle::random_corpus(rng, 40, 32);
  auto q = c.images().row(0);
  auto sv = similarities(q, c);
  EXPECT_NEAR(sv.scores[0], 1.0, 1e-5);
  for (double s : sv.scores) {
    EXPECT_LE(s, 1.0 + 1e-5);
    EXPECT_GE(s, -1.0 - 1e-5);
  }

  auto o = tiny_corpus({{1, 0, 0}, {0, 1, 0}}, {"x", "y"});
  const std::vector<float> e3{0, 0, 1};
  auto so = similarities(e3, o);
  EXPECT_NEAR(so.scores[0], 0.0, 1e-6);
  EXPECT_NEAR(so.scores[1], 0.0, 1e-6);
}

TEST(Similarities, DimMismatch) {
  auto c = tiny_corpus({{1, 0}}, {"a"});
  const std::vector<float> q{1, 0, 0};
  try {
    similarities(q, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
}

TEST(Similarities, MatchesNaiveDotAcrossDims) {
  std::mt19937_64 rng(9);
  for (std::size_t dim : {1u, 7u, 8u, 9u, 33u, 768u}) {
    Corpus c = oracle::random_corpus(rng, 20, dim);
    auto q = oracle::random_unit(rng, dim);
    auto sv = similarities(q, c);
    for (std::size_t i = 0; i < c.count(); ++i) EXPECT_NEAR(sv.scores[i], oracle::naive_dot(q, c.images().row(i)), 1e-12);
  }
}

TEST(Similarities, ThreadCountAndChunkingDoNotChangeScores) {
  std::mt19937_64 rng(4);
  Corpus c = oracle::random_corpus(rng, 1001, 48);
  auto q = oracle::random_unit(rng, 48);
  auto t = oracle::random_unit(rng, 48);
  const auto serial = similarities(q, c, 1);
  for (std::size_t threads : {2u, 3u, 8u, 64u}) EXPECT_EQ(similarities(q, c, threads).scores, serial.scores);

  // block-wise evaluation over row ranges gives the same bits
  for (std::size_t i = 0; i < c.count(); ++i) EXPECT_EQ(dot(q, c.images().row(i)), serial.scores[i]);

  // the fused two-query scan gives the same bits as two separate scans
  auto [a, b] = similarities_pair(q, t, c, 3);
  EXPECT_EQ(a.scores, serial.scores);
  EXPECT_EQ(b.scores, similarities(t, c, 1).scores);
}

TEST(TopK, Examples) {
  auto c = tiny_corpus({{1, 0}, {0, 1}, {1, 1}}, {"r0", "r1", "r2"});
  ScoreVector sv({0.2, 0.9, 0.5});
  auto top = top_k(sv, 2, c);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].row, 1u);
  EXPECT_EQ(top[1].row, 2u);

  auto tie = tiny_corpus({{1, 0}, {0, 1}}, {"b", "a"});
  EXPECT_EQ(ids_of(top_k(ScoreVector({0.5, 0.5}), 2, tie)), (std::vector<std::string>{"a", "b"}));

  ScoreVector ex({0.9, 0.1});
  ex.exclude(0);
  auto only = top_k(ex, 2, tie);
  ASSERT_EQ(only.size(), 1u);
  EXPECT_EQ(only[0].row, 1u);
}

TEST(TopK, ZeroKRejected) {
  auto c = tiny_corpus({{1, 0}}, {"a"});
  EXPECT_THROW(top_k(ScoreVector({1.0}), 0, c), Error);
}

TEST(TopK, LengthMismatchRejected) {
  auto c = tiny_corpus({{1, 0}}, {"a"});
  EXPECT_THROW(top_k(ScoreVector({1.0, 2.0}), 1, c), Error);
}

TEST(TopK, MatchesFullSortOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> sizes(1, 60);
  std::uniform_int_distribution<int> coarse(0, 5);  // plenty of exact ties
  std::bernoulli_distribution drop(0.15);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = sizes(rng);
    Corpus c = oracle::random_corpus(rng, n, 2);
    ScoreVector sv{std::vector<double>(n)};
    for (auto& s : sv.scores) s = coarse(rng) / 5.0;
    for (std::size_t i = 0; i < n; ++i)
      if (drop(rng)) sv.exclude(i);
    std::vector<std::string> ids;
    for (const auto& r : c.records()) ids.push_back(r.id);
    const auto expected = oracle::rank_by_sort(sv.scores, ids, sv.excluded);

    EXPECT_EQ(ids_of(top_k(sv, n, c)), expected);
    const std::size_t k = 1 + trial % n;
    std::vector<std::string> prefix(expected.begin(), expected.begin() + static_cast<std::ptrdiff_t>(std::min(k, expected.size())));
    EXPECT_EQ(ids_of(top_k(sv, k, c)), prefix);
  }
}

}  // namespace
}  // namespace weicom
