#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <algorithm>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "weicom/benchmark.hpp"
#include "weicom/embedding_store.hpp"

namespace weicom::fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("weicom_test_" + std::to_string(stamp) + "_" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

struct ValueCount {
  std::string value;
  std::size_t count;
};

struct ClassFixture {
  std::string class_name;
  std::string attribute;
  std::vector<ValueCount> values;
};

/// Per-class color and shape value counts of the PatternNet attribute
/// benchmark (road omitted: its two values cover every road image).
inline std::vector<ClassFixture> patternnet_color_shape() {
  return {
      {"airplane", "color", {{"white", 672}, {"purple", 53}}},
      {"nursing home", "color", {{"white", 85}, {"gray", 383}}},
      {"crosswalk", "color", {{"white", 412}, {"yellow", 388}}},
      {"tennis court", "color", {{"blue", 339}, {"brown", 2}, {"gray", 50}, {"green", 211}, {"red", 24}}},
      {"swimming pool", "shape", {{"rectangular", 261}, {"oval", 52}, {"kidney-shaped", 247}}},
      {"river", "shape", {{"curved", 177}, {"straight", 623}}},
  };
}

/// Annotation-only corpus realizing the given value counts; embeddings are
/// random unit vectors of a small dimension. `extra_distractors` images of an
/// unrelated class are appended.
inline Corpus annotated_corpus(const std::vector<ClassFixture>& classes, std::size_t dim = 4,
                               std::size_t extra_distractors = 0, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<float>> rows;
  std::vector<ImageRecord> records;
  std::set<std::string> texts;
  std::size_t next = 0;
  for (const auto& c : classes) {
    for (const auto& v : c.values) {
      texts.insert(v.value);
      for (std::size_t i = 0; i < v.count; ++i) {
        rows.push_back(oracle::random_unit(rng, dim));
        records.push_back({"img_" + std::to_string(next++), c.class_name, {{c.attribute, v.value}}});
      }
    }
  }
  for (std::size_t i = 0; i < extra_distractors; ++i) {
    rows.push_back(oracle::random_unit(rng, dim));
    records.push_back({"img_" + std::to_string(next++), "parking lot", {}});
  }
  std::vector<std::vector<float>> text_rows;
  std::vector<std::string> text_names(texts.begin(), texts.end());
  for (std::size_t i = 0; i < text_names.size(); ++i) text_rows.push_back(oracle::random_unit(rng, dim));
  return Corpus::create(EmbeddingMatrix::from_rows(rows), std::move(records),
                        TextTable(std::move(text_names), EmbeddingMatrix::from_rows(text_rows)));
}

inline std::vector<AttributeSpec> spec_for(const std::vector<ClassFixture>& classes) {
  std::vector<AttributeSpec> specs;
  for (const auto& c : classes) {
    auto it = std::find_if(specs.begin(), specs.end(), [&](const AttributeSpec& s) { return s.attribute == c.attribute; });
    if (it == specs.end()) {
      specs.push_back({c.attribute, {}});
      it = std::prev(specs.end());
    }
    ClassValues entry{c.class_name, {}};
    for (const auto& v : c.values) entry.values.push_back(v.value);
    it->entries.push_back(std::move(entry));
  }
  return specs;
}

/// Query count for a target value: all class images holding another value.
inline std::map<std::string, std::size_t> count_queries(const BenchmarkSuite& suite, const std::string& class_name) {
  std::map<std::string, std::size_t> counts;
  for (const auto& q : suite)
    if (q.class_name == class_name) ++counts[q.query_text];
  return counts;
}

}  // namespace weicom::fixture
