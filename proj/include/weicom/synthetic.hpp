#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "weicom/benchmark.hpp"
#include "weicom/embedding_store.hpp"
#include "weicom/error.hpp"

namespace weicom {

/// Planted-structure corpus: image = normalize(class_dir + alpha * value_dir +
/// noise_scale * noise), text for value v = normalize(value_dir_v + beta * noise).
/// Class and value directions are mutually orthonormal; noise components are
/// N(0, 1/dim) so the noise vector has unit expected squared norm.
struct SyntheticConfig {
  std::size_t classes = 4;
  std::size_t values = 3;
  std::size_t per_cell = 20;
  std::size_t dim = 32;
  std::uint64_t seed = 7;
  double alpha = 0.5;
  double beta = 0.1;
  double noise = 0.3;
  std::string attribute = "variant";
};

struct SyntheticData {
  Corpus corpus;
  std::vector<AttributeSpec> spec;
  json manifest;  // generator parameters, merged into manifest.json
};

namespace detail {

// Box-Muller normal deviates over mt19937_64.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::string indexed_name(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%zu", prefix, i);
  return buf;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes == 0 || cfg.per_cell == 0 || cfg.dim == 0)
    throw Error(ErrorCode::InvalidArgument, "classes, per-cell and dim must be positive");
  if (cfg.values < 2) throw Error(ErrorCode::InvalidArgument, "synthetic attribute needs at least two values");
  if (cfg.classes + cfg.values > cfg.dim)
    throw Error(ErrorCode::InvalidArgument, "dim must be at least classes + values for orthonormal directions");

  detail::GaussianStream rng(cfg.seed);
  const std::size_t d = cfg.dim;
  const double noise_sd = 1.0 / std::sqrt(static_cast<double>(d));

  // Gram-Schmidt over Gaussian draws; the first `classes` are class directions.
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < cfg.classes + cfg.values) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.next();
    for (const auto& u : dirs) {
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += v[i] * u[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= proj * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }

  const std::size_t count = cfg.classes * cfg.values * cfg.per_cell;
  EmbeddingMatrix images(count, d);
  std::vector<ImageRecord> records;
  records.reserve(count);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t v = 0; v < cfg.values; ++v) {
      for (std::size_t m = 0; m < cfg.per_cell; ++m, ++row) {
        std::vector<float> e(d);
        for (std::size_t i = 0; i < d; ++i)
          e[i] = static_cast<float>(dirs[c][i] + cfg.alpha * dirs[cfg.classes + v][i] + cfg.noise * noise_sd * rng.next());
        auto unit = l2_normalize(e);
        std::copy(unit.begin(), unit.end(), images.row(row).begin());
        char id[64];
        std::snprintf(id, sizeof id, "c%zu_v%zu_%04zu", c, v, m);
        records.push_back({id, detail::indexed_name("class", c), {{cfg.attribute, detail::indexed_name("value", v)}}});
      }
    }
  }

  EmbeddingMatrix text_matrix(cfg.values, d);
  std::vector<std::string> texts;
  for (std::size_t v = 0; v < cfg.values; ++v) {
    std::vector<float> e(d);
    for (std::size_t i = 0; i < d; ++i)
      e[i] = static_cast<float>(dirs[cfg.classes + v][i] + cfg.beta * noise_sd * rng.next());
    auto unit = l2_normalize(e);
    std::copy(unit.begin(), unit.end(), text_matrix.row(v).begin());
    texts.push_back(detail::indexed_name("value", v));
  }

  AttributeSpec spec{cfg.attribute, {}};
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    ClassValues entry{detail::indexed_name("class", c), {}};
    for (std::size_t v = 0; v < cfg.values; ++v) entry.values.push_back(detail::indexed_name("value", v));
    spec.entries.push_back(std::move(entry));
  }

  json manifest{{"generator",
                 {{"kind", "synthetic"},
                  {"classes", cfg.classes},
                  {"values", cfg.values},
                  {"per_cell", cfg.per_cell},
                  {"dim", cfg.dim},
                  {"seed", cfg.seed},
                  {"alpha", cfg.alpha},
                  {"beta", cfg.beta},
                  {"noise", cfg.noise},
                  {"attribute", cfg.attribute}}}};

  return {Corpus::create(std::move(images), std::move(records), TextTable(std::move(texts), std::move(text_matrix)),
                         RowPolicy::RequireUnit),
          {std::move(spec)},
          std::move(manifest)};
}

inline constexpr const char* kBenchmarkJson = "benchmark.json";

/// Corpus directory layout plus benchmark.json describing the planted attribute.
inline void write_synthetic(const SyntheticData& data, const fs::path& dir) {
  save_corpus(data.corpus, dir, data.manifest);
  detail::write_file(dir / kBenchmarkJson, to_json(data.spec).dump(2) + "\n");
}

}  // namespace weicom
