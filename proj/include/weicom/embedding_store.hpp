#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "weicom/error.hpp"

namespace weicom {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::uint32_t kWcemVersion = 1;
inline constexpr std::size_t kWcemHeaderBytes = 16;
inline constexpr double kUnitNormTolerance = 1e-4;

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Sum of squares accumulated in double.
inline double squared_norm(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * static_cast<double>(x);
  return acc;
}

inline std::vector<float> l2_normalize(std::span<const float> v) {
  if (v.empty()) throw Error(ErrorCode::InvalidArgument, "cannot normalize an empty vector");
  const double norm = std::sqrt(squared_norm(v));
  if (!(norm >= 1e-12)) throw Error(ErrorCode::ZeroVector, "vector norm below 1e-12");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
  return out;
}

/// count x dim float32 matrix, row-major.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t count, std::size_t dim) : count_(count), dim_(dim), data_(count * dim, 0.0f) {
    if (dim == 0) throw Error(ErrorCode::InvalidArgument, "embedding dim must be positive");
  }
  EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> data)
      : count_(count), dim_(dim), data_(std::move(data)) {
    if (dim == 0) throw Error(ErrorCode::InvalidArgument, "embedding dim must be positive");
    if (data_.size() != count * dim)
      throw Error(ErrorCode::LengthMismatch, "matrix data size does not equal count*dim");
  }

  static EmbeddingMatrix from_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "from_rows needs at least one row");
    EmbeddingMatrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.dim_) throw Error(ErrorCode::DimMismatch, "ragged rows", i);
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * m.dim_));
    }
    return m;
  }

  std::size_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> data() const noexcept { return data_; }

  std::span<const float> row(std::size_t i) const noexcept { return {data_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }

  /// Renormalizes every row in place; throws ZeroVector naming the row.
  void normalize_rows() {
    for (std::size_t i = 0; i < count_; ++i) {
      try {
        auto unit = l2_normalize(row(i));
        std::copy(unit.begin(), unit.end(), row(i).begin());
      } catch (const Error& e) {
        throw Error(e.code(), "row " + std::to_string(i) + " has zero norm", i);
      }
    }
  }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

namespace detail {

inline std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_u32_le(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xffu));
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for " + path.string());
  return bytes;
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::FormatError, path.string() + " line " + std::to_string(row + 1) + ": " + e.what(), row);
    }
    if (!obj.is_object())
      throw Error(ErrorCode::FormatError, path.string() + " line " + std::to_string(row + 1) + " is not an object", row);
    fn(obj, row);
    ++row;
  }
}

inline std::string require_string(const json& obj, const char* key, std::size_t row) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw Error(ErrorCode::FormatError, std::string("row ") + std::to_string(row) + ": missing string field '" + key + "'", row);
  return it->get<std::string>();
}

}  // namespace detail

inline std::string encode_wcem(const EmbeddingMatrix& m) {
  std::string out;
  out.reserve(kWcemHeaderBytes + m.data().size() * 4);
  out.append("WCEM", 4);
  detail::store_u32_le(out, kWcemVersion);
  detail::store_u32_le(out, static_cast<std::uint32_t>(m.count()));
  detail::store_u32_le(out, static_cast<std::uint32_t>(m.dim()));
  for (float x : m.data()) detail::store_u32_le(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

inline EmbeddingMatrix decode_wcem(std::string_view bytes) {
  if (bytes.size() < kWcemHeaderBytes) throw Error(ErrorCode::FormatError, "WCEM header truncated");
  if (bytes.substr(0, 4) != "WCEM") throw Error(ErrorCode::FormatError, "bad WCEM magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = detail::load_u32_le(p + 4);
  const std::uint32_t count = detail::load_u32_le(p + 8);
  const std::uint32_t dim = detail::load_u32_le(p + 12);
  if (version != kWcemVersion) throw Error(ErrorCode::FormatError, "unsupported WCEM version " + std::to_string(version));
  if (dim == 0) throw Error(ErrorCode::FormatError, "WCEM dim must be positive");
  const std::uint64_t values = static_cast<std::uint64_t>(count) * dim;
  const std::uint64_t expected = kWcemHeaderBytes + values * 4;
  if (bytes.size() < expected) throw Error(ErrorCode::FormatError, "WCEM payload truncated");
  if (bytes.size() > expected) throw Error(ErrorCode::FormatError, "WCEM file has trailing bytes");

  std::vector<float> data(values);
  for (std::uint64_t i = 0; i < values; ++i)
    data[i] = std::bit_cast<float>(detail::load_u32_le(p + kWcemHeaderBytes + i * 4));
  return EmbeddingMatrix(count, dim, std::move(data));
}

inline EmbeddingMatrix read_wcem(const fs::path& path) { return decode_wcem(detail::read_file(path)); }
inline void write_wcem(const fs::path& path, const EmbeddingMatrix& m) { detail::write_file(path, encode_wcem(m)); }

struct ImageRecord {
  std::string id;
  std::string class_name;
  std::map<std::string, std::string> attributes;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

inline json to_json(const ImageRecord& r) {
  return json{{"id", r.id}, {"class", r.class_name}, {"attributes", r.attributes}};
}

inline std::vector<ImageRecord> read_metadata_jsonl(const fs::path& path) {
  std::vector<ImageRecord> records;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t row) {
    ImageRecord r;
    r.id = detail::require_string(obj, "id", row);
    r.class_name = detail::require_string(obj, "class", row);
    if (auto it = obj.find("attributes"); it != obj.end() && !it->is_null()) {
      if (!it->is_object()) throw Error(ErrorCode::FormatError, "row " + std::to_string(row) + ": attributes must be an object", row);
      for (const auto& [name, value] : it->items()) {
        if (!value.is_string())
          throw Error(ErrorCode::FormatError, "row " + std::to_string(row) + ": attribute '" + name + "' is not a string", row);
        r.attributes[name] = value.get<std::string>();
      }
    }
    records.push_back(std::move(r));
  });
  return records;
}

inline std::vector<std::string> read_text_jsonl(const fs::path& path) {
  std::vector<std::string> texts;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t row) { texts.push_back(detail::require_string(obj, "text", row)); });
  return texts;
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump();
    out += '\n';
  }
  detail::write_file(path, out);
}

/// Finite text-embedding lookup keyed by lowercase string.
class TextTable {
 public:
  TextTable() = default;
  TextTable(std::vector<std::string> texts, EmbeddingMatrix embeddings)
      : texts_(std::move(texts)), embeddings_(std::move(embeddings)) {
    if (texts_.size() != embeddings_.count())
      throw Error(ErrorCode::CountMismatch, "text sidecar has " + std::to_string(texts_.size()) + " lines but matrix has " +
                                                std::to_string(embeddings_.count()) + " rows");
    for (std::size_t i = 0; i < texts_.size(); ++i) {
      texts_[i] = to_lower(texts_[i]);
      if (texts_[i].empty()) throw Error(ErrorCode::FormatError, "empty text at row " + std::to_string(i), i);
      if (!index_.emplace(texts_[i], i).second)
        throw Error(ErrorCode::DuplicateText, "duplicate text '" + texts_[i] + "'", i);
    }
  }

  std::size_t size() const noexcept { return texts_.size(); }
  bool empty() const noexcept { return texts_.empty(); }
  const std::vector<std::string>& texts() const noexcept { return texts_; }
  const EmbeddingMatrix& embeddings() const noexcept { return embeddings_; }

  std::optional<std::size_t> find(std::string_view text) const {
    auto it = index_.find(to_lower(text));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  friend class Corpus;
  std::vector<std::string> texts_;
  EmbeddingMatrix embeddings_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// How Corpus::create treats incoming rows: ingest renormalizes, loading a
/// persisted corpus only verifies so round-trips stay bit-exact.
enum class RowPolicy { Renormalize, RequireUnit };

/// Immutable bundle of unit-norm image embeddings, aligned metadata and the
/// text table. Safe for concurrent readers.
class Corpus {
 public:
  static Corpus create(EmbeddingMatrix images, std::vector<ImageRecord> records, TextTable texts,
                       RowPolicy policy = RowPolicy::Renormalize) {
    if (records.size() != images.count())
      throw Error(ErrorCode::CountMismatch, "metadata has " + std::to_string(records.size()) + " lines but embeddings have " +
                                                std::to_string(images.count()) + " rows");
    if (texts.size() > 0 && texts.embeddings().dim() != images.dim())
      throw Error(ErrorCode::DimMismatch, "text dim " + std::to_string(texts.embeddings().dim()) + " != image dim " +
                                              std::to_string(images.dim()));

    Corpus c;
    if (policy == RowPolicy::Renormalize) {
      images.normalize_rows();
      texts.embeddings_.normalize_rows();
    } else {
      check_unit_rows(images, "image");
      check_unit_rows(texts.embeddings(), "text");
    }

    for (std::size_t i = 0; i < records.size(); ++i) {
      auto& r = records[i];
      if (r.id.empty()) throw Error(ErrorCode::FormatError, "empty id at row " + std::to_string(i), i);
      r.class_name = to_lower(r.class_name);
      std::map<std::string, std::string> folded;
      for (const auto& [name, value] : r.attributes) folded[to_lower(name)] = to_lower(value);
      r.attributes = std::move(folded);
      if (!c.by_id_.emplace(r.id, i).second) throw Error(ErrorCode::DuplicateId, "duplicate id '" + r.id + "'", i);
    }

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
    c.id_rank_.resize(records.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) c.id_rank_[order[pos]] = static_cast<std::uint32_t>(pos);

    c.images_ = std::move(images);
    c.records_ = std::move(records);
    c.texts_ = std::move(texts);
    return c;
  }

  std::size_t count() const noexcept { return images_.count(); }
  std::size_t dim() const noexcept { return images_.dim(); }
  const EmbeddingMatrix& images() const noexcept { return images_; }
  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  const ImageRecord& record(std::size_t row) const { return records_.at(row); }
  const TextTable& texts() const noexcept { return texts_; }

  /// Position of the row's id in ascending id order; ranks ties by id in O(1).
  std::uint32_t id_rank(std::size_t row) const noexcept { return id_rank_[row]; }

  std::optional<std::size_t> find_id(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t row_of(std::string_view id) const {
    if (auto row = find_id(id)) return *row;
    throw Error(ErrorCode::UnknownId, "unknown image id '" + std::string(id) + "'");
  }

 private:
  Corpus() = default;

  static void check_unit_rows(const EmbeddingMatrix& m, const char* what) {
    for (std::size_t i = 0; i < m.count(); ++i) {
      const double norm = std::sqrt(squared_norm(m.row(i)));
      if (std::abs(norm - 1.0) > kUnitNormTolerance)
        throw Error(ErrorCode::FormatError, std::string(what) + " row " + std::to_string(i) + " is not unit norm", i);
    }
  }

  EmbeddingMatrix images_;
  std::vector<ImageRecord> records_;
  TextTable texts_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::uint32_t> id_rank_;
};

inline std::span<const float> get_text_embedding(const Corpus& corpus, std::string_view text) {
  if (auto row = corpus.texts().find(text)) return corpus.texts().embeddings().row(*row);
  throw Error(ErrorCode::UnknownText, "text '" + to_lower(text) + "' is not in the text table");
}

// Persisted layout.
inline constexpr const char* kImagesWcem = "images.wcem";
inline constexpr const char* kImagesJsonl = "images.jsonl";
inline constexpr const char* kTextsWcem = "texts.wcem";
inline constexpr const char* kTextsJsonl = "texts.jsonl";
inline constexpr const char* kManifestJson = "manifest.json";

/// Writes the corpus directory. `extra` keys are merged into manifest.json;
/// the manifest is written last so a partially written directory fails to load.
inline void save_corpus(const Corpus& corpus, const fs::path& dir, const json& extra = json::object()) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directory " + dir.string() + ": " + ec.message());

  write_wcem(dir / kImagesWcem, corpus.images());
  std::vector<json> meta;
  meta.reserve(corpus.count());
  for (const auto& r : corpus.records()) meta.push_back(to_json(r));
  write_jsonl(dir / kImagesJsonl, meta);

  const auto& texts = corpus.texts();
  EmbeddingMatrix text_matrix = texts.size() > 0 ? texts.embeddings() : EmbeddingMatrix(0, corpus.dim());
  write_wcem(dir / kTextsWcem, text_matrix);
  std::vector<json> text_rows;
  for (const auto& t : texts.texts()) text_rows.push_back(json{{"text", t}});
  write_jsonl(dir / kTextsJsonl, text_rows);

  json manifest = extra.is_object() ? extra : json::object();
  manifest["version"] = 1;
  manifest["dim"] = corpus.dim();
  manifest["count"] = corpus.count();
  detail::write_file(dir / kManifestJson, manifest.dump(2) + "\n");
}

inline json read_manifest(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(detail::read_file(dir / kManifestJson));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::FormatError, "manifest.json: " + std::string(e.what()));
  }
  if (!manifest.is_object() || manifest.value("version", 0) != 1)
    throw Error(ErrorCode::FormatError, "manifest.json missing or unsupported version");
  return manifest;
}

inline Corpus load_corpus(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  auto images = read_wcem(dir / kImagesWcem);
  if (manifest.value("dim", std::size_t{0}) != images.dim() || manifest.value("count", std::size_t{0}) != images.count())
    throw Error(ErrorCode::FormatError, "manifest dim/count disagree with images.wcem");
  auto records = read_metadata_jsonl(dir / kImagesJsonl);
  TextTable texts(read_text_jsonl(dir / kTextsJsonl), read_wcem(dir / kTextsWcem));
  return Corpus::create(std::move(images), std::move(records), std::move(texts), RowPolicy::RequireUnit);
}

struct IngestPaths {
  fs::path embeddings;     // WCEM image matrix
  fs::path metadata;       // JSONL, one ImageRecord per row
  fs::path texts;          // WCEM text matrix
  fs::path text_metadata;  // JSONL {"text": ...} per row
};

/// Validates and renormalizes the inputs, persists them to `out_dir`, and
/// returns the corpus as it will be read back.
inline Corpus ingest(const IngestPaths& in, const fs::path& out_dir) {
  auto images = read_wcem(in.embeddings);
  auto records = read_metadata_jsonl(in.metadata);
  TextTable texts(read_text_jsonl(in.text_metadata), read_wcem(in.texts));
  Corpus corpus = Corpus::create(std::move(images), std::move(records), std::move(texts), RowPolicy::Renormalize);
  save_corpus(corpus, out_dir);
  return corpus;
}

}  // namespace weicom
