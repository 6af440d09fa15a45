#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "weicom/embedding_store.hpp"

namespace weicom {
namespace {

using fixture::TempDir;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected weicom::Error";
  return ErrorCode::InvalidArgument;
}

TEST(L2Normalize, ThreeFourFive) {
  const std::vector<float> v{3.0f, 4.0f};
  auto u = l2_normalize(v);
  EXPECT_FLOAT_EQ(u[0], 0.6f);
  EXPECT_FLOAT_EQ(u[1], 0.8f);
}

TEST(L2Normalize, AlreadyUnit) {
  const std::vector<float> v{1.0f, 0.0f, 0.0f};
  EXPECT_EQ(l2_normalize(v), v);
}

TEST(L2Normalize, ZeroVectorRejected) {
  const std::vector<float> v{0.0f, 0.0f};
  EXPECT_EQ(code_of([&] { l2_normalize(v); }), ErrorCode::ZeroVector);
}

TEST(L2Normalize, ResultHasUnitNorm) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-100.0f, 100.0f);
  std::uniform_int_distribution<int> dims(1, 300);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> v(static_cast<std::size_t>(dims(rng)));
    for (auto& x : v) x = u(rng);
    auto out = l2_normalize(v);
    EXPECT_NEAR(std::sqrt(squared_norm(out)), 1.0, 1e-6);
  }
}

TEST(Wcem, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  for (std::size_t count : {0u, 1u, 7u}) {
    for (std::size_t dim : {1u, 5u, 32u}) {
      std::vector<float> data(count * dim);
      for (auto& x : data) x = n(rng);
      EmbeddingMatrix m(count, dim, data);
      EXPECT_EQ(decode_wcem(encode_wcem(m)), m);
    }
  }
}

TEST(Wcem, HeaderLayout) {
  EmbeddingMatrix m(1, 2, {1.0f, -2.0f});
  const std::string bytes = encode_wcem(m);
  ASSERT_EQ(bytes.size(), 16u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "WCEM");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);  // count
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2); // dim
  // 1.0f == 0x3f800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[19]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 0x80);
}

TEST(Wcem, MalformedInputs) {
  const std::string good = encode_wcem(EmbeddingMatrix(2, 3, std::vector<float>(6, 0.5f)));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::string bad_version = good;
  bad_version[4] = 2;
  std::string zero_dim = good;
  zero_dim[12] = 0;
  EXPECT_EQ(code_of([&] { decode_wcem(bad_magic); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_wcem(bad_version); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_wcem(zero_dim); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_wcem(good.substr(0, good.size() - 1)); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_wcem(good.substr(0, 10)); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { decode_wcem(good + "x"); }), ErrorCode::FormatError);
}

// Files for a small corpus: rows, metadata lines, texts.
struct IngestFixture {
  TempDir dir;
  IngestPaths paths{dir / "emb.wcem", dir / "meta.jsonl", dir / "texts.wcem", dir / "texts.jsonl"};

  void write(const std::vector<std::vector<float>>& rows, const std::vector<json>& meta,
             const std::vector<std::vector<float>>& text_rows, const std::vector<std::string>& texts) {
    write_wcem(paths.embeddings, EmbeddingMatrix::from_rows(rows));
    write_jsonl(paths.metadata, meta);
    write_wcem(paths.texts, text_rows.empty() ? EmbeddingMatrix(0, rows.front().size())
                                              : EmbeddingMatrix::from_rows(text_rows));
    std::vector<json> t;
    for (const auto& s : texts) t.push_back(json{{"text", s}});
    write_jsonl(paths.text_metadata, t);
  }
};

std::vector<json> three_records() {
  return {json{{"id", "img_001"}, {"class", "Swimming Pool"}, {"attributes", {{"Shape", "Rectangular"}}}},
          json{{"id", "img_002"}, {"class", "swimming pool"}, {"attributes", {{"shape", "oval"}}}},
          json{{"id", "img_003"}, {"class", "river"}, {"attributes", json::object()}}};
}

TEST(Ingest, ThreeRowsPersistAndReload) {
  IngestFixture f;
  f.write({{3, 4, 0}, {0, 2, 0}, {1, 1, 1}}, three_records(), {{0, 0, 5}}, {"Rectangular"});
  const auto out = f.dir / "corpus";
  Corpus c = ingest(f.paths, out);
  EXPECT_EQ(c.count(), 3u);
  EXPECT_EQ(c.dim(), 3u);
  for (std::size_t i = 0; i < c.count(); ++i) EXPECT_NEAR(std::sqrt(squared_norm(c.images().row(i))), 1.0, 1e-4);
  EXPECT_FLOAT_EQ(c.images().row(0)[0], 0.6f);

  // case folding of class, attribute names and values, and text keys
  EXPECT_EQ(c.record(0).class_name, "swimming pool");
  EXPECT_EQ(c.record(0).attributes.at("shape"), "rectangular");
  EXPECT_EQ(c.texts().texts().front(), "rectangular");

  for (const char* name : {kImagesWcem, kImagesJsonl, kTextsWcem, kTextsJsonl, kManifestJson})
    EXPECT_TRUE(fs::exists(out / name)) << name;
  const json manifest = read_manifest(out);
  EXPECT_EQ(manifest["version"], 1);
  EXPECT_EQ(manifest["dim"], 3);
  EXPECT_EQ(manifest["count"], 3);

  Corpus loaded = load_corpus(out);
  EXPECT_EQ(loaded.images(), c.images());
  EXPECT_EQ(loaded.records(), c.records());
  EXPECT_EQ(loaded.texts().texts(), c.texts().texts());
  EXPECT_EQ(loaded.texts().embeddings(), c.texts().embeddings());
}

TEST(Ingest, CountMismatch) {
  IngestFixture f;
  auto meta = three_records();
  meta.pop_back();
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, meta, {}, {});
  EXPECT_EQ(code_of([&] { ingest(f.paths, f.dir / "out"); }), ErrorCode::CountMismatch);
}

TEST(Ingest, DuplicateId) {
  IngestFixture f;
  auto meta = three_records();
  meta[2]["id"] = "img_001";
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, meta, {}, {});
  try {
    ingest(f.paths, f.dir / "out");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
    EXPECT_EQ(e.row(), 2u);
  }
}

TEST(Ingest, ZeroVectorNamesRow) {
  IngestFixture f;
  f.write({{1, 0, 0}, {0, 0, 0}, {0, 0, 1}}, three_records(), {}, {});
  try {
    ingest(f.paths, f.dir / "out");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
    EXPECT_EQ(e.row(), 1u);
  }
}

TEST(Ingest, DimMismatchBetweenImagesAndTexts) {
  IngestFixture f;
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, three_records(), {{1, 0}}, {"oval"});
  EXPECT_EQ(code_of([&] { ingest(f.paths, f.dir / "out"); }), ErrorCode::DimMismatch);
}

TEST(Ingest, DuplicateTextAfterCaseFolding) {
  IngestFixture f;
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, three_records(), {{1, 0, 0}, {0, 1, 0}}, {"Oval", "oval"});
  EXPECT_EQ(code_of([&] { ingest(f.paths, f.dir / "out"); }), ErrorCode::DuplicateText);
}

TEST(Ingest, MalformedMetadataLine) {
  IngestFixture f;
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, three_records(), {}, {});
  detail::write_file(f.paths.metadata, "{\"id\":\"a\",\"class\":\"x\"}\nnot json\n{\"id\":\"c\",\"class\":\"x\"}\n");
  EXPECT_EQ(code_of([&] { ingest(f.paths, f.dir / "out"); }), ErrorCode::FormatError);
  detail::write_file(f.paths.metadata, "{\"id\":\"a\"}\n{\"id\":\"b\",\"class\":\"x\"}\n{\"id\":\"c\",\"class\":\"x\"}\n");
  EXPECT_EQ(code_of([&] { ingest(f.paths, f.dir / "out"); }), ErrorCode::FormatError);
}

TEST(Ingest, MissingFileIsIoError) {
  TempDir dir;
  IngestPaths p{dir / "nope.wcem", dir / "m.jsonl", dir / "t.wcem", dir / "t.jsonl"};
  EXPECT_EQ(code_of([&] { ingest(p, dir / "out"); }), ErrorCode::IoError);
}

TEST(Ingest, RowsStayAlignedWithRecordsUnderShuffle) {
  // Row i encodes its id as a one-hot direction; shuffle file order and check
  // every record still carries its own vector.
  const std::size_t n = 24;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(5);
  std::shuffle(order.begin(), order.end(), rng);

  IngestFixture f;
  std::vector<std::vector<float>> rows;
  std::vector<json> meta;
  for (std::size_t k : order) {
    std::vector<float> v(n, 0.0f);
    v[k] = 2.0f;
    rows.push_back(v);
    meta.push_back(json{{"id", "id_" + std::to_string(k)}, {"class", "c"}});
  }
  f.write(rows, meta, {}, {});
  ingest(f.paths, f.dir / "out");
  Corpus c = load_corpus(f.dir / "out");
  for (std::size_t i = 0; i < c.count(); ++i) {
    const std::size_t k = std::stoul(c.record(i).id.substr(3));
    EXPECT_FLOAT_EQ(c.images().row(i)[k], 1.0f);
    EXPECT_EQ(c.row_of(c.record(i).id), i);
  }
}

TEST(Ingest, LoadRejectsNonUnitRows) {
  IngestFixture f;
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, three_records(), {}, {});
  ingest(f.paths, f.dir / "out");
  write_wcem(f.dir / "out" / kImagesWcem, EmbeddingMatrix::from_rows({{2, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  EXPECT_EQ(code_of([&] { load_corpus(f.dir / "out"); }), ErrorCode::FormatError);
}

TEST(TextLookup, CaseInsensitive) {
  IngestFixture f;
  f.write({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, three_records(), {{0, 1, 0}, {0.6f, 0.8f, 0}}, {"rectangular", "dense"});
  Corpus c = ingest(f.paths, f.dir / "out");
  auto v = get_text_embedding(c, "Rectangular");
  EXPECT_EQ(std::vector<float>(v.begin(), v.end()), (std::vector<float>{0, 1, 0}));
  EXPECT_EQ(code_of([&] { get_text_embedding(c, "hexagonal"); }), ErrorCode::UnknownText);

  // stored vector survives persist/load bit for bit
  Corpus loaded = load_corpus(f.dir / "out");
  auto a = get_text_embedding(c, "dense");
  auto b = get_text_embedding(loaded, "dense");
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
}

TEST(Corpus, IdRankOrdersById) {
  std::mt19937_64 rng(2);
  Corpus c = oracle::random_corpus(rng, 50, 4);
  std::vector<std::size_t> rows(c.count());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::sort(rows.begin(), rows.end(), [&](auto a, auto b) { return c.id_rank(a) < c.id_rank(b); });
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(c.record(rows[i - 1]).id, c.record(rows[i]).id);
  EXPECT_FALSE(c.find_id("missing"));
  EXPECT_THROW(c.row_of("missing"), Error);
}

}  // namespace
}  // namespace weicom
