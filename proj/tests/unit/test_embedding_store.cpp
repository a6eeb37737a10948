#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ragcap/embedding_store.hpp"
#include "ragcap/provider_gateway.hpp"
#include "support/test_support.hpp"

using namespace ragcap;
using ragcap::test::fixture;
using ragcap::test::TempDir;

namespace {

TextEmbedder mock_embedder() {
  return [](std::span<const std::string> texts) {
    std::vector<Embedding> out;
    for (const auto& t : texts) out.push_back(normalize(MockProvider::embed_text(t)));
    return out;
  };
}

std::size_t count_coco_annotations(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in)["annotations"].size();
}

}  // namespace

TEST(Normalize, ThreeFour) {
  const std::vector<float> v{3.0f, 4.0f};
  const auto e = normalize(v);
  EXPECT_NEAR(e.values[0], 0.6f, 1e-7);
  EXPECT_NEAR(e.values[1], 0.8f, 1e-7);
  EXPECT_DOUBLE_EQ(e.norm, 5.0);
}

TEST(Normalize, Ones) {
  const std::vector<float> v(4, 1.0f);
  const auto e = normalize(v);
  for (float x : e.values) EXPECT_NEAR(x, 0.5f, 1e-7);
}

TEST(Normalize, Idempotent) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    const auto once = normalize(test::random_vector(rng, 1 + t % 96));
    const auto twice = normalize(once.values);
    for (std::size_t i = 0; i < once.values.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-7);
    EXPECT_NEAR(twice.norm, 1.0, 1e-6);
  }
}

TEST(Normalize, ZeroVectorRejected) {
  const std::vector<float> z(8, 0.0f);
  EXPECT_THROW(normalize(z), InputError);
}

TEST(Normalize, DimensionChecked) {
  const std::vector<float> v(3, 1.0f);
  EXPECT_THROW(normalize(v, 4), DimensionError);
}

TEST(EmbeddingStore, AddTrimsAndRejectsEmpty) {
  EmbeddingStore s(2, "p");
  const std::vector<float> v{1.0f, 0.0f};
  EXPECT_EQ(s.add("  a cat \n", "en", "src", v), 0u);
  EXPECT_EQ(s.entry(0).text, "a cat");
  EXPECT_THROW(s.add(" \t ", "en", "src", v), InputError);
  EXPECT_EQ(s.size(), 1u);
}

TEST(EmbeddingStore, FrozenRejectsAdd) {
  EmbeddingStore s(2, "p");
  const std::vector<float> v{1.0f, 0.0f};
  s.add("x", "en", "s", v);
  s.freeze();
  EXPECT_THROW(s.add("y", "en", "s", v), Error);
}

TEST(EmbeddingStore, ProviderMismatch) {
  EmbeddingStore s(2, "mock-v1");
  EXPECT_NO_THROW(s.require_provider("mock-v1"));
  try {
    s.require_provider("other");
    FAIL() << "expected a provider mismatch";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("provider mismatch"), std::string::npos);
  }
}

TEST(Ingest, JsonlWithVectors) {
  EmbeddingStore s(64, "mock-v1");
  const auto n = ingest_captions(s, fixture("store/three_with_vectors.jsonl").string(), CaptionFormat::jsonl, "t", "en");
  ASSERT_EQ(n, 3u);
  ASSERT_EQ(s.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.entry(i).id, i);
    double sq = 0.0;
    for (float x : s.vector(i)) sq += static_cast<double>(x) * x;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-6);
  }
}

TEST(Ingest, CocoCountMatchesAnnotations) {
  const auto path = fixture("coco/captions_val_sample.json");
  EmbeddingStore s(64, "mock-v1");
  const auto n = ingest_captions(s, path.string(), CaptionFormat::coco_json, "coco", "en", mock_embedder());
  EXPECT_EQ(n, count_coco_annotations(path));
  EXPECT_EQ(s.size(), n);
}

TEST(Ingest, TwiceDoubles) {
  const auto path = fixture("store/captions.jsonl").string();
  EmbeddingStore s(64, "mock-v1");
  const auto n = ingest_captions(s, path, CaptionFormat::jsonl, "a", "en", mock_embedder());
  ingest_captions(s, path, CaptionFormat::jsonl, "a", "en", mock_embedder());
  EXPECT_EQ(s.size(), 2 * n);
}

TEST(Ingest, AppendIsConcatenation) {
  TempDir dir;
  const auto a = dir / "a.jsonl";
  const auto b = dir / "b.jsonl";
  const auto ab = dir / "ab.jsonl";
  test::write_text(a, "{\"text\": \"one\"}\n{\"text\": \"two\"}\n");
  test::write_text(b, "{\"text\": \"three\", \"language\": \"es\"}\n");
  test::write_text(ab, test::read_text(a) + test::read_text(b));

  EmbeddingStore s1(64, "mock-v1"), s2(64, "mock-v1");
  ingest_captions(s1, a.string(), CaptionFormat::jsonl, "x", "en", mock_embedder());
  ingest_captions(s1, b.string(), CaptionFormat::jsonl, "x", "en", mock_embedder());
  ingest_captions(s2, ab.string(), CaptionFormat::jsonl, "x", "en", mock_embedder());
  EXPECT_TRUE(s1 == s2);
  EXPECT_EQ(s1.entry(2).language, "es");
}

TEST(Ingest, MalformedLineReportsLineNumber) {
  TempDir dir;
  const auto p = dir / "bad.jsonl";
  test::write_text(p, "{\"text\": \"ok\"}\n\n{\"text\": 5}\n");
  EmbeddingStore s(64, "mock-v1");
  try {
    ingest_captions(s, p.string(), CaptionFormat::jsonl, "x", "en", mock_embedder());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.record(), 3u);
  }
  EXPECT_EQ(s.size(), 0u);
}

TEST(Ingest, EmptyFileIsAnError) {
  TempDir dir;
  const auto p = dir / "empty.jsonl";
  test::write_text(p, "\n");
  EmbeddingStore s(64, "mock-v1");
  EXPECT_THROW(ingest_captions(s, p.string(), CaptionFormat::jsonl, "x", "en", mock_embedder()), InputError);
}

TEST(Ingest, WrongVectorDimension) {
  TempDir dir;
  const auto p = dir / "v.jsonl";
  test::write_text(p, "{\"text\": \"x\", \"embedding\": [1, 2, 3]}\n");
  EmbeddingStore s(64, "mock-v1");
  EXPECT_THROW(ingest_captions(s, p.string(), CaptionFormat::jsonl, "x", "en"), ParseError);
}

TEST(Index, RoundTripProperty) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dim(2, 64), count(1, 1000);
  TempDir dir;
  for (int t = 0; t < 20; ++t) {
    const auto s = test::random_store(rng, count(rng), dim(rng));
    const auto path = dir / ("s" + std::to_string(t) + ".idx");
    const auto m = s.save(path);
    const auto l = EmbeddingStore::load(path);
    EXPECT_TRUE(l == s);
    EXPECT_TRUE(l.frozen());
    EXPECT_EQ(l.manifest(), m);
    EXPECT_EQ(m.count, s.size());
    EXPECT_EQ(m.dimension, s.dimension());
  }
}

TEST(Index, TruncatedIsCorrupt) {
  std::mt19937_64 rng(3);
  const auto s = test::random_store(rng, 50, 16);
  TempDir dir;
  const auto path = dir / "s.idx";
  s.save(path);
  const auto full = std::filesystem::file_size(path);
  for (auto cut : {full - 1, full - 9, full / 2, std::uintmax_t{10}, std::uintmax_t{3}}) {
    const auto copy = dir / "cut.idx";
    std::filesystem::copy_file(path, copy, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(copy, cut);
    try {
      EmbeddingStore::load(copy);
      FAIL() << "loaded a file truncated to " << cut;
    } catch (const CorruptIndexError& e) {
      EXPECT_NE(std::string(e.what()).find("corrupt index"), std::string::npos);
    }
  }
}

TEST(Index, FlippedByteIsCorrupt) {
  std::mt19937_64 rng(4);
  const auto s = test::random_store(rng, 20, 8);
  TempDir dir;
  const auto path = dir / "s.idx";
  s.save(path);
  const auto bytes = test::read_text(path);
  for (std::size_t pos : {std::size_t{5}, bytes.size() / 2, bytes.size() - 20, bytes.size() - 1}) {
    auto b = bytes;
    b[pos] = static_cast<char>(b[pos] ^ 0x01);
    test::write_text(dir / "f.idx", b);
    EXPECT_THROW(EmbeddingStore::load(dir / "f.idx"), InputError) << "flip at " << pos;
  }
}

TEST(Index, DimensionMismatchOnLoad) {
  std::mt19937_64 rng(5);
  const auto s = test::random_store(rng, 4, 512);
  TempDir dir;
  s.save(dir / "s.idx");
  try {
    EmbeddingStore::load(dir / "s.idx", 640);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.expected(), 640u);
    EXPECT_EQ(e.actual(), 512u);
  }
}

TEST(Index, EmptyStoreCannotBeSaved) {
  EmbeddingStore s(4, "p");
  TempDir dir;
  EXPECT_THROW(s.save(dir / "e.idx"), InputError);
}

TEST(Index, ManifestJsonKeys) {
  std::mt19937_64 rng(6);
  const auto s = test::random_store(rng, 3, 4);
  const auto j = to_json(s.manifest());
  for (const char* k : {"dimension", "count", "provider_id", "created_at", "checksum"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["checksum"].get<std::string>().size(), 16u);
}
