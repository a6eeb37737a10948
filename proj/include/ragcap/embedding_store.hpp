#pragma once

// Caption datastore: entries, unit-normalized embeddings, ingestion from
// caption corpora and a persistent binary index.
//
// Index file layout (all integers little-endian):
//
//   "RAGC"                     4 bytes magic
//   version                    u16 (currently 1)
//   manifest length            u64, then that many bytes of UTF-8 JSON
//   vector block               count * dimension * f32
//   entry block length         u64, then a JSON array of entries
//   checksum                   u64 FNV-1a over every preceding byte except
//                              the vector block
//
// The vector block is covered by the manifest's own `checksum` field (FNV-1a
// of the block, hex), which is itself inside the trailer-checked bytes, so
// every byte of the file is verified on load with one pass over the vectors.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragcap/error.hpp"
#include "ragcap/hash.hpp"

namespace ragcap {

struct Embedding {
  std::vector<float> values;
  double norm = 0.0;  // Euclidean norm of the raw vector before normalization

  std::size_t dimension() const noexcept { return values.size(); }
};

struct DatastoreEntry {
  std::size_t id = 0;
  std::string text;
  std::string language;
  std::string source;

  bool operator==(const DatastoreEntry&) const = default;
};

struct StoreManifest {
  std::size_t dimension = 0;
  std::size_t count = 0;
  std::string provider_id;
  std::string created_at;
  std::string checksum;

  bool operator==(const StoreManifest&) const = default;
};

inline nlohmann::ordered_json to_json(const StoreManifest& m) {
  nlohmann::ordered_json j;
  j["dimension"] = m.dimension;
  j["count"] = m.count;
  j["provider_id"] = m.provider_id;
  j["created_at"] = m.created_at;
  j["checksum"] = m.checksum;
  return j;
}

inline std::string utc_timestamp(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string utc_now() {
  return utc_timestamp(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now()));
}

// Scales `raw` to unit Euclidean norm. The norm is accumulated in double.
inline Embedding normalize(std::span<const float> raw) {
  double sq = 0.0;
  for (float x : raw) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InputError("degenerate embedding");
  Embedding out;
  out.norm = norm;
  out.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.values[i] = static_cast<float>(static_cast<double>(raw[i]) / norm);
  return out;
}

inline Embedding normalize(std::span<const float> raw, std::size_t expected_dimension) {
  if (raw.size() != expected_dimension) throw DimensionError(expected_dimension, raw.size());
  return normalize(raw);
}

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

namespace detail {

template <typename T>
constexpr T byteswap(T v) noexcept {
  T out = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out = static_cast<T>((out << 8) | (v & 0xff));
    v = static_cast<T>(v >> 8);
  }
  return out;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw CorruptIndexError("truncated file");
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

template <typename T>
void hash_le(Fnv1a64& h, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  h.update(&v, sizeof(T));
}

inline constexpr char kMagic[4] = {'R', 'A', 'G', 'C'};
inline constexpr std::uint16_t kFormatVersion = 1;

}  // namespace detail

class EmbeddingStore {
 public:
  EmbeddingStore(std::size_t dimension, std::string provider_id)
      : dimension_(dimension), provider_id_(std::move(provider_id)), created_at_(utc_now()) {
    if (dimension_ == 0) throw InputError("store dimension must be positive");
  }

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::string& provider_id() const noexcept { return provider_id_; }
  bool frozen() const noexcept { return frozen_; }

  const std::string& created_at() const noexcept { return created_at_; }
  void set_created_at(std::string ts) { created_at_ = std::move(ts); }

  const DatastoreEntry& entry(std::size_t id) const { return entries_.at(id); }
  const std::vector<DatastoreEntry>& entries() const noexcept { return entries_; }

  std::span<const float> vector(std::size_t id) const {
    if (id >= entries_.size()) throw InputError("entry id out of range");
    return {vectors_.data() + id * dimension_, dimension_};
  }
  // Row-major block of size() * dimension() floats.
  std::span<const float> vectors() const noexcept { return vectors_; }
  double raw_norm(std::size_t id) const { return norms_.at(id); }

  // Appends one caption; `raw` is normalized before storage. Returns the new id.
  std::size_t add(std::string_view text, std::string language, std::string source,
                  std::span<const float> raw) {
    if (frozen_) throw Error(ErrorKind::internal, "store is frozen");
    const auto trimmed = trim(text);
    if (trimmed.empty()) throw InputError("caption text is empty");
    Embedding e = normalize(raw, dimension_);
    const std::size_t id = entries_.size();
    entries_.push_back({id, std::string(trimmed), std::move(language), std::move(source)});
    vectors_.insert(vectors_.end(), e.values.begin(), e.values.end());
    norms_.push_back(e.norm);
    return id;
  }

  void freeze() noexcept { frozen_ = true; }

  // Guards against querying with embeddings from another model.
  void require_provider(std::string_view provider_id) const {
    if (provider_id != provider_id_)
      throw InputError("provider mismatch: store was built with '" + provider_id_ +
                       "', query comes from '" + std::string(provider_id) + "'");
  }

  std::string vector_checksum() const {
    Fnv1a64 h;
    hash_vectors(h);
    return to_hex(h.digest());
  }

  StoreManifest manifest() const {
    return {dimension_, entries_.size(), provider_id_, created_at_, vector_checksum()};
  }

  StoreManifest save(const std::filesystem::path& path) const {
    if (entries_.empty()) throw InputError("cannot save an empty store");
    const StoreManifest m = manifest();
    const std::string manifest_bytes = to_json(m).dump();

    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      arr.push_back({{"id", e.id},
                     {"text", e.text},
                     {"language", e.language},
                     {"source", e.source},
                     {"norm", norms_[i]}});
    }
    const std::string entry_bytes = arr.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write index " + path.string());

    Fnv1a64 trailer;
    out.write(detail::kMagic, 4);
    trailer.update(detail::kMagic, 4);
    detail::write_le<std::uint16_t>(out, detail::kFormatVersion);
    detail::hash_le<std::uint16_t>(trailer, detail::kFormatVersion);
    detail::write_le<std::uint64_t>(out, manifest_bytes.size());
    detail::hash_le<std::uint64_t>(trailer, manifest_bytes.size());
    out.write(manifest_bytes.data(), static_cast<std::streamsize>(manifest_bytes.size()));
    trailer.update(manifest_bytes);

    write_vectors(out);

    detail::write_le<std::uint64_t>(out, entry_bytes.size());
    detail::hash_le<std::uint64_t>(trailer, entry_bytes.size());
    out.write(entry_bytes.data(), static_cast<std::streamsize>(entry_bytes.size()));
    trailer.update(entry_bytes);
    detail::write_le<std::uint64_t>(out, trailer.digest());
    out.flush();
    if (!out) throw InputError("failed writing index " + path.string());
    return m;
  }

  // Loads a store written by save(). The result is frozen.
  static EmbeddingStore load(const std::filesystem::path& path,
                             std::optional<std::size_t> expected_dimension = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open index " + path.string());
    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);
    if (ec) throw InputError("cannot stat index " + path.string());

    Fnv1a64 trailer;
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4) throw CorruptIndexError("truncated file");
    if (std::memcmp(magic, detail::kMagic, 4) != 0) throw CorruptIndexError("bad magic");
    trailer.update(magic, 4);
    const auto version = detail::read_le<std::uint16_t>(in);
    if (version != detail::kFormatVersion)
      throw CorruptIndexError("unsupported format version " + std::to_string(version));
    detail::hash_le(trailer, version);

    const auto manifest_len = detail::read_le<std::uint64_t>(in);
    if (manifest_len > file_size) throw CorruptIndexError("truncated file");
    detail::hash_le(trailer, manifest_len);
    std::string manifest_bytes(manifest_len, '\0');
    read_exact(in, manifest_bytes.data(), manifest_len);
    trailer.update(manifest_bytes);

    StoreManifest m;
    try {
      const auto j = nlohmann::json::parse(manifest_bytes);
      m.dimension = j.at("dimension").get<std::size_t>();
      m.count = j.at("count").get<std::size_t>();
      m.provider_id = j.at("provider_id").get<std::string>();
      m.created_at = j.at("created_at").get<std::string>();
      m.checksum = j.at("checksum").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw CorruptIndexError(std::string("bad manifest: ") + e.what());
    }
    if (m.dimension == 0) throw CorruptIndexError("zero dimension");
    if (expected_dimension && *expected_dimension != m.dimension)
      throw DimensionError(*expected_dimension, m.dimension);

    const std::uint64_t floats = static_cast<std::uint64_t>(m.count) * m.dimension;
    if (floats > file_size / sizeof(float)) throw CorruptIndexError("truncated file");

    EmbeddingStore store(m.dimension, m.provider_id);
    store.created_at_ = m.created_at;
    store.vectors_.resize(floats);
    read_exact(in, reinterpret_cast<char*>(store.vectors_.data()), floats * sizeof(float));
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& f : store.vectors_) f = std::bit_cast<float>(detail::byteswap(std::bit_cast<std::uint32_t>(f)));
    }
    if (store.vector_checksum() != m.checksum) throw CorruptIndexError("vector checksum mismatch");

    const auto entry_len = detail::read_le<std::uint64_t>(in);
    if (entry_len > file_size) throw CorruptIndexError("truncated file");
    detail::hash_le(trailer, entry_len);
    std::string entry_bytes(entry_len, '\0');
    read_exact(in, entry_bytes.data(), entry_len);
    trailer.update(entry_bytes);

    const auto stored_checksum = detail::read_le<std::uint64_t>(in);
    if (stored_checksum != trailer.digest()) throw CorruptIndexError("checksum mismatch");
    if (in.peek() != std::char_traits<char>::eof()) throw CorruptIndexError("trailing bytes");

    try {
      const auto arr = nlohmann::json::parse(entry_bytes);
      if (!arr.is_array() || arr.size() != m.count) throw CorruptIndexError("entry count mismatch");
      store.entries_.reserve(m.count);
      store.norms_.reserve(m.count);
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        if (e.at("id").get<std::size_t>() != i) throw CorruptIndexError("non-dense entry ids");
        store.entries_.push_back({i, e.at("text").get<std::string>(), e.at("language").get<std::string>(),
                                  e.at("source").get<std::string>()});
        store.norms_.push_back(e.at("norm").get<double>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorruptIndexError(std::string("bad entry block: ") + e.what());
    }
    store.frozen_ = true;
    return store;
  }

  bool operator==(const EmbeddingStore& o) const {
    if (dimension_ != o.dimension_ || provider_id_ != o.provider_id_ || entries_ != o.entries_ ||
        vectors_.size() != o.vectors_.size() || norms_ != o.norms_)
      return false;
    return std::memcmp(vectors_.data(), o.vectors_.data(), vectors_.size() * sizeof(float)) == 0;
  }

 private:
  static void read_exact(std::istream& in, char* dst, std::uint64_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in.gcount()) != n) throw CorruptIndexError("truncated file");
  }

  void hash_vectors(Fnv1a64& h) const {
    if constexpr (std::endian::native == std::endian::little) {
      h.update(vectors_.data(), vectors_.size() * sizeof(float));
    } else {
      for (float f : vectors_) detail::hash_le(h, std::bit_cast<std::uint32_t>(f));
    }
  }

  void write_vectors(std::ostream& out) const {
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(vectors_.data()),
                static_cast<std::streamsize>(vectors_.size() * sizeof(float)));
    } else {
      for (float f : vectors_) detail::write_le(out, std::bit_cast<std::uint32_t>(f));
    }
  }

  std::size_t dimension_;
  std::string provider_id_;
  std::string created_at_;
  std::vector<DatastoreEntry> entries_;
  std::vector<float> vectors_;
  std::vector<double> norms_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Ingestion

enum class CaptionFormat { jsonl, coco_json };

inline CaptionFormat parse_caption_format(std::string_view s) {
  if (s == "jsonl") return CaptionFormat::jsonl;
  if (s == "coco-json") return CaptionFormat::coco_json;
  throw InputError("unknown caption format '" + std::string(s) + "' (expected jsonl or coco-json)");
}

struct CaptionRecord {
  std::string text;
  std::string language;
  std::optional<std::vector<float>> embedding;
};

// Fetches embeddings for a batch of texts, order preserved.
using TextEmbedder = std::function<std::vector<Embedding>(std::span<const std::string>)>;

inline constexpr std::size_t kEmbedBatchSize = 256;

inline std::vector<CaptionRecord> read_caption_file(const std::string& path, CaptionFormat format,
                                                    const std::string& default_language) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::vector<CaptionRecord> records;

  if (format == CaptionFormat::jsonl) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, lineno, std::string("invalid JSON: ") + e.what());
      }
      if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
        throw ParseError(path, lineno, "missing string field 'text'");
      CaptionRecord r;
      r.text = j["text"].get<std::string>();
      if (trim(r.text).empty()) throw ParseError(path, lineno, "empty caption");
      r.language = default_language;
      if (j.contains("language")) {
        if (!j["language"].is_string()) throw ParseError(path, lineno, "'language' must be a string");
        r.language = j["language"].get<std::string>();
      }
      if (j.contains("embedding") && !j["embedding"].is_null()) {
        const auto& arr = j["embedding"];
        if (!arr.is_array()) throw ParseError(path, lineno, "'embedding' must be an array");
        std::vector<float> v;
        v.reserve(arr.size());
        for (const auto& x : arr) {
          if (!x.is_number()) throw ParseError(path, lineno, "'embedding' must hold numbers");
          v.push_back(x.get<float>());
        }
        r.embedding = std::move(v);
      }
      records.push_back(std::move(r));
    }
  } else {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path, e.byte, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("annotations") || !j["annotations"].is_array())
      throw ParseError(path, 1, "expected an object with an 'annotations' array");
    const auto& anns = j["annotations"];
    for (std::size_t i = 0; i < anns.size(); ++i) {
      const auto& a = anns[i];
      if (!a.is_object() || !a.contains("caption") || !a["caption"].is_string())
        throw ParseError(path, i + 1, "annotation without string 'caption'");
      CaptionRecord r;
      r.text = a["caption"].get<std::string>();
      if (trim(r.text).empty()) throw ParseError(path, i + 1, "empty caption");
      r.language = default_language;
      records.push_back(std::move(r));
    }
  }
  return records;
}

// Appends every caption of `path` to `store`. Captions without a precomputed
// embedding are embedded through `embedder` in batches of kEmbedBatchSize.
// Returns the number of entries added.
inline std::size_t ingest_captions(EmbeddingStore& store, const std::string& path, CaptionFormat format,
                                   const std::string& source_tag, const std::string& language,
                                   const TextEmbedder& embedder = {}) {
  auto records = read_caption_file(path, format, language);
  if (records.empty()) throw InputError("no captions ingested");

  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].embedding) {
      if (records[i].embedding->size() != store.dimension())
        throw ParseError(path, i + 1,
                         "embedding has dimension " + std::to_string(records[i].embedding->size()) +
                             ", store expects " + std::to_string(store.dimension()));
    } else {
      missing.push_back(i);
    }
  }
  if (!missing.empty()) {
    if (!embedder) throw InputError("captions without embeddings need an embedding provider");
    for (std::size_t start = 0; start < missing.size(); start += kEmbedBatchSize) {
      const std::size_t end = std::min(missing.size(), start + kEmbedBatchSize);
      std::vector<std::string> texts;
      for (std::size_t k = start; k < end; ++k) texts.push_back(std::string(trim(records[missing[k]].text)));
      auto embs = embedder(texts);
      if (embs.size() != texts.size()) throw Error(ErrorKind::provider, "embedder returned wrong batch size");
      for (std::size_t k = start; k < end; ++k) records[missing[k]].embedding = std::move(embs[k - start].values);
    }
  }

  // Validate everything before the first append so a bad record leaves the store untouched.
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      (void)normalize(*records[i].embedding);
    } catch (const InputError& e) {
      throw ParseError(path, i + 1, e.what());
    }
  }
  for (auto& r : records) store.add(r.text, r.language, source_tag, *r.embedding);
  return records.size();
}

}  // namespace ragcap
