#pragma once

// Client side of the model provider boundary.
//
// A Provider supplies text embeddings, image embeddings and prompted
// generation. Two implementations ship here: MockProvider (deterministic,
// in-process) and HttpProvider (JSON over HTTP). Gateway wraps either one and
// enforces the contracts the rest of the engine relies on: batching, unit
// norm, dimension, exactly-c candidates sorted by score, stop-token
// truncation and untouched prompt bytes.
//
// Wire protocol:
//   POST /v1/embed_text   {"texts": [str]}              -> {"embeddings": [[num]]}
//   POST /v1/embed_image  {"image_b64": str}            -> {"embedding": [num]}
//   POST /v1/generate     {"prompt", "num_candidates", "beam_size",
//                          "max_new_tokens", "stop"}    -> {"candidates": [{"text", "score"}]}
//   GET  /v1/manifest                                   -> {"provider_id", "embedding_dimension", "eos_token"}

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ragcap/embedding_store.hpp"
#include "ragcap/error.hpp"
#include "ragcap/hash.hpp"
#include "ragcap/prompt_builder.hpp"

namespace ragcap {

struct ProviderManifest {
  std::string provider_id;
  std::size_t embedding_dimension = 0;
  std::string eos_token;

  bool operator==(const ProviderManifest&) const = default;
};

struct GenerationParams {
  std::size_t num_candidates = 3;
  std::size_t beam_size = 3;
  std::size_t max_new_tokens = 40;
  std::string stop_token;  // empty: use the provider's eos token

  void validate() const {
    if (num_candidates == 0) throw InputError("num_candidates must be positive");
    if (beam_size == 0) throw InputError("beam_size must be positive");
    if (max_new_tokens == 0) throw InputError("max_new_tokens must be positive");
    if (num_candidates > beam_size)
      throw InputError("num_candidates (" + std::to_string(num_candidates) + ") exceeds beam_size (" +
                       std::to_string(beam_size) + ")");
  }
};

struct GenerationCandidate {
  std::string text;
  double score = 0.0;

  bool operator==(const GenerationCandidate&) const = default;
};

struct GenerationRequest {
  std::string prompt;
  std::size_t num_candidates = 3;
  std::size_t beam_size = 3;
  std::size_t max_new_tokens = 40;
  std::string stop;
};

struct GenerationResponse {
  std::vector<GenerationCandidate> candidates;
  std::optional<std::string> echo;  // the prompt as received, when the backend reports it
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderManifest manifest() = 0;
  virtual std::vector<std::vector<float>> embed_texts(const std::vector<std::string>& texts) = 0;
  virtual std::vector<float> embed_image(std::span<const std::uint8_t> image) = 0;
  virtual GenerationResponse generate(const GenerationRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// base64 (RFC 4648, with padding)

inline std::string base64_encode(std::span<const std::uint8_t> in) {
  static constexpr char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += tbl[v & 63];
  }
  if (i + 1 == in.size()) {
    const std::uint32_t v = in[i] << 16;
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw InputError("invalid base64 length");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw InputError("invalid base64 padding");
        v[k] = val(c);
        if (v[k] < 0) throw InputError("invalid base64 character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// MockProvider
//
// Embeddings: FNV-1a of the payload seeds SplitMix64, which yields
// `dimension` coordinates in [-1, 1); the vector is then normalized. Text and
// image payloads share the keying, so an image whose bytes equal a text gets
// that text's embedding.
//
// Generation: parses the retrieved captions of the last (open) prompt block
// and the language from its "... in <language> is:" tail. Candidate i takes
// caption (h + i) mod K, h = FNV-1a(prompt), and applies edit i mod 3
// (0: as is, 1: drop first word, 2: drop last word). Non-English targets get
// a "[<language>] " prefix. Scores are -0.25 * (i + 1). Every prompt that
// reaches generate() is recorded.

class MockProvider : public Provider {
 public:
  static constexpr std::string_view kProviderId = "mock-v1";
  static constexpr std::size_t kDimension = 64;

  ProviderManifest manifest() override {
    return {std::string(kProviderId), kDimension, std::string(kDefaultSeparator)};
  }

  static std::vector<float> embed_payload(std::span<const std::uint8_t> bytes) {
    SplitMix64 rng(fnv1a64(bytes) ^ 0x5eed5eed5eed5eedULL);
    std::vector<float> raw(kDimension);
    for (auto& x : raw) x = static_cast<float>(rng.next_signed_unit());
    return normalize(raw).values;
  }

  static std::vector<float> embed_text(std::string_view text) {
    return embed_payload({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }

  std::vector<std::vector<float>> embed_texts(const std::vector<std::string>& texts) override {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_text(t));
    return out;
  }

  std::vector<float> embed_image(std::span<const std::uint8_t> image) override {
    if (image.empty()) throw ProviderError("undecodable image payload (empty)", false);
    return embed_payload(image);
  }

  GenerationResponse generate(const GenerationRequest& req) override {
    {
      std::lock_guard lock(mu_);
      prompts_.push_back(req.prompt);
    }
    const std::string stop = req.stop.empty() ? std::string(kDefaultSeparator) : req.stop;
    const std::string language = parse_language(req.prompt);
    auto captions = parse_query_captions(req.prompt, stop);
    if (captions.empty()) captions.push_back(fallback_caption(req.prompt));

    const std::uint64_t h = fnv1a64(req.prompt);
    GenerationResponse resp;
    resp.echo = req.prompt;
    for (std::size_t i = 0; i < req.num_candidates; ++i) {
      std::string text = edit(captions[(h + i) % captions.size()], i % 3);
      if (i >= 3) text += " " + std::to_string(i / 3);
      if (!language.empty() && language != "english") text = "[" + language + "] " + text;
      text = limit_words(text, req.max_new_tokens);
      resp.candidates.push_back({text, -0.25 * static_cast<double>(i + 1)});
    }
    return resp;
  }

  std::vector<std::string> received_prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
  }

  static std::string parse_language(std::string_view prompt) {
    constexpr std::string_view marker = "describe this image in ";
    constexpr std::string_view tail = " is:";
    const auto pos = prompt.rfind(marker);
    if (pos == std::string_view::npos) return {};
    const auto start = pos + marker.size();
    const auto end = prompt.find(tail, start);
    if (end == std::string_view::npos) return {};
    return std::string(prompt.substr(start, end - start));
  }

  // Captions of the final block, in prompt order.
  static std::vector<std::string> parse_query_captions(std::string_view prompt, std::string_view stop) {
    constexpr std::string_view head = "Similar images have the following captions: ";
    constexpr std::string_view tail = "A creative short caption";
    const auto block = prompt.rfind(kBotPreamble);
    if (block == std::string_view::npos) return {};
    const auto h = prompt.find(head, block);
    if (h == std::string_view::npos) return {};
    const auto start = h + head.size();
    const auto end = prompt.find(tail, start);
    if (end == std::string_view::npos) return {};
    std::string_view body = prompt.substr(start, end - start);
    std::vector<std::string> out;
    while (!body.empty()) {
      const auto p = body.find(stop);
      const auto piece = trim(body.substr(0, p));
      if (!piece.empty()) out.emplace_back(piece);
      if (p == std::string_view::npos) break;
      body.remove_prefix(p + stop.size());
    }
    return out;
  }

 private:
  static std::string fallback_caption(std::string_view prompt) {
    constexpr std::string_view marker = "I think there might be a ";
    const auto block = prompt.rfind(kBotPreamble);
    const auto pos = prompt.find(marker, block == std::string_view::npos ? 0 : block);
    if (pos != std::string_view::npos) {
      const auto start = pos + marker.size();
      const auto end = prompt.find_first_of(",", start);
      const auto stop = prompt.find(" in this", start);
      const auto cut = std::min(end, stop);
      if (cut != std::string_view::npos && cut > start)
        return "a picture with a " + std::string(prompt.substr(start, cut - start));
    }
    return "a picture";
  }

  static std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  }

  static std::string join(const std::vector<std::string>& w, std::size_t b, std::size_t e) {
    std::string out;
    for (std::size_t i = b; i < e; ++i) out += (i > b ? " " : "") + w[i];
    return out;
  }

  static std::string edit(const std::string& caption, std::size_t variant) {
    const auto w = words(caption);
    if (variant == 0 || w.size() < 2) return variant == 0 || w.empty() ? caption : caption + " scene";
    if (variant == 1) return join(w, 1, w.size());
    return join(w, 0, w.size() - 1);
  }

  static std::string limit_words(const std::string& text, std::size_t max_words) {
    const auto w = words(text);
    if (w.size() <= max_words) return text;
    return join(w, 0, max_words);
  }

  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

// ---------------------------------------------------------------------------
// HttpProvider

struct HttpOptions {
  std::chrono::milliseconds timeout{30000};
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(std::string base_url, HttpOptions opts = {}) : opts_(opts) {
    std::string_view url = base_url;
    if (url.rfind("http://", 0) != 0)
      throw InputError("provider URL must start with http:// (got '" + base_url + "')");
    const auto path_pos = url.find('/', 7);
    origin_ = std::string(url.substr(0, path_pos));
    if (path_pos != std::string_view::npos) prefix_ = std::string(url.substr(path_pos));
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  ProviderManifest manifest() override {
    const auto j = request("GET", "/v1/manifest", {});
    try {
      return {j.at("provider_id").get<std::string>(), j.at("embedding_dimension").get<std::size_t>(),
              j.at("eos_token").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed /v1/manifest response: ") + e.what(), false);
    }
  }

  std::vector<std::vector<float>> embed_texts(const std::vector<std::string>& texts) override {
    const auto j = request("POST", "/v1/embed_text", nlohmann::json{{"texts", texts}});
    try {
      return j.at("embeddings").get<std::vector<std::vector<float>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed /v1/embed_text response: ") + e.what(), false);
    }
  }

  std::vector<float> embed_image(std::span<const std::uint8_t> image) override {
    const auto j = request("POST", "/v1/embed_image", nlohmann::json{{"image_b64", base64_encode(image)}});
    try {
      return j.at("embedding").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed /v1/embed_image response: ") + e.what(), false);
    }
  }

  GenerationResponse generate(const GenerationRequest& req) override {
    nlohmann::json body{{"prompt", req.prompt},
                        {"num_candidates", req.num_candidates},
                        {"beam_size", req.beam_size},
                        {"max_new_tokens", req.max_new_tokens},
                        {"stop", req.stop}};
    const auto j = request("POST", "/v1/generate", body);
    GenerationResponse resp;
    try {
      for (const auto& c : j.at("candidates"))
        resp.candidates.push_back({c.at("text").get<std::string>(), c.at("score").get<double>()});
      if (j.contains("echo") && j["echo"].is_string()) resp.echo = j["echo"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed /v1/generate response: ") + e.what(), false);
    }
    return resp;
  }

 private:
  nlohmann::json request(const std::string& method, const std::string& endpoint, const nlohmann::json& body) {
    const std::string path = prefix_ + endpoint;
    const std::string payload = body.is_null() ? std::string() : body.dump();
    auto backoff = opts_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= std::max(1, opts_.attempts); ++attempt) {
      httplib::Client cli(origin_);
      const auto secs = opts_.timeout.count() / 1000;
      const auto usecs = (opts_.timeout.count() % 1000) * 1000;
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      cli.set_write_timeout(secs, usecs);
      auto res = method == "GET" ? cli.Get(path) : cli.Post(path, payload, "application/json");
      if (!res) {
        last_error = "transport failure on " + endpoint + ": " + httplib::to_string(res.error());
      } else if (res->status >= 500) {
        last_error = endpoint + " returned HTTP " + std::to_string(res->status) + ": " + res->body;
      } else if (res->status >= 400) {
        throw ProviderError(endpoint + " returned HTTP " + std::to_string(res->status) + ": " + res->body, false);
      } else {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
          throw ProviderError(endpoint + " returned invalid JSON: " + e.what(), false);
        }
      }
      if (attempt < opts_.attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
    }
    throw ProviderError(last_error + " (after " + std::to_string(std::max(1, opts_.attempts)) + " attempts)", true);
  }

  HttpOptions opts_;
  std::string origin_;
  std::string prefix_;
};

// "mock" selects the in-process mock; anything else is an http:// base URL.
inline std::shared_ptr<Provider> make_provider(const std::string& spec, HttpOptions opts = {}) {
  if (spec == "mock") return std::make_shared<MockProvider>();
  return std::make_shared<HttpProvider>(spec, opts);
}

// ---------------------------------------------------------------------------
// Gateway

class Gateway {
 public:
  static constexpr std::size_t kBatchSize = kEmbedBatchSize;
  static constexpr double kUnitTolerance = 1e-4;

  explicit Gateway(std::shared_ptr<Provider> provider) : provider_(std::move(provider)) {
    if (!provider_) throw Error(ErrorKind::internal, "null provider");
  }

  const ProviderManifest& manifest() {
    std::lock_guard lock(manifest_mu_);
    if (!manifest_) {
      auto m = provider_->manifest();
      if (m.provider_id.empty() || m.embedding_dimension == 0 || m.eos_token.empty())
        throw ProviderError("provider manifest is incomplete", false);
      manifest_ = std::move(m);
    }
    return *manifest_;
  }

  Provider& provider() noexcept { return *provider_; }

  std::vector<Embedding> embed_texts(const std::vector<std::string>& texts) {
    if (texts.empty()) throw InputError("embed_texts needs at least one text");
    for (const auto& t : texts)
      if (t.empty()) throw InputError("embed_texts got an empty text");
    const std::size_t d = manifest().embedding_dimension;
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += kBatchSize) {
      const std::size_t end = std::min(texts.size(), start + kBatchSize);
      std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                     texts.begin() + static_cast<std::ptrdiff_t>(end));
      auto vecs = provider_->embed_texts(chunk);
      if (vecs.size() != chunk.size())
        throw ProviderError("provider returned " + std::to_string(vecs.size()) + " embeddings for " +
                                std::to_string(chunk.size()) + " texts",
                            false);
      for (auto& v : vecs) out.push_back(checked_embedding(v, d));
    }
    return out;
  }

  Embedding embed_image(std::span<const std::uint8_t> image) {
    if (image.empty()) throw InputError("empty image payload");
    const std::size_t d = manifest().embedding_dimension;
    return checked_embedding(provider_->embed_image(image), d);
  }

  Embedding embed_image_file(const std::filesystem::path& path) { return embed_image(read_file_bytes(path)); }

  // Exactly params.num_candidates candidates, score descending, each cut at
  // the first stop token.
  std::vector<GenerationCandidate> generate(const std::string& prompt, const GenerationParams& params) {
    if (prompt.empty()) throw InputError("empty prompt");
    params.validate();
    GenerationRequest req{prompt, params.num_candidates, params.beam_size, params.max_new_tokens,
                          params.stop_token.empty() ? manifest().eos_token : params.stop_token};
    auto resp = provider_->generate(req);
    if (resp.echo && *resp.echo != prompt) throw ProviderError("prompt bytes were altered in transit", false);
    if (resp.candidates.size() < params.num_candidates)
      throw ProviderError("provider returned " + std::to_string(resp.candidates.size()) +
                              " candidates, expected " + std::to_string(params.num_candidates),
                          false);
    std::stable_sort(resp.candidates.begin(), resp.candidates.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });
    resp.candidates.resize(params.num_candidates);
    for (auto& c : resp.candidates) {
      const auto p = c.text.find(req.stop);
      if (p != std::string::npos) c.text.resize(p);
      c.text = std::string(trim(c.text));
    }
    return resp.candidates;
  }

  TextEmbedder text_embedder() {
    return [this](std::span<const std::string> texts) {
      return embed_texts(std::vector<std::string>(texts.begin(), texts.end()));
    };
  }

 private:
  static Embedding checked_embedding(const std::vector<float>& v, std::size_t d) {
    if (v.size() != d) throw ProviderError("embedding dimension drift: manifest says " + std::to_string(d) +
                                               ", provider returned " + std::to_string(v.size()),
                                           false);
    try {
      return normalize(v);
    } catch (const InputError&) {
      throw ProviderError("provider returned a zero embedding", false);
    }
  }

  std::shared_ptr<Provider> provider_;
  std::mutex manifest_mu_;
  std::optional<ProviderManifest> manifest_;
};

}  // namespace ragcap
