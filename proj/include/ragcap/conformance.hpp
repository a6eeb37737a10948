#pragma once

// Protocol conformance checks for a Provider implementation. Runs against the
// raw provider (not through Gateway) so that violations the gateway would
// paper over are reported.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ragcap/error.hpp"
#include "ragcap/prompt_builder.hpp"
#include "ragcap/provider_gateway.hpp"

namespace ragcap {

struct ConformanceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// An 8x8 RGB PNG, decodable by any image library.
inline std::vector<std::uint8_t> conformance_image() {
  return base64_decode(
      "iVBORw0KGgoAAAANSUhEUgAAAAgAAAAICAIAAABLbSncAAAAPElEQVR4nGMU0bizJcCHAQMwbQnw8dmwBYsEAwMDVjkmCIUpxwRnockxIatC"
      "lkORQJZjPFGhgekknw1bACMmF48dysd+AAAAAElFTkSuQmCC");
}

namespace detail {

inline double l2(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

template <typename Fn>
void run_check(std::vector<ConformanceCheck>& out, std::string name, Fn&& fn) {
  ConformanceCheck c{std::move(name), false, {}};
  try {
    c.detail = fn();
    c.passed = c.detail.empty();
  } catch (const std::exception& e) {
    c.detail = std::string("exception: ") + e.what();
  }
  out.push_back(std::move(c));
}

}  // namespace detail

inline std::vector<ConformanceCheck> run_conformance(Provider& provider, double norm_tolerance = 1e-4) {
  std::vector<ConformanceCheck> out;
  ProviderManifest m;

  detail::run_check(out, "manifest is complete and stable", [&]() -> std::string {
    m = provider.manifest();
    if (m.provider_id.empty()) return "empty provider_id";
    if (m.embedding_dimension == 0) return "zero embedding_dimension";
    if (m.eos_token.empty()) return "empty eos_token";
    if (!(provider.manifest() == m)) return "second manifest differs";
    return {};
  });

  detail::run_check(out, "text embeddings: count, dimension, unit norm, determinism", [&]() -> std::string {
    const std::vector<std::string> texts{"a dog", "a dog", "a spreadsheet"};
    const auto v = provider.embed_texts(texts);
    if (v.size() != texts.size()) return "expected 3 embeddings, got " + std::to_string(v.size());
    for (const auto& e : v) {
      if (e.size() != m.embedding_dimension) return "dimension " + std::to_string(e.size()) + " != manifest";
      if (std::abs(detail::l2(e) - 1.0) > norm_tolerance) return "embedding is not unit norm";
    }
    if (v[0] != v[1]) return "identical texts gave different vectors";
    return {};
  });

  detail::run_check(out, "image embedding: dimension, unit norm", [&]() -> std::string {
    const auto e = provider.embed_image(conformance_image());
    if (e.size() != m.embedding_dimension) return "dimension " + std::to_string(e.size()) + " != manifest";
    if (std::abs(detail::l2(e) - 1.0) > norm_tolerance) return "embedding is not unit norm";
    return {};
  });

  const std::string prompt = build_retrieval_prompt(
      {{}, {"a dog running on the grass", "a brown dog playing in a park"}, "english",
       m.eos_token.empty() ? std::string(kDefaultSeparator) : m.eos_token});

  for (std::size_t c : {std::size_t{1}, std::size_t{3}}) {
    detail::run_check(out, "generate returns exactly c=" + std::to_string(c) + " candidates",
                      [&]() -> std::string {
                        const auto r = provider.generate({prompt, c, 3, 20, m.eos_token});
                        if (r.candidates.size() != c)
                          return "got " + std::to_string(r.candidates.size()) + " candidates";
                        for (std::size_t i = 1; i < r.candidates.size(); ++i)
                          if (r.candidates[i].score > r.candidates[i - 1].score) return "scores increase";
                        for (const auto& cand : r.candidates)
                          if (cand.text.find(m.eos_token) != std::string::npos)
                            return "candidate contains the stop token";
                        if (r.echo && *r.echo != prompt) return "echoed prompt differs";
                        return {};
                      });
  }
  return out;
}

}  // namespace ragcap
