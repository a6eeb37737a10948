#pragma once

// Caption evaluation: tokenizer, n-gram statistics, corpus BLEU, ROUGE-L and
// CIDEr-D, plus the run-level report.
//
// Tokenizer rules (deterministic, 13a-like with CJK splitting):
//   * lowercase (ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic)
//   * split on Unicode whitespace
//   * . , ! ? : ; " ( ) [ ] are standalone tokens, except '.' and ','
//     between two digits ("3.5" stays whole)
//   * CJK ideographs, kana, CJK punctuation and fullwidth forms are one
//     token per codepoint

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragcap/error.hpp"

namespace ragcap {

struct TokenizedCaption {
  std::vector<std::string> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const TokenizedCaption&) const = default;
};

namespace detail {

struct CodePoint {
  char32_t cp;
  std::string_view bytes;  // original encoding
};

inline std::vector<CodePoint> decode_utf8(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xF0 && b0 < 0xF8) {
      len = 4;
      cp = b0 & 0x07;
    } else if (b0 >= 0xE0) {
      len = b0 < 0xF0 ? 3 : 1;
      cp = b0 & 0x0F;
    } else if (b0 >= 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    }
    bool ok = len > 1 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      len = 1;
      cp = b0 < 0x80 ? b0 : 0xFFFD;
    }
    out.push_back({cp, s.substr(i, len)});
    i += len;
  }
  return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c < 0xC0) return c;
  if (c <= 0xDE) return c == 0xD7 ? c : c + 0x20;
  if (c == 0x130) return U'i';
  if (c >= 0x100 && c <= 0x137) return (c % 2 == 0) ? c + 1 : c;
  if (c >= 0x139 && c <= 0x148) return (c % 2 == 1) ? c + 1 : c;
  if (c >= 0x14A && c <= 0x177) return (c % 2 == 0) ? c + 1 : c;
  if (c == 0x178) return 0xFF;
  if (c >= 0x179 && c <= 0x17E) return (c % 2 == 1) ? c + 1 : c;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  return c;
}

inline bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

inline bool is_cjk(char32_t c) {
  return (c >= 0x2E80 && c <= 0x2FDF) || (c >= 0x3001 && c <= 0x303F) || (c >= 0x3040 && c <= 0x30FF) ||
         (c >= 0x31F0 && c <= 0x31FF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x4E00 && c <= 0x9FFF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0xFF00 && c <= 0xFFEF) || (c >= 0x20000 && c <= 0x2FFFF);
}

inline bool is_split_punct(char32_t c) {
  switch (c) {
    case U'.': case U',': case U'!': case U'?': case U':': case U';':
    case U'"': case U'(': case U')': case U'[': case U']':
      return true;
    default:
      return false;
  }
}

inline bool is_digit(char32_t c) { return c >= U'0' && c <= U'9'; }

}  // namespace detail

inline TokenizedCaption tokenize(std::string_view text) {
  const auto cps = detail::decode_utf8(text);
  TokenizedCaption out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i].cp;
    if (detail::is_space(c)) {
      flush();
    } else if (detail::is_cjk(c)) {
      flush();
      out.tokens.emplace_back(cps[i].bytes);
    } else if (detail::is_split_punct(c)) {
      const bool numeric = (c == U'.' || c == U',') && i > 0 && i + 1 < cps.size() &&
                           detail::is_digit(cps[i - 1].cp) && detail::is_digit(cps[i + 1].cp);
      if (numeric) {
        cur += static_cast<char>(c);
      } else {
        flush();
        out.tokens.emplace_back(1, static_cast<char>(c));
      }
    } else {
      const char32_t lc = detail::to_lower(c);
      if (lc == c && c != 0xFFFD)
        cur += cps[i].bytes;
      else
        detail::append_utf8(cur, lc);
    }
  }
  flush();
  return out;
}

inline std::string join_tokens(const TokenizedCaption& t) {
  std::string out;
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    if (i) out += ' ';
    out += t.tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// N-gram statistics. An n-gram is keyed by its tokens joined with single
// spaces, which is unambiguous since tokens never contain whitespace.

inline constexpr int kMaxNGram = 4;

struct NGramProfile {
  std::array<std::map<std::string, int>, kMaxNGram> counts;  // index n-1

  // Total n-gram occurrences of order n.
  std::size_t total(int n) const {
    std::size_t t = 0;
    for (const auto& [_, c] : counts[n - 1]) t += static_cast<std::size_t>(c);
    return t;
  }
};

inline NGramProfile ngram_profile(const TokenizedCaption& cap, int max_n = kMaxNGram) {
  NGramProfile p;
  const auto& t = cap.tokens;
  for (int n = 1; n <= max_n; ++n) {
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key = t[i];
      for (int k = 1; k < n; ++k) {
        key += ' ';
        key += t[i + k];
      }
      ++p.counts[n - 1][key];
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// BLEU: corpus-level clipped precision, uniform geometric mean over 1..max_n,
// brevity penalty from the closest reference length (ties -> shorter). No
// smoothing.

inline double bleu(std::span<const TokenizedCaption> hyps, std::span<const std::vector<TokenizedCaption>> refs,
                   int max_n) {
  if (hyps.size() != refs.size()) throw InputError("bleu: hypotheses and references differ in length");
  if (max_n < 1 || max_n > kMaxNGram) throw InputError("bleu: max_n must be in 1..4");
  std::array<double, kMaxNGram> matched{}, total{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (refs[i].empty()) throw InputError("bleu: instance " + std::to_string(i) + " has no references");
    const auto hp = ngram_profile(hyps[i], max_n);
    std::array<std::map<std::string, int>, kMaxNGram> max_ref;
    std::size_t best_len = refs[i][0].size();
    const std::size_t h = hyps[i].size();
    for (const auto& r : refs[i]) {
      const auto rp = ngram_profile(r, max_n);
      for (int n = 0; n < max_n; ++n)
        for (const auto& [g, c] : rp.counts[n]) max_ref[n][g] = std::max(max_ref[n][g], c);
      const auto diff = [&](std::size_t len) { return len > h ? len - h : h - len; };
      if (diff(r.size()) < diff(best_len) || (diff(r.size()) == diff(best_len) && r.size() < best_len))
        best_len = r.size();
    }
    for (int n = 0; n < max_n; ++n) {
      for (const auto& [g, c] : hp.counts[n]) {
        const auto it = max_ref[n].find(g);
        matched[n] += it == max_ref[n].end() ? 0 : std::min(c, it->second);
        total[n] += c;
      }
    }
    hyp_len += static_cast<double>(h);
    ref_len += static_cast<double>(best_len);
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (matched[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / total[n]);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

// ---------------------------------------------------------------------------
// ROUGE-L, following the COCO evaluation convention: precision and recall are
// each maximized over references, then combined into F with beta = 1.2.

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

inline double rouge_l(const TokenizedCaption& hyp, std::span<const TokenizedCaption> refs) {
  if (refs.empty()) throw InputError("rouge_l: no references");
  if (hyp.tokens.empty()) return 0.0;
  double p_max = 0.0, r_max = 0.0;
  for (const auto& r : refs) {
    const double lcs = static_cast<double>(lcs_length(hyp.tokens, r.tokens));
    p_max = std::max(p_max, lcs / static_cast<double>(hyp.size()));
    if (!r.tokens.empty()) r_max = std::max(r_max, lcs / static_cast<double>(r.size()));
  }
  if (p_max == 0.0 || r_max == 0.0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return ((1.0 + b2) * p_max * r_max) / (r_max + b2 * p_max);
}

inline double rouge_l_corpus(std::span<const TokenizedCaption> hyps,
                             std::span<const std::vector<TokenizedCaption>> refs) {
  if (hyps.size() != refs.size()) throw InputError("rouge_l: hypotheses and references differ in length");
  if (hyps.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) sum += rouge_l(hyps[i], refs[i]);
  return sum / static_cast<double>(hyps.size());
}

// ---------------------------------------------------------------------------
// CIDEr-D. Document frequencies come from the reference sets (one document
// per instance). For each n in 1..4 the TF-IDF vectors use
// idf = log(|corpus|) - log(max(1, df)); the per-reference similarity is
// sum_g min(h_g, r_g) * r_g / (|h| |r|) times exp(-(len_h - len_r)^2 / (2 sigma^2)),
// averaged over references, then over n, times 10.

inline constexpr double kCiderSigma = 6.0;
inline constexpr double kCiderScale = 10.0;

struct CiderResult {
  std::vector<double> per_instance;
  double mean = 0.0;
};

class CiderD {
 public:
  explicit CiderD(std::span<const std::vector<TokenizedCaption>> corpus) {
    if (corpus.empty()) throw InputError("cider_d: empty corpus");
    for (const auto& refs : corpus) {
      std::array<std::map<std::string, int>, kMaxNGram> seen;
      for (const auto& r : refs) {
        const auto p = ngram_profile(r);
        for (int n = 0; n < kMaxNGram; ++n)
          for (const auto& [g, _] : p.counts[n]) seen[n][g] = 1;
      }
      for (int n = 0; n < kMaxNGram; ++n)
        for (const auto& [g, _] : seen[n]) ++df_[g];
    }
    log_docs_ = std::log(static_cast<double>(corpus.size()));
  }

  double score(const TokenizedCaption& hyp, std::span<const TokenizedCaption> refs) const {
    if (refs.empty()) throw InputError("cider_d: instance without references");
    const Vec h = tfidf(hyp);
    std::array<double, kMaxNGram> acc{};
    for (const auto& r : refs) {
      const Vec rv = tfidf(r);
      const double delta = static_cast<double>(hyp.size()) - static_cast<double>(r.size());
      const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
      for (int n = 0; n < kMaxNGram; ++n) {
        double val = 0.0;
        for (const auto& [g, w] : h.weights[n]) {
          const auto it = rv.weights[n].find(g);
          if (it != rv.weights[n].end()) val += std::min(w, it->second) * it->second;
        }
        if (h.norm[n] != 0.0 && rv.norm[n] != 0.0)
          val /= h.norm[n] * rv.norm[n];
        else
          val = 0.0;
        acc[n] += val * penalty;
      }
    }
    double mean_n = 0.0;
    for (int n = 0; n < kMaxNGram; ++n) mean_n += acc[n] / static_cast<double>(refs.size());
    return kCiderScale * mean_n / kMaxNGram;
  }

 private:
  struct Vec {
    std::array<std::map<std::string, double>, kMaxNGram> weights;
    std::array<double, kMaxNGram> norm{};
  };

  Vec tfidf(const TokenizedCaption& cap) const {
    Vec v;
    const auto p = ngram_profile(cap);
    for (int n = 0; n < kMaxNGram; ++n) {
      double sq = 0.0;
      for (const auto& [g, tf] : p.counts[n]) {
        const auto it = df_.find(g);
        const double df = it == df_.end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
        const double w = static_cast<double>(tf) * (log_docs_ - std::log(df));
        v.weights[n].emplace(g, w);
        sq += w * w;
      }
      v.norm[n] = std::sqrt(sq);
    }
    return v;
  }

  std::map<std::string, int> df_;
  double log_docs_ = 0.0;
};

inline CiderResult cider_d(std::span<const TokenizedCaption> hyps, std::span<const std::vector<TokenizedCaption>> refs,
                           std::span<const std::vector<TokenizedCaption>> corpus) {
  if (hyps.size() != refs.size()) throw InputError("cider_d: hypotheses and references differ in length");
  const CiderD scorer(corpus);
  CiderResult out;
  out.per_instance.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) out.per_instance.push_back(scorer.score(hyps[i], refs[i]));
  double sum = 0.0;
  for (double s : out.per_instance) sum += s;
  out.mean = hyps.empty() ? 0.0 : sum / static_cast<double>(hyps.size());
  return out;
}

inline CiderResult cider_d(std::span<const TokenizedCaption> hyps,
                           std::span<const std::vector<TokenizedCaption>> refs) {
  return cider_d(hyps, refs, refs);
}

// ---------------------------------------------------------------------------
// Run-level evaluation.

struct InstanceScore {
  std::string id;
  double cider_d = 0.0;
};

struct EvalReport {
  std::string language;
  std::size_t instances = 0;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::vector<InstanceScore> per_instance;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["language"] = r.language;
  j["instances"] = r.instances;
  j["bleu1"] = r.bleu1;
  j["bleu4"] = r.bleu4;
  j["rougeL"] = r.rouge_l;
  j["ciderD"] = r.cider_d;
  j["per_instance_ciderD"] = nlohmann::ordered_json::array();
  for (const auto& s : r.per_instance) j["per_instance_ciderD"].push_back({{"id", s.id}, {"ciderD", s.cider_d}});
  return j;
}

using ReferenceMap = std::map<std::string, std::vector<std::string>>;

struct Prediction {
  std::string id;
  std::string caption;
};

// Accepts {"id": ["ref", ...]} or COCO annotations {"annotations": [{"image_id", "caption"}]}.
inline ReferenceMap references_from_json(const nlohmann::json& j) {
  ReferenceMap out;
  if (j.is_object() && j.contains("annotations") && j["annotations"].is_array()) {
    for (const auto& a : j["annotations"]) {
      const auto& id = a.at("image_id");
      out[id.is_string() ? id.get<std::string>() : id.dump()].push_back(a.at("caption").get<std::string>());
    }
    return out;
  }
  if (!j.is_object()) throw InputError("references must be a JSON object");
  for (const auto& [id, refs] : j.items()) out[id] = refs.get<std::vector<std::string>>();
  return out;
}

inline ReferenceMap load_references(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open references " + path);
  try {
    return references_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad references file " + path + ": " + e.what());
  }
}

// Reads a predictions jsonl. Lines holding a "run_manifest" object are
// provenance headers and are skipped; other lines need "id" and "chosen".
inline std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open predictions " + path);
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("run_manifest")) continue;
      out.push_back({j.at("id").get<std::string>(), j.at("chosen").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return out;
}

inline EvalReport evaluate(const std::vector<Prediction>& preds, const ReferenceMap& refs,
                           const std::string& language) {
  if (preds.empty()) throw InputError("no predictions to evaluate");
  std::vector<TokenizedCaption> hyps;
  std::vector<std::vector<TokenizedCaption>> tok_refs;
  for (const auto& p : preds) {
    const auto it = refs.find(p.id);
    if (it == refs.end() || it->second.empty()) throw InputError("no references for id '" + p.id + "'");
    hyps.push_back(tokenize(p.caption));
    std::vector<TokenizedCaption> rs;
    for (const auto& r : it->second) rs.push_back(tokenize(r));
    tok_refs.push_back(std::move(rs));
  }
  EvalReport rep;
  rep.language = language;
  rep.instances = preds.size();
  rep.bleu1 = bleu(hyps, tok_refs, 1);
  rep.bleu4 = bleu(hyps, tok_refs, 4);
  rep.rouge_l = rouge_l_corpus(hyps, tok_refs);
  const auto c = cider_d(hyps, tok_refs);
  rep.cider_d = c.mean;
  for (std::size_t i = 0; i < preds.size(); ++i) rep.per_instance.push_back({preds[i].id, c.per_instance[i]});
  return rep;
}

inline EvalReport evaluate_run(const std::string& predictions_path, const std::string& references_path,
                               const std::string& language) {
  return evaluate(load_predictions(predictions_path), load_references(references_path), language);
}

}  // namespace ragcap
