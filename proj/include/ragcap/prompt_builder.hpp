#pragma once

// Few-shot prompt rendering.
//
// Retrieval template, one block per shot plus one open block for the query:
//
//   I am an intelligent image captioning bot. Similar images have the
//   following captions: <c1><sep> <c2><sep> ... A creative short caption I
//   can generate to describe this image in <language> is: <caption><sep>
//
// The query block stops right after "is:". Captions are inserted verbatim.

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragcap/error.hpp"

namespace ragcap {

inline constexpr std::string_view kDefaultSeparator = "</s>";
inline constexpr std::string_view kBotPreamble = "I am an intelligent image captioning bot.";

struct PromptShot {
  std::vector<std::string> retrieved_texts;
  std::string target_language;  // display name, e.g. "spanish"
  std::string target_caption;

  bool operator==(const PromptShot&) const = default;
};

struct PromptSpec {
  std::vector<PromptShot> shots;
  std::vector<std::string> query_retrieved;  // retrieval rank order
  std::string language_name;
  std::string separator = std::string(kDefaultSeparator);
};

// Visual categories for the Socratic-style template.
struct SocraticCategories {
  std::string image_type;    // e.g. "photo"
  std::string people_count;  // e.g. "no people", "one person", "two people"
  std::vector<std::string> places;
  std::vector<std::string> objects;

  bool operator==(const SocraticCategories&) const = default;
};

struct SocraticShot {
  SocraticCategories categories;
  std::string target_language;
  std::string target_caption;

  bool operator==(const SocraticShot&) const = default;
};

namespace detail {

inline void append_open_tail(std::string& out, std::string_view language) {
  out += "A creative short caption I can generate to describe this image in ";
  out += language;
  out += " is:";
}

inline void append_closed_tail(std::string& out, std::string_view language, std::string_view caption,
                               std::string_view sep) {
  append_open_tail(out, language);
  out += ' ';
  out += caption;
  out += sep;
  out += ' ';
}

inline void append_retrieval_head(std::string& out, const std::vector<std::string>& captions,
                                  std::string_view sep) {
  out += kBotPreamble;
  out += " Similar images have the following captions: ";
  for (const auto& c : captions) {
    out += c;
    out += sep;
    out += ' ';
  }
}

// "a, b, or c" / "a or b" / "a"
inline std::string join_alternatives(const std::vector<std::string>& items, std::string_view conj) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) {
      if (items.size() > 2) out += ',';
      out += ' ';
      if (i + 1 == items.size()) {
        out += conj;
        out += ' ';
      }
    }
    out += items[i];
  }
  return out;
}

inline void append_socratic_head(std::string& out, const SocraticCategories& c) {
  out += kBotPreamble;
  out += ' ';
  const std::string type = c.image_type.empty() ? std::string("image") : c.image_type;
  if (!c.image_type.empty()) out += "This image is a " + c.image_type + ". ";
  if (!c.people_count.empty()) {
    const bool singular = c.people_count.rfind("one ", 0) == 0 || c.people_count == "a person";
    out += singular ? "There is " : "There are ";
    out += c.people_count + ". ";
  }
  if (!c.places.empty()) out += "I think this photo was taken at a " + join_alternatives(c.places, "or") + ". ";
  if (!c.objects.empty()) {
    std::string objs;
    for (std::size_t i = 0; i < c.objects.size(); ++i) objs += (i ? ", " : "") + c.objects[i];
    out += "I think there might be a " + objs + " in this " + type + ". ";
  }
}

}  // namespace detail

inline std::string build_retrieval_prompt(const PromptSpec& spec) {
  if (spec.query_retrieved.empty()) throw InputError("prompt needs at least one retrieved caption");
  if (spec.language_name.empty()) throw InputError("prompt language is empty");
  std::string out;
  for (std::size_t i = 0; i < spec.shots.size(); ++i) {
    const auto& shot = spec.shots[i];
    if (shot.retrieved_texts.empty() || shot.target_caption.empty())
      throw InputError("shot " + std::to_string(i) + " needs retrieved captions and a target caption");
    detail::append_retrieval_head(out, shot.retrieved_texts, spec.separator);
    detail::append_closed_tail(out, shot.target_language, shot.target_caption, spec.separator);
  }
  detail::append_retrieval_head(out, spec.query_retrieved, spec.separator);
  detail::append_open_tail(out, spec.language_name);
  return out;
}

inline std::string build_socratic_prompt(const SocraticCategories& query, std::string_view language_name,
                                         const std::vector<SocraticShot>& shots,
                                         std::string_view separator = kDefaultSeparator) {
  if (language_name.empty()) throw InputError("prompt language is empty");
  std::string out;
  for (std::size_t i = 0; i < shots.size(); ++i) {
    if (shots[i].target_caption.empty())
      throw InputError("socratic shot " + std::to_string(i) + " has an empty target caption");
    detail::append_socratic_head(out, shots[i].categories);
    detail::append_closed_tail(out, shots[i].target_language, shots[i].target_caption, separator);
  }
  detail::append_socratic_head(out, query);
  detail::append_open_tail(out, language_name);
  return out;
}

// ---------------------------------------------------------------------------
// Language display names (table version 1: the 36 XM3600 languages).

struct LanguageName {
  std::string_view code;
  std::string_view name;
};

inline constexpr int kLanguageTableVersion = 1;

inline constexpr std::array<LanguageName, 36> kLanguageNames{{
    {"ar", "arabic"},     {"bn", "bengali"},   {"cs", "czech"},     {"da", "danish"},
    {"de", "german"},     {"el", "greek"},     {"en", "english"},   {"es", "spanish"},
    {"fa", "persian"},    {"fi", "finnish"},   {"fil", "filipino"}, {"fr", "french"},
    {"he", "hebrew"},     {"hi", "hindi"},     {"hr", "croatian"},  {"hu", "hungarian"},
    {"id", "indonesian"}, {"it", "italian"},   {"ja", "japanese"},  {"ko", "korean"},
    {"mi", "maori"},      {"nl", "dutch"},     {"no", "norwegian"}, {"pl", "polish"},
    {"pt", "portuguese"}, {"quz", "quechua"},  {"ro", "romanian"},  {"ru", "russian"},
    {"sv", "swedish"},    {"sw", "swahili"},   {"te", "telugu"},    {"th", "thai"},
    {"tr", "turkish"},    {"uk", "ukrainian"}, {"vi", "vietnamese"}, {"zh", "chinese"},
}};

inline std::string language_display_name(std::string_view code) {
  for (const auto& l : kLanguageNames)
    if (l.code == code) return std::string(l.name);
  std::string supported;
  for (const auto& l : kLanguageNames) {
    if (!supported.empty()) supported += ", ";
    supported += l.code;
  }
  throw InputError("unsupported language code '" + std::string(code) + "'; supported: " + supported);
}

// ---------------------------------------------------------------------------
// Shots file: JSON array of {"retrieved_texts", "target_language",
// "target_caption", optional "socratic": {"image_type", "people_count",
// "places", "objects"}}.

struct ShotSet {
  std::vector<PromptShot> shots;
  // Parallel to `shots`; empty when the file carries no socratic categories.
  std::vector<SocraticShot> socratic;
};

inline ShotSet parse_shots(const nlohmann::json& j) {
  if (!j.is_array()) throw InputError("shots file must be a JSON array");
  ShotSet out;
  bool all_socratic = true;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& s = j[i];
    try {
      PromptShot shot;
      shot.retrieved_texts = s.at("retrieved_texts").get<std::vector<std::string>>();
      shot.target_language = s.at("target_language").get<std::string>();
      shot.target_caption = s.at("target_caption").get<std::string>();
      if (shot.retrieved_texts.empty() || shot.target_caption.empty())
        throw InputError("shot " + std::to_string(i) + " needs retrieved_texts and target_caption");
      if (s.contains("socratic")) {
        const auto& c = s["socratic"];
        SocraticShot ss;
        ss.categories.image_type = c.value("image_type", "");
        ss.categories.people_count = c.value("people_count", "");
        ss.categories.places = c.value("places", std::vector<std::string>{});
        ss.categories.objects = c.value("objects", std::vector<std::string>{});
        ss.target_language = shot.target_language;
        ss.target_caption = shot.target_caption;
        out.socratic.push_back(std::move(ss));
      } else {
        all_socratic = false;
      }
      out.shots.push_back(std::move(shot));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("shot " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!all_socratic) out.socratic.clear();
  return out;
}

inline nlohmann::ordered_json shots_to_json(const ShotSet& set) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < set.shots.size(); ++i) {
    const auto& s = set.shots[i];
    nlohmann::ordered_json j;
    j["retrieved_texts"] = s.retrieved_texts;
    j["target_language"] = s.target_language;
    j["target_caption"] = s.target_caption;
    if (i < set.socratic.size()) {
      const auto& c = set.socratic[i].categories;
      j["socratic"] = {{"image_type", c.image_type},
                       {"people_count", c.people_count},
                       {"places", c.places},
                       {"objects", c.objects}};
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace ragcap
