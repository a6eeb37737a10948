#pragma once

// Per-image captioning flow: embed image -> retrieve top-K captions -> build
// the N-shot prompt -> generate c candidates -> rerank candidates by
// image-text similarity -> pick the best.
//
// The generator only ever sees the prompt string; image content reaches it
// exclusively through the retrieved captions.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragcap/embedding_store.hpp"
#include "ragcap/error.hpp"
#include "ragcap/knn_search.hpp"
#include "ragcap/prompt_builder.hpp"
#include "ragcap/provider_gateway.hpp"

namespace ragcap {

enum class PromptTemplate { retrieval, socratic };

inline std::string_view to_string(PromptTemplate t) { return t == PromptTemplate::retrieval ? "retrieval" : "socratic"; }

inline PromptTemplate parse_template(std::string_view s) {
  if (s == "retrieval") return PromptTemplate::retrieval;
  if (s == "socratic") return PromptTemplate::socratic;
  throw InputError("unknown template '" + std::string(s) + "' (expected retrieval or socratic)");
}

struct PipelineConfig {
  std::size_t k = 4;
  std::size_t n = 3;
  std::size_t c = 3;
  std::size_t beam_size = 3;
  std::size_t max_new_tokens = 40;
  std::string language = "en";
  PromptTemplate prompt_template = PromptTemplate::retrieval;
  ShotSet shots;
  unsigned parallelism = 0;  // concurrent images in a batch; 0 -> min(8, cores)

  void validate() const {
    if (k < 1) throw InputError("K must be at least 1");
    if (c < 1) throw InputError("c must be at least 1");
    if (shots.shots.size() < n)
      throw InputError("N=" + std::to_string(n) + " but the shots file holds only " +
                       std::to_string(shots.shots.size()) + " shots");
    if (prompt_template == PromptTemplate::socratic && shots.socratic.size() < n)
      throw InputError("the socratic template needs shots with socratic categories");
    (void)language_display_name(language);
    GenerationParams{c, beam_size, max_new_tokens, {}}.validate();
  }
};

struct RetrievedCaption {
  std::size_t rank = 0;
  std::size_t entry_id = 0;
  double score = 0.0;
  std::string text;

  bool operator==(const RetrievedCaption&) const = default;
};

struct ScoredCandidate {
  std::string text;
  double generation_score = 0.0;
  double rerank_score = 0.0;

  bool operator==(const ScoredCandidate&) const = default;
};

struct CaptionResult {
  std::string id;
  std::string language;
  PromptTemplate prompt_template = PromptTemplate::retrieval;
  std::string chosen;
  std::size_t chosen_index = 0;
  std::vector<ScoredCandidate> candidates;
  std::vector<RetrievedCaption> retrieved;
  std::optional<SocraticCategories> categories;
  std::string prompt;

  bool operator==(const CaptionResult&) const = default;
};

inline nlohmann::ordered_json to_json(const CaptionResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["language"] = r.language;
  j["template"] = to_string(r.prompt_template);
  j["chosen"] = r.chosen;
  j["chosen_index"] = r.chosen_index;
  j["candidates"] = nlohmann::ordered_json::array();
  for (const auto& c : r.candidates)
    j["candidates"].push_back(
        {{"text", c.text}, {"generation_score", c.generation_score}, {"rerank_score", c.rerank_score}});
  j["retrieved"] = nlohmann::ordered_json::array();
  for (const auto& h : r.retrieved)
    j["retrieved"].push_back({{"rank", h.rank}, {"entry_id", h.entry_id}, {"score", h.score}, {"text", h.text}});
  if (r.categories) {
    j["categories"] = {{"image_type", r.categories->image_type},
                       {"people_count", r.categories->people_count},
                       {"places", r.categories->places},
                       {"objects", r.categories->objects}};
  }
  j["prompt"] = r.prompt;
  return j;
}

struct RerankResult {
  std::vector<double> scores;
  std::size_t best = 0;
};

// Index of the largest score; ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline double inner_product(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

inline RerankResult rerank(const Embedding& image, const std::vector<std::string>& candidates, Gateway& gateway) {
  if (candidates.empty()) throw InputError("rerank needs at least one candidate");
  const auto embs = gateway.embed_texts(candidates);
  RerankResult out;
  out.scores.reserve(embs.size());
  for (const auto& e : embs) out.scores.push_back(inner_product(image.values, e.values));
  out.best = argmax_lowest(out.scores);
  return out;
}

struct ImageInput {
  std::string id;
  std::filesystem::path path;

  static ImageInput from_path(const std::filesystem::path& p) { return {p.stem().string(), p}; }
};

struct BatchError {
  std::size_t index = 0;
  std::string id;
  std::string stage;
  ErrorKind kind = ErrorKind::internal;
  std::string message;
};

struct BatchResult {
  std::vector<std::optional<CaptionResult>> results;  // parallel to the inputs
  std::vector<BatchError> errors;                     // ascending by index
};

// Zero-shot vocabularies used to fill the Socratic template.
struct SocraticVocabulary {
  std::vector<std::string> image_types{"photo", "cartoon", "sketch", "painting"};
  std::vector<std::string> people{"no people", "one person", "two people", "three people", "several people",
                                  "many people"};
  std::vector<std::string> places{"kitchen",  "bathroom",      "bedroom",  "living room", "street",   "park",
                                  "beach",    "field",         "forest",   "mountain",    "city",     "office",
                                  "restaurant", "airport",     "train station", "farm",   "pasture",  "barn",
                                  "river",    "lake",          "ski slope", "stadium",    "market",   "garden",
                                  "parking lot", "highway",    "harbor",   "desert",      "playground", "zoo"};
  std::vector<std::string> objects{
      "person",        "bicycle",      "car",        "motorcycle",   "airplane",     "bus",        "train",
      "truck",         "boat",         "traffic light", "fire hydrant", "stop sign", "parking meter", "bench",
      "bird",          "cat",          "dog",        "horse",        "sheep",        "cow",        "elephant",
      "bear",          "zebra",        "giraffe",    "backpack",     "umbrella",     "handbag",    "tie",
      "suitcase",      "frisbee",      "skis",       "snowboard",    "sports ball",  "kite",       "baseball bat",
      "baseball glove", "skateboard",  "surfboard",  "tennis racket", "bottle",      "wine glass", "cup",
      "fork",          "knife",        "spoon",      "bowl",         "banana",       "apple",      "sandwich",
      "orange",        "broccoli",     "carrot",     "hot dog",      "pizza",        "donut",      "cake",
      "chair",         "couch",        "potted plant", "bed",        "dining table", "toilet",     "tv",
      "laptop",        "mouse",        "remote",     "keyboard",     "cell phone",   "microwave",  "oven",
      "toaster",       "sink",         "refrigerator", "book",       "clock",        "vase",       "scissors",
      "teddy bear",    "hair drier",   "toothbrush"};
  std::size_t top_places = 3;
  std::size_t top_objects = 5;
};

class CaptionPipeline {
 public:
  CaptionPipeline(const EmbeddingStore& store, Gateway& gateway, PipelineConfig config,
                  SocraticVocabulary vocabulary = {})
      : store_(store), gateway_(gateway), config_(std::move(config)), vocab_(std::move(vocabulary)) {
    config_.validate();
    if (!store_.frozen()) throw Error(ErrorKind::internal, "pipeline needs a frozen store");
    if (store_.empty()) throw InputError("pipeline needs a non-empty store");
    const auto& m = gateway_.manifest();
    store_.require_provider(m.provider_id);
    if (m.embedding_dimension != store_.dimension()) throw DimensionError(store_.dimension(), m.embedding_dimension);
    language_name_ = language_display_name(config_.language);
    separator_ = m.eos_token;
    if (config_.prompt_template == PromptTemplate::socratic) embed_vocabulary();
  }

  const PipelineConfig& config() const noexcept { return config_; }

  CaptionResult caption(const ImageInput& image) {
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file_bytes(image.path);
    } catch (const Error& e) {
      throw StageError("load", e);
    }
    return caption_bytes(image.id, bytes);
  }

  CaptionResult caption_bytes(const std::string& id, std::span<const std::uint8_t> bytes) {
    CaptionResult result;
    result.id = id;
    result.language = config_.language;
    result.prompt_template = config_.prompt_template;

    Embedding image;
    try {
      image = gateway_.embed_image(bytes);
      if (config_.prompt_template == PromptTemplate::retrieval) {
        for (const auto& hit : top_k(store_, image, config_.k))
          result.retrieved.push_back({hit.rank, hit.entry_id, hit.score, store_.entry(hit.entry_id).text});
      }
    } catch (const Error& e) {
      throw StageError("retrieve", e);
    }

    if (config_.prompt_template == PromptTemplate::retrieval) {
      PromptSpec spec;
      spec.shots.assign(config_.shots.shots.begin(),
                        config_.shots.shots.begin() + static_cast<std::ptrdiff_t>(config_.n));
      for (const auto& r : result.retrieved) spec.query_retrieved.push_back(r.text);
      spec.language_name = language_name_;
      spec.separator = separator_;
      result.prompt = build_retrieval_prompt(spec);
    } else {
      result.categories = classify(image);
      std::vector<SocraticShot> shots(config_.shots.socratic.begin(),
                                      config_.shots.socratic.begin() + static_cast<std::ptrdiff_t>(config_.n));
      result.prompt = build_socratic_prompt(*result.categories, language_name_, shots, separator_);
    }

    std::vector<GenerationCandidate> generated;
    try {
      generated = gateway_.generate(result.prompt,
                                    {config_.c, config_.beam_size, config_.max_new_tokens, separator_});
    } catch (const Error& e) {
      throw StageError("generate", e);
    }
    std::vector<std::string> texts;
    for (auto& g : generated) {
      if (g.text.empty()) {
        const std::string fallback = result.retrieved.empty() ? fallback_caption(result) : result.retrieved.front().text;
        std::cerr << "warning: empty candidate for '" << id << "', using '" << fallback << "'\n";
        g.text = fallback;
      }
      texts.push_back(g.text);
    }

    RerankResult rr;
    try {
      rr = rerank(image, texts, gateway_);
    } catch (const Error& e) {
      throw StageError("rerank", e);
    }
    for (std::size_t i = 0; i < generated.size(); ++i)
      result.candidates.push_back({generated[i].text, generated[i].score, rr.scores[i]});
    result.chosen_index = rr.best;
    result.chosen = result.candidates[rr.best].text;
    return result;
  }

  // Output order equals input order; failures are isolated per image.
  BatchResult caption_batch(std::span<const ImageInput> images) {
    BatchResult out;
    out.results.resize(images.size());
    std::vector<std::optional<BatchError>> errors(images.size());
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned threads = config_.parallelism ? config_.parallelism : std::min(8u, hw);
    detail::parallel_for(images.size(), std::min<std::size_t>(threads, images.size()), [&](std::size_t i) {
      try {
        out.results[i] = caption(images[i]);
      } catch (const StageError& e) {
        errors[i] = BatchError{i, images[i].id, e.stage(), e.kind(), e.what()};
      } catch (const Error& e) {
        errors[i] = BatchError{i, images[i].id, "pipeline", e.kind(), e.what()};
      } catch (const std::exception& e) {
        errors[i] = BatchError{i, images[i].id, "pipeline", ErrorKind::internal, e.what()};
      }
    });
    for (auto& e : errors)
      if (e) out.errors.push_back(std::move(*e));
    return out;
  }

 private:
  static std::string fallback_caption(const CaptionResult& r) {
    return r.categories && !r.categories->image_type.empty() ? "a " + r.categories->image_type : "a picture";
  }

  void embed_vocabulary() {
    auto embed = [&](const std::vector<std::string>& words) {
      if (words.empty()) return std::vector<Embedding>{};
      return gateway_.embed_texts(words);
    };
    type_embs_ = embed(vocab_.image_types);
    people_embs_ = embed(vocab_.people);
    place_embs_ = embed(vocab_.places);
    object_embs_ = embed(vocab_.objects);
  }

  static std::vector<std::size_t> ranked(const Embedding& image, const std::vector<Embedding>& embs) {
    std::vector<double> s;
    for (const auto& e : embs) s.push_back(inner_product(image.values, e.values));
    std::vector<std::size_t> idx(s.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    return idx;
  }

  SocraticCategories classify(const Embedding& image) const {
    SocraticCategories c;
    if (const auto r = ranked(image, type_embs_); !r.empty()) c.image_type = vocab_.image_types[r.front()];
    if (const auto r = ranked(image, people_embs_); !r.empty()) c.people_count = vocab_.people[r.front()];
    const auto places = ranked(image, place_embs_);
    for (std::size_t i = 0; i < std::min(vocab_.top_places, places.size()); ++i)
      c.places.push_back(vocab_.places[places[i]]);
    const auto objects = ranked(image, object_embs_);
    for (std::size_t i = 0; i < std::min(vocab_.top_objects, objects.size()); ++i)
      c.objects.push_back(vocab_.objects[objects[i]]);
    return c;
  }

  const EmbeddingStore& store_;
  Gateway& gateway_;
  PipelineConfig config_;
  SocraticVocabulary vocab_;
  std::string language_name_;
  std::string separator_;
  std::vector<Embedding> type_embs_, people_embs_, place_embs_, object_embs_;
};

}  // namespace ragcap
