#pragma once

// The default 3-shot demonstration set (Spanish targets). Mirrors
// fixtures/shots/default_shots.json.

#include <string_view>

#include <json.hpp>

#include "ragcap/prompt_builder.hpp"

namespace ragcap {

inline constexpr std::string_view kDefaultShotsJson = R"json([
  {
    "retrieved_texts": [
      "a horse grazing in a grassy field next to a barn",
      "a brown horse grazing in its pen and a red barn and water",
      "a pretty brown horse eating some grass in a bare field",
      "a horse is eating grass next to a barn in the middle of a pasture"
    ],
    "target_language": "spanish",
    "target_caption": "Un caballo marrón es grasa cerca de una casa roja",
    "socratic": {
      "image_type": "photo",
      "people_count": "no people",
      "places": [
        "pasture",
        "barn",
        "field"
      ],
      "objects": [
        "horse",
        "barn",
        "grass"
      ]
    }
  },
  {
    "retrieved_texts": [
      "a teal toilet is the center of this bathroom photo",
      "a small bathroom with brightly painted blue walls",
      "the bathroom has a splash of color with the blue tiles",
      "the sink is above a turquoise tile sink"
    ],
    "target_language": "spanish",
    "target_caption": "Un baño muy limpio y bien decorado",
    "socratic": {
      "image_type": "photo",
      "people_count": "no people",
      "places": [
        "bathroom"
      ],
      "objects": [
        "toilet",
        "sink",
        "tiles"
      ]
    }
  },
  {
    "retrieved_texts": [
      "a woman and child focus on a pink device in public",
      "a woman holding a small child while standing near a crowd",
      "a very cute lady posing with a small kid",
      "a young child with a cell phone and an adult"
    ],
    "target_language": "spanish",
    "target_caption": "Una mujer se acercó a mirar en su teléfono mientras está listo para tomar una foto",
    "socratic": {
      "image_type": "photo",
      "people_count": "two people",
      "places": [
        "street",
        "market"
      ],
      "objects": [
        "person",
        "cell phone",
        "handbag"
      ]
    }
  }
]
)json";

inline ShotSet default_shots() { return parse_shots(nlohmann::json::parse(kDefaultShotsJson)); }

}  // namespace ragcap
