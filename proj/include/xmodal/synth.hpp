#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/corpus.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

// Built-in taxonomy: 8 categories of 8 single-word classes each. A config
// taking num_classes = N with classes_per_category = k uses the first k words
// of each category until N classes are collected.
namespace taxonomy {

inline constexpr int kNumCategories = 8;
inline constexpr int kWordsPerCategory = 8;

inline const std::array<const char*, kNumCategories>& category_names() {
  static const std::array<const char*, kNumCategories> names = {
      "people", "animals", "vehicles", "clothing",
      "food",   "furniture", "instruments", "scene"};
  return names;
}

inline const std::array<std::array<const char*, kWordsPerCategory>, kNumCategories>&
words() {
  static const std::array<std::array<const char*, kWordsPerCategory>, kNumCategories>
      w = {{
          {"man", "woman", "boy", "girl", "child", "player", "worker", "rider"},
          {"dog", "cat", "horse", "bird", "cow", "sheep", "rabbit", "bear"},
          {"car", "bus", "truck", "bike", "train", "boat", "plane", "tram"},
          {"shirt", "hat", "jacket", "dress", "scarf", "boot", "glove", "coat"},
          {"apple", "bread", "cake", "pizza", "banana", "orange", "cheese", "melon"},
          {"chair", "table", "sofa", "bench", "desk", "shelf", "stool", "bed"},
          {"guitar", "drum", "piano", "violin", "flute", "horn", "banjo", "cello"},
          {"tree", "house", "fence", "rock", "bush", "tower", "bridge", "sign"},
      }};
  return w;
}

}  // namespace taxonomy

struct SceneConfig {
  int min_objects = 3;
  int max_objects = 5;
  int num_classes = 16;
  int classes_per_category = 4;
  int feature_dim = 16;
  double feature_noise = 0.05;  // stddev added to the class embedding
  int grid = 3;                 // objects sit in distinct cells of a grid x grid layout
  double box_jitter = 0.25;     // center jitter, as a fraction of a cell
  double overlap = 0.0;         // box half-extents scale by (1 + overlap)
};

// Detector label noise: with probability `rate` the silver argmax is moved off
// the gold class, either to a random other class of the same category or to a
// random other class overall. The argmax keeps `argmax_mass`; the rest spreads
// over the other classes with same-category classes favoured as temperature
// drops.
struct NoiseModel {
  enum class Kind { None, WithinCategory, Uniform };
  Kind kind = Kind::None;
  double rate = 0.0;
  double argmax_mass = 0.7;
  double temperature = 0.25;
};

inline const char* to_string(NoiseModel::Kind k) {
  switch (k) {
    case NoiseModel::Kind::None: return "none";
    case NoiseModel::Kind::WithinCategory: return "within_category";
    case NoiseModel::Kind::Uniform: return "uniform";
  }
  return "?";
}

inline NoiseModel::Kind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseModel::Kind::None;
  if (s == "within_category") return NoiseModel::Kind::WithinCategory;
  if (s == "uniform") return NoiseModel::Kind::Uniform;
  throw ValidationError("unknown noise kind: " + s);
}

struct SynthConfig {
  int num_images = 100;
  int captions_per_image = 2;
  std::uint64_t seed = 1;
  double oov_noun_rate = 0.0;  // chance a spoken noun becomes "thing"/"item"
  SceneConfig scene;
  NoiseModel noise;
};

struct ManifestEntry {
  std::string image_id;
  int region_index = 0;
  int gold = 0;
  int silver_argmax = 0;
  bool corrupted = false;
};

struct GeneratorManifest {
  std::vector<ManifestEntry> entries;
  std::size_t num_corrupted = 0;
  std::size_t within_category_fallbacks = 0;
};

struct SynthResult {
  Corpus corpus;
  GeneratorManifest manifest;
};

inline void validate_config(const SynthConfig& cfg) {
  const auto& sc = cfg.scene;
  if (cfg.num_images < 1) throw ValidationError("synth: num_images must be >= 1");
  if (cfg.captions_per_image < 1) throw ValidationError("synth: captions_per_image must be >= 1");
  if (!(cfg.oov_noun_rate >= 0.0 && cfg.oov_noun_rate <= 1.0)) {
    throw ValidationError("synth: oov_noun_rate must lie in [0, 1]");
  }
  if (sc.min_objects < 1 || sc.min_objects > sc.max_objects) {
    throw ValidationError("synth: need 1 <= min_objects <= max_objects");
  }
  if (sc.grid < 1 || sc.max_objects > sc.grid * sc.grid) {
    throw ValidationError("synth: max_objects cannot exceed grid cells");
  }
  if (sc.num_classes < 2) throw ValidationError("synth: need at least two classes");
  if (sc.classes_per_category < 1 || sc.classes_per_category > taxonomy::kWordsPerCategory) {
    throw ValidationError("synth: classes_per_category out of range");
  }
  if (sc.num_classes > taxonomy::kNumCategories * sc.classes_per_category) {
    throw ValidationError("synth: num_classes exceeds the taxonomy at this classes_per_category");
  }
  if (sc.feature_dim < 1) throw ValidationError("synth: feature_dim must be >= 1");
  if (sc.feature_noise < 0.0) throw ValidationError("synth: feature_noise must be >= 0");
  if (!(sc.box_jitter >= 0.0 && sc.box_jitter <= 0.5)) {
    throw ValidationError("synth: box_jitter must lie in [0, 0.5]");
  }
  if (!(sc.overlap >= 0.0 && sc.overlap <= 1.0)) {
    throw ValidationError("synth: overlap must lie in [0, 1]");
  }
  const auto& nm = cfg.noise;
  if (!(nm.rate >= 0.0 && nm.rate <= 1.0)) {
    throw ValidationError("synth: noise rate must lie in [0, 1]");
  }
  // Above 0.5 the intended argmax always wins against the spread mass.
  if (!(nm.argmax_mass > 0.5 && nm.argmax_mass <= 1.0)) {
    throw ValidationError("synth: argmax_mass must lie in (0.5, 1]");
  }
  if (!(nm.temperature > 0.0)) throw ValidationError("synth: temperature must be positive");
}

// Class the silver argmax lands on for a region whose gold class is `gold`.
// A within-category draw with no category sibling falls back to gold;
// `fell_back` reports that so the generator can log it.
inline int confusion_target(int gold, const NoiseModel& noise,
                            const std::vector<std::string>& class_categories,
                            Rng& rng, bool* fell_back = nullptr) {
  if (fell_back) *fell_back = false;
  const int C = static_cast<int>(class_categories.size());
  if (gold < 0 || gold >= C) throw std::invalid_argument("confusion_target: gold out of range");
  if (noise.kind == NoiseModel::Kind::None || noise.rate <= 0.0) return gold;
  if (!rng.bernoulli(noise.rate)) return gold;

  if (noise.kind == NoiseModel::Kind::Uniform) {
    const int pick = static_cast<int>(rng.uniform_index(C - 1));
    return pick >= gold ? pick + 1 : pick;
  }
  std::vector<int> siblings;
  for (int c = 0; c < C; ++c) {
    if (c != gold && class_categories[c] == class_categories[gold]) siblings.push_back(c);
  }
  if (siblings.empty()) {
    if (fell_back) *fell_back = true;
    return gold;
  }
  return siblings[rng.uniform_index(siblings.size())];
}

namespace detail {

// argmax keeps argmax_mass; the remaining mass spreads over the other classes,
// weighted toward the argmax's own category as temperature decreases.
inline Vec build_silver(int argmax, const NoiseModel& noise,
                        const std::vector<std::string>& cats) {
  const int C = static_cast<int>(cats.size());
  Vec silver = Vec::Zero(C);
  const double eps = 1.0 - noise.argmax_mass;
  silver(argmax) = noise.argmax_mass;
  if (eps <= 0.0) return silver;
  double total = 0.0;
  Vec w = Vec::Zero(C);
  for (int c = 0; c < C; ++c) {
    if (c == argmax) continue;
    const double affinity = cats[c] == cats[argmax] ? 1.0 : 0.0;
    w(c) = std::exp(affinity / noise.temperature);
    total += w(c);
  }
  for (int c = 0; c < C; ++c) {
    if (c != argmax) silver(c) = eps * w(c) / total;
  }
  return silver;
}

struct CaptionTemplate {
  std::vector<std::string> words;  // "*" marks a noun slot
  int slots = 0;
};

inline const std::vector<std::vector<CaptionTemplate>>& caption_templates() {
  auto make = [](std::initializer_list<const char*> ws) {
    CaptionTemplate t;
    for (const char* w : ws) {
      t.words.emplace_back(w);
      if (t.words.back() == "*") ++t.slots;
    }
    return t;
  };
  static const std::vector<std::vector<CaptionTemplate>> tpl = {
      {},  // index 0 unused
      {make({"[CLS]", "a", "photo", "of", "a", "*", "[SEP]"}),
       make({"[CLS]", "there", "is", "a", "*", "here", "[SEP]"})},
      {make({"[CLS]", "a", "*", "next", "to", "a", "*", "[SEP]"}),
       make({"[CLS]", "a", "*", "and", "a", "*", "[SEP]"}),
       make({"[CLS]", "a", "photo", "of", "a", "*", "and", "a", "*", "[SEP]"})},
      {make({"[CLS]", "a", "*", "a", "*", "and", "a", "*", "[SEP]"}),
       make({"[CLS]", "there", "is", "a", "*", "a", "*", "and", "a", "*", "[SEP]"})},
  };
  return tpl;
}

inline std::string image_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img%05d", i);
  return buf;
}

}  // namespace detail

// Longest caption any template can produce; model max_tokens must cover this.
inline constexpr int kMaxCaptionTokens = 12;

inline SynthResult generate_corpus(const SynthConfig& cfg) {
  validate_config(cfg);
  const auto& sc = cfg.scene;

  SynthResult res;
  Corpus& c = res.corpus;
  c.feature_dim = sc.feature_dim;
  c.num_classes = sc.num_classes;
  for (int i = 0; i < sc.num_classes; ++i) {
    const int cat = i / sc.classes_per_category;
    const int word = i % sc.classes_per_category;
    c.class_labels.emplace_back(taxonomy::words()[cat][word]);
    c.class_categories.emplace_back(taxonomy::category_names()[cat]);
  }
  c.vocabulary = {"[CLS]", "[SEP]", "[MASK]", "a",    "photo", "of",   "there",
                  "is",    "here",  "next",   "to",   "and",   "thing", "item"};
  const int first_class_token = static_cast<int>(c.vocabulary.size());
  for (const auto& label : c.class_labels) c.vocabulary.push_back(label);
  const int thing_id = c.token_id("thing");
  const int item_id = c.token_id("item");

  // Streams are independent, so e.g. raising the noise rate re-labels regions
  // without moving a single box or changing a single caption.
  Rng root(cfg.seed);
  Rng layout_rng = root.fork(1);
  Rng feature_rng = root.fork(2);
  Rng caption_rng = root.fork(3);
  Rng noise_rng = root.fork(4);
  Rng classemb_rng = root.fork(5);

  Eigen::MatrixXd class_emb(sc.feature_dim, sc.num_classes);
  for (int cls = 0; cls < sc.num_classes; ++cls) {
    for (int d = 0; d < sc.feature_dim; ++d) class_emb(d, cls) = classemb_rng.normal();
  }

  const double cell = 1.0 / sc.grid;
  const auto& templates = detail::caption_templates();

  for (int img = 0; img < cfg.num_images; ++img) {
    const std::string image_id = detail::image_name(img);
    const int n = layout_rng.uniform_int(sc.min_objects, sc.max_objects);
    const auto cells = layout_rng.sample_without_replacement(sc.grid * sc.grid, n);

    std::vector<Region> regions(n);
    std::vector<int> object_class(n);
    for (int i = 0; i < n; ++i) {
      const int cls = static_cast<int>(layout_rng.uniform_index(sc.num_classes));
      object_class[i] = cls;

      const int gx = cells[i] % sc.grid;
      const int gy = cells[i] / sc.grid;
      const double cx = (gx + 0.5) * cell +
                        layout_rng.uniform(-sc.box_jitter * cell, sc.box_jitter * cell);
      const double cy = (gy + 0.5) * cell +
                        layout_rng.uniform(-sc.box_jitter * cell, sc.box_jitter * cell);
      const double hw = cell * (1.0 + sc.overlap) * layout_rng.uniform(0.3, 0.48);
      const double hh = cell * (1.0 + sc.overlap) * layout_rng.uniform(0.3, 0.48);
      Region& r = regions[i];
      r.box = BoundingBox{std::max(0.0, cx - hw), std::max(0.0, cy - hh),
                          std::min(1.0, cx + hw), std::min(1.0, cy + hh)};

      r.feature = Vec(sc.feature_dim);
      for (int d = 0; d < sc.feature_dim; ++d) {
        r.feature(d) = class_emb(d, cls) + feature_rng.normal(0.0, sc.feature_noise);
      }

      bool fell_back = false;
      const int argmax =
          confusion_target(cls, cfg.noise, c.class_categories, noise_rng, &fell_back);
      r.silver = detail::build_silver(argmax, cfg.noise, c.class_categories);
      r.gold_class = cls;

      ManifestEntry me;
      me.image_id = image_id;
      me.region_index = i;
      me.gold = cls;
      me.silver_argmax = argmax;
      me.corrupted = argmax != cls;
      if (me.corrupted) ++res.manifest.num_corrupted;
      if (fell_back) ++res.manifest.within_category_fallbacks;
      res.manifest.entries.push_back(std::move(me));
    }

    for (int cap = 0; cap < cfg.captions_per_image; ++cap) {
      const int k = caption_rng.uniform_int(1, std::min(3, n));
      const auto chosen = caption_rng.sample_without_replacement(n, k);
      const auto& tpl = templates[k][caption_rng.uniform_index(templates[k].size())];

      GroundedExample ex;
      ex.image_id = image_id;
      ex.regions = regions;
      int slot = 0;
      for (const auto& w : tpl.words) {
        if (w != "*") {
          ex.sentence.tokens.push_back(c.token_id(w));
          continue;
        }
        const int obj = chosen[slot++];
        int spoken;
        if (caption_rng.bernoulli(cfg.oov_noun_rate)) {
          spoken = caption_rng.bernoulli(0.5) ? thing_id : item_id;
        } else {
          spoken = first_class_token + object_class[obj];
        }
        Phrase ph;
        ph.span_begin = static_cast<int>(ex.sentence.tokens.size());
        ph.span_end = ph.span_begin + 1;
        ph.gold_boxes.push_back(regions[obj].box);
        ph.head_noun = spoken;
        ex.sentence.tokens.push_back(spoken);
        ex.sentence.phrases.push_back(std::move(ph));
      }
      c.examples.push_back(std::move(ex));
    }
  }

  validate_corpus(c);
  return res;
}

inline void save_manifest(const GeneratorManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["image_id"] = e.image_id;
    j["region_index"] = e.region_index;
    j["gold"] = e.gold;
    j["silver_argmax"] = e.silver_argmax;
    j["corrupted"] = e.corrupted;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline GeneratorManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  GeneratorManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.image_id = j.at("image_id").get<std::string>();
      e.region_index = j.at("region_index").get<int>();
      e.gold = j.at("gold").get<int>();
      e.silver_argmax = j.at("silver_argmax").get<int>();
      e.corrupted = j.at("corrupted").get<bool>();
      if (e.corrupted) ++m.num_corrupted;
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return m;
}

}  // namespace xmodal
