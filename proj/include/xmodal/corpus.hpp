#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "xmodal/errors.hpp"
#include "xmodal/geometry.hpp"
#include "xmodal/version.hpp"

namespace xmodal {

using Vec = Eigen::VectorXd;

// One detected region: proposal box, feature vector (dimension D), soft label
// distribution from the detector ("silver", dimension C) and an optional
// curated class id ("gold", -1 when absent).
struct Region {
  BoundingBox box;
  Vec feature;
  Vec silver;
  int gold_class = -1;
};

// A noun phrase of the sentence: token span [begin, end), the boxes it refers
// to, and the id of its head noun in the vocabulary (-1 when absent).
struct Phrase {
  int span_begin = 0;
  int span_end = 0;
  std::vector<BoundingBox> gold_boxes;
  int head_noun = -1;
};

struct Sentence {
  std::vector<int> tokens;
  std::vector<Phrase> phrases;
};

// One sentence grounded in one image. Images with several captions appear as
// several examples sharing an image_id (and carrying copies of the regions).
struct GroundedExample {
  std::string image_id;
  std::vector<Region> regions;
  Sentence sentence;
};

struct Corpus {
  int feature_dim = 0;   // D
  int num_classes = 0;   // C
  std::vector<std::string> class_labels;      // size C
  std::vector<std::string> class_categories;  // size C, coarse category per class
  std::vector<std::string> vocabulary;        // size V, special tokens included
  std::vector<GroundedExample> examples;

  int vocab_size() const { return static_cast<int>(vocabulary.size()); }

  int token_id(const std::string& word) const {
    for (std::size_t i = 0; i < vocabulary.size(); ++i) {
      if (vocabulary[i] == word) return static_cast<int>(i);
    }
    return -1;
  }

  int mask_token_id() const {
    const int id = token_id("[MASK]");
    if (id < 0) throw ValidationError("corpus vocabulary has no [MASK] token");
    return id;
  }
};

// Special tokens are the bracketed ones ([CLS], [SEP], [MASK], ...).
inline bool is_special_token(const std::string& word) {
  return word.size() >= 2 && word.front() == '[' && word.back() == ']';
}

// (example index, phrase index): the unit every diagnostic is scored on.
struct DataPoint {
  int example = 0;
  int phrase = 0;
};

inline std::vector<DataPoint> to_datapoints(const Corpus& c) {
  std::vector<DataPoint> out;
  for (std::size_t e = 0; e < c.examples.size(); ++e) {
    const auto& phrases = c.examples[e].sentence.phrases;
    for (std::size_t p = 0; p < phrases.size(); ++p) {
      out.push_back({static_cast<int>(e), static_cast<int>(p)});
    }
  }
  return out;
}

namespace detail {

inline std::string lc_where(std::size_t line) {
  return "corpus line " + std::to_string(line) + ": ";
}

}  // namespace detail

// Structural checks shared by the loader and the generator. `where` prefixes
// every message, so loader errors can point at a file line.
inline void validate_example(const GroundedExample& ex, int feature_dim,
                             int num_classes, int vocab_size,
                             const std::string& where) {
  if (ex.regions.empty()) {
    throw ValidationError(where + "example has no regions");
  }
  if (ex.sentence.tokens.empty()) {
    throw ValidationError(where + "example has no tokens");
  }
  for (const auto& r : ex.regions) {
    if (!box_valid(r.box)) throw ValidationError(where + "invalid region box");
    if (r.feature.size() != feature_dim) {
      throw ValidationError(where + "region feature has dimension " +
                            std::to_string(r.feature.size()) + ", expected " +
                            std::to_string(feature_dim));
    }
    if (r.silver.size() != num_classes) {
      throw ValidationError(where + "silver distribution has dimension " +
                            std::to_string(r.silver.size()) + ", expected " +
                            std::to_string(num_classes));
    }
    double sum = 0.0;
    for (int c = 0; c < r.silver.size(); ++c) {
      if (r.silver(c) < 0.0) {
        throw ValidationError(where + "silver distribution has a negative entry");
      }
      sum += r.silver(c);
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError(where + "silver distribution sums to " +
                            std::to_string(sum) + ", expected 1");
    }
    if (r.gold_class < -1 || r.gold_class >= num_classes) {
      throw ValidationError(where + "gold class out of range");
    }
  }
  const int T = static_cast<int>(ex.sentence.tokens.size());
  for (int t : ex.sentence.tokens) {
    if (t < 0 || t >= vocab_size) {
      throw ValidationError(where + "token id " + std::to_string(t) +
                            " outside vocabulary of size " + std::to_string(vocab_size));
    }
  }
  std::vector<std::pair<int, int>> spans;
  for (const auto& ph : ex.sentence.phrases) {
    if (!(0 <= ph.span_begin && ph.span_begin < ph.span_end && ph.span_end <= T)) {
      throw ValidationError(where + "phrase span out of sentence bounds");
    }
    if (ph.gold_boxes.empty()) {
      throw ValidationError(where + "phrase has no gold boxes");
    }
    for (const auto& b : ph.gold_boxes) {
      if (!box_valid(b)) throw ValidationError(where + "invalid gold box");
    }
    if (ph.head_noun < -1 || ph.head_noun >= vocab_size) {
      throw ValidationError(where + "phrase head noun out of vocabulary");
    }
    spans.emplace_back(ph.span_begin, ph.span_end);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) {
      throw ValidationError(where + "phrase spans overlap");
    }
  }
}

inline void validate_corpus(const Corpus& c) {
  if (c.feature_dim <= 0) throw ValidationError("corpus: feature_dim must be positive");
  if (c.num_classes < 2) throw ValidationError("corpus: need at least two classes");
  if (static_cast<int>(c.class_labels.size()) != c.num_classes ||
      static_cast<int>(c.class_categories.size()) != c.num_classes) {
    throw ValidationError("corpus: class label/category lists must have num_classes entries");
  }
  if (c.vocabulary.empty()) throw ValidationError("corpus: empty vocabulary");
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    validate_example(c.examples[i], c.feature_dim, c.num_classes, c.vocab_size(),
                     "example " + std::to_string(i) + ": ");
  }
}

namespace detail {

inline nlohmann::ordered_json box_to_json(const BoundingBox& b) {
  return nlohmann::ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

inline BoundingBox box_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) {
    throw ValidationError(where + "box must be an array [x1, y1, x2, y2]");
  }
  return BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                     j[3].get<double>()};
}

inline Vec vec_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + "expected a numeric array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

}  // namespace detail

// Line 1 is a header object; every further line is one grounded example.
inline void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);

  nlohmann::ordered_json header;
  header["version"] = kFormatVersion;
  header["feature_dim"] = c.feature_dim;
  header["num_classes"] = c.num_classes;
  header["vocab_size"] = c.vocab_size();
  header["class_labels"] = c.class_labels;
  header["class_categories"] = c.class_categories;
  header["vocabulary"] = c.vocabulary;
  out << header.dump() << "\n";

  for (const auto& ex : c.examples) {
    nlohmann::ordered_json j;
    j["image_id"] = ex.image_id;
    auto regions = nlohmann::ordered_json::array();
    for (const auto& r : ex.regions) {
      nlohmann::ordered_json jr;
      jr["box"] = detail::box_to_json(r.box);
      jr["feature"] = std::vector<double>(r.feature.data(), r.feature.data() + r.feature.size());
      jr["silver"] = std::vector<double>(r.silver.data(), r.silver.data() + r.silver.size());
      if (r.gold_class >= 0) jr["gold"] = r.gold_class;
      regions.push_back(std::move(jr));
    }
    j["regions"] = std::move(regions);
    nlohmann::ordered_json js;
    js["tokens"] = ex.sentence.tokens;
    auto phrases = nlohmann::ordered_json::array();
    for (const auto& ph : ex.sentence.phrases) {
      nlohmann::ordered_json jp;
      jp["span"] = nlohmann::ordered_json::array({ph.span_begin, ph.span_end});
      auto boxes = nlohmann::ordered_json::array();
      for (const auto& b : ph.gold_boxes) boxes.push_back(detail::box_to_json(b));
      jp["boxes"] = std::move(boxes);
      if (ph.head_noun >= 0) jp["head_noun"] = ph.head_noun;
      phrases.push_back(std::move(jp));
    }
    js["phrases"] = std::move(phrases);
    j["sentence"] = std::move(js);
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);

  std::string line;
  std::size_t lineno = 0;
  Corpus c;
  bool have_header = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(detail::lc_where(lineno) + e.what());
    }
    try {
      if (!have_header) {
        const int version = j.at("version").get<int>();
        if (version != kFormatVersion) {
          throw ValidationError("unsupported corpus version " + std::to_string(version));
        }
        c.feature_dim = j.at("feature_dim").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.class_labels = j.at("class_labels").get<std::vector<std::string>>();
        c.class_categories = j.at("class_categories").get<std::vector<std::string>>();
        c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        if (j.at("vocab_size").get<int>() != c.vocab_size()) {
          throw ValidationError("vocab_size disagrees with vocabulary length");
        }
        have_header = true;
        continue;
      }
      GroundedExample ex;
      ex.image_id = j.at("image_id").get<std::string>();
      for (const auto& jr : j.at("regions")) {
        Region r;
        r.box = detail::box_from_json(jr.at("box"), "");
        r.feature = detail::vec_from_json(jr.at("feature"), "");
        r.silver = detail::vec_from_json(jr.at("silver"), "");
        if (jr.contains("gold")) r.gold_class = jr.at("gold").get<int>();
        ex.regions.push_back(std::move(r));
      }
      const auto& js = j.at("sentence");
      ex.sentence.tokens = js.at("tokens").get<std::vector<int>>();
      for (const auto& jp : js.at("phrases")) {
        Phrase ph;
        const auto& span = jp.at("span");
        ph.span_begin = span.at(0).get<int>();
        ph.span_end = span.at(1).get<int>();
        for (const auto& jb : jp.at("boxes")) {
          ph.gold_boxes.push_back(detail::box_from_json(jb, ""));
        }
        if (jp.contains("head_noun")) ph.head_noun = jp.at("head_noun").get<int>();
        ex.sentence.phrases.push_back(std::move(ph));
      }
      validate_example(ex, c.feature_dim, c.num_classes, c.vocab_size(), "");
      c.examples.push_back(std::move(ex));
    } catch (const ValidationError& e) {
      throw ValidationError(detail::lc_where(lineno) + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(detail::lc_where(lineno) + e.what());
    }
  }
  if (!have_header) {
    throw ValidationError("corpus file has no header line: " + path);
  }
  validate_corpus(c);
  return c;
}

struct CorpusStats {
  std::size_t num_images = 0;
  double sentences_per_image = 0.0;
  double mean_phrases_per_sentence = 0.0;
  double mean_objects_per_phrase = 0.0;
  double fraction_single_object_phrases = 0.0;
  std::size_t num_datapoints = 0;
};

inline CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  std::unordered_set<std::string> images;
  std::size_t phrases = 0, boxes = 0, single = 0;
  for (const auto& ex : c.examples) {
    images.insert(ex.image_id);
    for (const auto& ph : ex.sentence.phrases) {
      ++phrases;
      boxes += ph.gold_boxes.size();
      if (ph.gold_boxes.size() == 1) ++single;
    }
  }
  s.num_images = images.size();
  s.num_datapoints = phrases;
  if (!images.empty()) {
    s.sentences_per_image = static_cast<double>(c.examples.size()) / images.size();
  }
  if (!c.examples.empty()) {
    s.mean_phrases_per_sentence = static_cast<double>(phrases) / c.examples.size();
  }
  if (phrases > 0) {
    s.mean_objects_per_phrase = static_cast<double>(boxes) / phrases;
    s.fraction_single_object_phrases = static_cast<double>(single) / phrases;
  }
  return s;
}

// Mean region feature over the corpus. Images repeated across captions count
// once: this is a property of the image set, not of the caption set.
inline Vec mean_region_feature(const Corpus& c) {
  Vec sum = Vec::Zero(c.feature_dim);
  std::size_t n = 0;
  std::unordered_set<std::string> seen;
  for (const auto& ex : c.examples) {
    if (!seen.insert(ex.image_id).second) continue;
    for (const auto& r : ex.regions) {
      sum += r.feature;
      ++n;
    }
  }
  if (n == 0) throw ValidationError("mean_region_feature: corpus has no regions");
  return sum / static_cast<double>(n);
}

namespace detail {

inline std::string fold_ascii(const std::string& s) {
  std::string out = s;
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

// Rank of `cls` when classes are sorted by descending probability, ties broken
// toward the lower class index. 0 means argmax.
inline int silver_rank(const Vec& silver, int cls) {
  int rank = 0;
  for (int c = 0; c < silver.size(); ++c) {
    if (silver(c) > silver(cls)) ++rank;
    else if (silver(c) == silver(cls) && c < cls) ++rank;
  }
  return rank;
}

}  // namespace detail

// Keeps only phrases whose head noun literally matches a class label
// (case-folded), and writes that class as gold onto the best-matching proposal
// of each of the phrase's gold boxes. Examples left with no phrases are
// dropped. Running it twice is a no-op the second time.
inline Corpus label_match_subset(const Corpus& c) {
  Corpus out;
  out.feature_dim = c.feature_dim;
  out.num_classes = c.num_classes;
  out.class_labels = c.class_labels;
  out.class_categories = c.class_categories;
  out.vocabulary = c.vocabulary;

  std::vector<std::string> folded_labels;
  folded_labels.reserve(c.class_labels.size());
  for (const auto& l : c.class_labels) folded_labels.push_back(detail::fold_ascii(l));

  for (std::size_t e = 0; e < c.examples.size(); ++e) {
    GroundedExample ex = c.examples[e];
    std::vector<Phrase> kept;
    for (const auto& ph : ex.sentence.phrases) {
      if (ph.head_noun < 0) {
        throw ValidationError("label_match_subset: example " + std::to_string(e) +
                              " has a phrase without a head noun annotation");
      }
      const std::string word = detail::fold_ascii(c.vocabulary[ph.head_noun]);
      int match = -1;
      for (std::size_t k = 0; k < folded_labels.size(); ++k) {
        if (folded_labels[k] == word) {
          match = static_cast<int>(k);
          break;
        }
      }
      if (match < 0) continue;
      std::vector<BoundingBox> proposal_boxes;
      proposal_boxes.reserve(ex.regions.size());
      for (const auto& r : ex.regions) proposal_boxes.push_back(r.box);
      for (const auto& gb : ph.gold_boxes) {
        ex.regions[best_match(gb, proposal_boxes)].gold_class = match;
      }
      kept.push_back(ph);
    }
    if (kept.empty()) continue;
    ex.sentence.phrases = std::move(kept);
    out.examples.push_back(std::move(ex));
  }
  return out;
}

// Fraction of datapoints whose gold label appears in the silver top-k of the
// matched region, for each k. Datapoints with several gold boxes contribute
// the mean of their per-box indicators.
inline std::vector<double> agreement_stats(const Corpus& c, const std::vector<int>& ks) {
  for (int k : ks) {
    if (k < 1 || k > c.num_classes) {
      throw std::invalid_argument("agreement_stats: k out of range");
    }
  }
  const auto dps = to_datapoints(c);
  if (dps.empty()) throw ValidationError("agreement_stats: corpus has no datapoints");

  std::vector<double> acc(ks.size(), 0.0);
  for (const auto& dp : dps) {
    const auto& ex = c.examples[dp.example];
    const auto& ph = ex.sentence.phrases[dp.phrase];
    std::vector<BoundingBox> proposal_boxes;
    proposal_boxes.reserve(ex.regions.size());
    for (const auto& r : ex.regions) proposal_boxes.push_back(r.box);

    std::vector<double> hit(ks.size(), 0.0);
    for (const auto& gb : ph.gold_boxes) {
      const auto& region = ex.regions[best_match(gb, proposal_boxes)];
      if (region.gold_class < 0) {
        throw ValidationError("agreement_stats: matched region has no gold label; "
                              "run label_match_subset first");
      }
      const int rank = detail::silver_rank(region.silver, region.gold_class);
      for (std::size_t i = 0; i < ks.size(); ++i) {
        if (rank < ks[i]) hit[i] += 1.0;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      acc[i] += hit[i] / static_cast<double>(ph.gold_boxes.size());
    }
  }
  for (double& a : acc) a /= static_cast<double>(dps.size());
  return acc;
}

}  // namespace xmodal
