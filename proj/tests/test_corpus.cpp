#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "xmodal/corpus.hpp"

namespace fs = std::filesystem;
using Catch::Approx;
using testutil::tiny_corpus;
using testutil::vec;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("xmodal_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path file(const std::string& name) const { return path / name; }
};

}  // namespace

TEST_CASE("the hand-built corpus validates") {
  CHECK_NOTHROW(xmodal::validate_corpus(tiny_corpus()));
}

TEST_CASE("special tokens are the bracketed ones") {
  CHECK(xmodal::is_special_token("[CLS]"));
  CHECK(xmodal::is_special_token("[SEP]"));
  CHECK(xmodal::is_special_token("[MASK]"));
  CHECK_FALSE(xmodal::is_special_token("dog"));
  CHECK_FALSE(xmodal::is_special_token("["));
  CHECK_FALSE(xmodal::is_special_token("a]"));
}

TEST_CASE("token lookup and mask id") {
  const auto c = tiny_corpus();
  CHECK(c.vocab_size() == 9);
  CHECK(c.token_id("dog") == 4);
  CHECK(c.token_id("nope") == -1);
  CHECK(c.mask_token_id() == 2);
  xmodal::Corpus no_mask = c;
  no_mask.vocabulary[2] = "[PAD]";
  CHECK_THROWS_AS(no_mask.mask_token_id(), xmodal::ValidationError);
}

TEST_CASE("datapoints enumerate phrases in order") {
  const auto dps = xmodal::to_datapoints(tiny_corpus());
  REQUIRE(dps.size() == 3);
  CHECK(dps[0].example == 0);
  CHECK(dps[0].phrase == 0);
  CHECK(dps[1].example == 1);
  CHECK(dps[2].example == 2);
}

TEST_CASE("save and load round trip") {
  TempDir tmp;
  const auto original = tiny_corpus();
  const auto p = tmp.file("c.jsonl");
  xmodal::save_corpus(original, p.string());
  const auto loaded = xmodal::load_corpus(p.string());

  CHECK(loaded.feature_dim == original.feature_dim);
  CHECK(loaded.num_classes == original.num_classes);
  CHECK(loaded.class_labels == original.class_labels);
  CHECK(loaded.class_categories == original.class_categories);
  CHECK(loaded.vocabulary == original.vocabulary);
  REQUIRE(loaded.examples.size() == original.examples.size());
  for (std::size_t i = 0; i < loaded.examples.size(); ++i) {
    const auto& a = loaded.examples[i];
    const auto& b = original.examples[i];
    CHECK(a.image_id == b.image_id);
    REQUIRE(a.regions.size() == b.regions.size());
    for (std::size_t r = 0; r < a.regions.size(); ++r) {
      CHECK(a.regions[r].box.x1 == b.regions[r].box.x1);
      CHECK(a.regions[r].box.y2 == b.regions[r].box.y2);
      CHECK(a.regions[r].feature == b.regions[r].feature);
      CHECK(a.regions[r].silver == b.regions[r].silver);
      CHECK(a.regions[r].gold_class == b.regions[r].gold_class);
    }
    CHECK(a.sentence.tokens == b.sentence.tokens);
    REQUIRE(a.sentence.phrases.size() == b.sentence.phrases.size());
    for (std::size_t ph = 0; ph < a.sentence.phrases.size(); ++ph) {
      CHECK(a.sentence.phrases[ph].span_begin == b.sentence.phrases[ph].span_begin);
      CHECK(a.sentence.phrases[ph].span_end == b.sentence.phrases[ph].span_end);
      CHECK(a.sentence.phrases[ph].head_noun == b.sentence.phrases[ph].head_noun);
      CHECK(a.sentence.phrases[ph].gold_boxes.size() ==
            b.sentence.phrases[ph].gold_boxes.size());
    }
  }

  // Saving what was loaded reproduces the file byte for byte.
  const auto p2 = tmp.file("c2.jsonl");
  xmodal::save_corpus(loaded, p2.string());
  CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("optional gold and head noun survive the round trip as absent") {
  TempDir tmp;
  auto c = tiny_corpus();
  c.examples[2].regions[0].gold_class = -1;
  c.examples[2].sentence.phrases[0].head_noun = -1;
  const auto p = tmp.file("c.jsonl");
  xmodal::save_corpus(c, p.string());

  const std::string text = slurp(p);
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);  // header
  std::getline(lines, line);
  std::getline(lines, line);
  std::getline(lines, line);  // example 3
  CHECK(line.find("\"gold\"") == std::string::npos);
  CHECK(line.find("\"head_noun\"") == std::string::npos);

  const auto loaded = xmodal::load_corpus(p.string());
  CHECK(loaded.examples[2].regions[0].gold_class == -1);
  CHECK(loaded.examples[2].sentence.phrases[0].head_noun == -1);
}

TEST_CASE("loader rejects a file without a header") {
  TempDir tmp;
  const auto p = tmp.file("no_header.jsonl");
  std::ofstream(p) << "";
  CHECK_THROWS_AS(xmodal::load_corpus(p.string()), xmodal::ValidationError);
}

TEST_CASE("a header-only file is an empty corpus") {
  TempDir tmp;
  auto c = tiny_corpus();
  c.examples.clear();
  const auto p = tmp.file("header_only.jsonl");
  xmodal::save_corpus(c, p.string());
  const auto loaded = xmodal::load_corpus(p.string());
  CHECK(loaded.examples.empty());
  CHECK(loaded.vocab_size() == 9);
}

TEST_CASE("loader points at the offending line") {
  TempDir tmp;
  const auto p = tmp.file("broken.jsonl");
  {
    auto good = tiny_corpus();
    xmodal::save_corpus(good, p.string());
    std::ofstream app(p, std::ios::app);
    app << "{\"image_id\": \"x\", \"regions\": [], \"sentence\": {\"tokens\": [0], \"phrases\": []}}\n";
  }
  try {
    xmodal::load_corpus(p.string());
    FAIL("expected a validation error");
  } catch (const xmodal::ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 5") != std::string::npos);
    CHECK(msg.find("no regions") != std::string::npos);
  }
}

TEST_CASE("loader rejects malformed JSON with the line number") {
  TempDir tmp;
  const auto p = tmp.file("garbage.jsonl");
  {
    auto good = tiny_corpus();
    xmodal::save_corpus(good, p.string());
    std::ofstream app(p, std::ios::app);
    app << "this is not json\n";
  }
  try {
    xmodal::load_corpus(p.string());
    FAIL("expected a validation error");
  } catch (const xmodal::ValidationError& e) {
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }
}

TEST_CASE("loader rejects a wrong format version") {
  TempDir tmp;
  const auto p = tmp.file("v99.jsonl");
  std::ofstream(p) << "{\"version\": 99}\n";
  CHECK_THROWS_WITH(xmodal::load_corpus(p.string()),
                    Catch::Matchers::ContainsSubstring("version"));
}

TEST_CASE("validation rejects structural defects") {
  const auto base = tiny_corpus();

  auto c = base;
  c.examples[0].regions[0].silver(0) = 0.9;  // sum now 1.2
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("sums to"));

  c = base;
  c.examples[0].regions[0].silver(0) = -0.1;
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("negative"));

  c = base;
  c.examples[0].regions[0].box = {0.5, 0.5, 0.4, 0.9};
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("box"));

  c = base;
  c.examples[0].sentence.tokens[1] = 99;
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("token id 99"));

  c = base;
  c.examples[0].sentence.phrases[0].span_end = 9;
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("span"));

  c = base;
  c.examples[0].sentence.phrases.push_back({1, 3, {{0.1, 0.1, 0.2, 0.2}}, -1});
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("overlap"));

  c = base;
  c.examples[0].sentence.phrases[0].gold_boxes.clear();
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("gold boxes"));

  c = base;
  c.examples[0].regions[0].gold_class = 4;
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("gold class"));

  c = base;
  c.examples[0].regions[0].feature = vec({1, 0});
  CHECK_THROWS_WITH(xmodal::validate_corpus(c),
                    Catch::Matchers::ContainsSubstring("dimension"));
}

TEST_CASE("corpus statistics on the hand-built corpus") {
  const auto s = xmodal::corpus_stats(tiny_corpus());
  CHECK(s.num_images == 2);
  CHECK(s.sentences_per_image == Approx(1.5));
  CHECK(s.mean_phrases_per_sentence == Approx(1.0));
  CHECK(s.mean_objects_per_phrase == Approx(1.0));
  CHECK(s.fraction_single_object_phrases == Approx(1.0));
  CHECK(s.num_datapoints == 3);
}

TEST_CASE("mean region feature counts each image once") {
  // imgA appears with two captions; its regions must not be double counted.
  const auto m = xmodal::mean_region_feature(tiny_corpus());
  REQUIRE(m.size() == 3);
  CHECK(m(0) == Approx(1.0 / 3.0));
  CHECK(m(1) == Approx(1.0 / 3.0));
  CHECK(m(2) == Approx(1.0 / 3.0));
}

TEST_CASE("label matching writes gold onto the best proposal") {
  auto c = tiny_corpus();
  // Wipe the gold labels; label matching must reconstruct them from the
  // head nouns (dog, cat, car are all class labels).
  for (auto& ex : c.examples) {
    for (auto& r : ex.regions) r.gold_class = -1;
  }
  const auto sub = xmodal::label_match_subset(c);
  REQUIRE(sub.examples.size() == 3);
  CHECK(sub.examples[0].regions[0].gold_class == 0);   // dog
  CHECK(sub.examples[0].regions[1].gold_class == -1);  // untouched
  CHECK(sub.examples[1].regions[1].gold_class == 1);   // cat
  CHECK(sub.examples[2].regions[0].gold_class == 2);   // car
}

TEST_CASE("label matching drops unmatched phrases and empty examples") {
  auto c = tiny_corpus();
  // Point the first caption's head noun at a function word.
  c.examples[0].sentence.phrases[0].head_noun = 3;  // "a"
  const auto sub = xmodal::label_match_subset(c);
  REQUIRE(sub.examples.size() == 2);
  CHECK(sub.examples[0].image_id == "imgA");  // the cat caption survives
  CHECK(sub.examples[0].sentence.tokens[2] == 5);
  CHECK(sub.examples[1].image_id == "imgB");
}

TEST_CASE("label matching is case insensitive and idempotent") {
  auto c = tiny_corpus();
  c.class_labels[0] = "Dog";
  const auto once = xmodal::label_match_subset(c);
  CHECK(once.examples[0].regions[0].gold_class == 0);
  const auto twice = xmodal::label_match_subset(once);
  REQUIRE(twice.examples.size() == once.examples.size());
  for (std::size_t i = 0; i < once.examples.size(); ++i) {
    CHECK(twice.examples[i].regions.size() == once.examples[i].regions.size());
    for (std::size_t r = 0; r < once.examples[i].regions.size(); ++r) {
      CHECK(twice.examples[i].regions[r].gold_class ==
            once.examples[i].regions[r].gold_class);
    }
  }
}

TEST_CASE("label matching requires head noun annotations") {
  auto c = tiny_corpus();
  c.examples[1].sentence.phrases[0].head_noun = -1;
  CHECK_THROWS_AS(xmodal::label_match_subset(c), xmodal::ValidationError);
}

TEST_CASE("silver rank breaks ties toward the lower class") {
  const auto s = vec({0.4, 0.4, 0.1, 0.1});
  CHECK(xmodal::detail::silver_rank(s, 0) == 0);
  CHECK(xmodal::detail::silver_rank(s, 1) == 1);
  CHECK(xmodal::detail::silver_rank(s, 2) == 2);
  CHECK(xmodal::detail::silver_rank(s, 3) == 3);
}

TEST_CASE("agreement over the hand-built corpus") {
  const auto c = tiny_corpus();
  // All three gold labels sit at the silver argmax of their matched region.
  const auto perfect = xmodal::agreement_stats(c, {1, 2});
  CHECK(perfect[0] == Approx(1.0));
  CHECK(perfect[1] == Approx(1.0));

  // Demote one region's gold class to silver rank 1: top-1 drops by a third.
  auto noisy = c;
  noisy.examples[0].regions[0].silver = vec({0.1, 0.7, 0.1, 0.1});
  const auto degraded = xmodal::agreement_stats(noisy, {1, 2});
  CHECK(degraded[0] == Approx(2.0 / 3.0));
  CHECK(degraded[1] == Approx(1.0));
}

TEST_CASE("agreement rejects unmatched corpora and bad k") {
  auto c = tiny_corpus();
  c.examples[0].regions[0].gold_class = -1;
  CHECK_THROWS_AS(xmodal::agreement_stats(c, {1}), xmodal::ValidationError);
  CHECK_THROWS_AS(xmodal::agreement_stats(tiny_corpus(), {0}), std::invalid_argument);
  CHECK_THROWS_AS(xmodal::agreement_stats(tiny_corpus(), {5}), std::invalid_argument);
}
