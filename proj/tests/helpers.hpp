// Hand-built fixtures shared across the test binaries.
#pragma once

#include <string>
#include <vector>

#include "xmodal/corpus.hpp"

namespace testutil {

inline xmodal::Vec vec(std::initializer_list<double> vals) {
  xmodal::Vec v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v(i++) = x;
  return v;
}

// Two images, three captions, one single-box phrase each. Every value is
// chosen by hand so tests can assert exact numbers against it.
inline xmodal::Corpus tiny_corpus() {
  xmodal::Corpus c;
  c.feature_dim = 3;
  c.num_classes = 4;
  c.class_labels = {"dog", "cat", "car", "tree"};
  c.class_categories = {"animals", "animals", "vehicles", "scene"};
  c.vocabulary = {"[CLS]", "[SEP]", "[MASK]", "a", "dog", "cat", "car", "tree", "the"};

  xmodal::GroundedExample e1;
  e1.image_id = "imgA";
  e1.regions = {
      {{0.0, 0.0, 0.4, 0.4}, vec({1, 0, 0}), vec({0.7, 0.1, 0.1, 0.1}), 0},
      {{0.5, 0.5, 0.9, 0.9}, vec({0, 1, 0}), vec({0.1, 0.7, 0.1, 0.1}), 1},
  };
  e1.sentence.tokens = {0, 3, 4, 1};  // [CLS] a dog [SEP]
  e1.sentence.phrases = {{2, 3, {{0.0, 0.0, 0.4, 0.4}}, 4}};

  xmodal::GroundedExample e2;
  e2.image_id = "imgA";
  e2.regions = e1.regions;
  e2.sentence.tokens = {0, 3, 5, 1};  // [CLS] a cat [SEP]
  e2.sentence.phrases = {{2, 3, {{0.5, 0.5, 0.9, 0.9}}, 5}};

  xmodal::GroundedExample e3;
  e3.image_id = "imgB";
  e3.regions = {
      {{0.1, 0.1, 0.6, 0.6}, vec({0, 0, 1}), vec({0.1, 0.1, 0.6, 0.2}), 2},
  };
  e3.sentence.tokens = {0, 8, 6, 1};  // [CLS] the car [SEP]
  e3.sentence.phrases = {{2, 3, {{0.1, 0.1, 0.6, 0.6}}, 6}};

  c.examples = {e1, e2, e3};
  return c;
}

}  // namespace testutil
