#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmodal {

// Axis-aligned box in normalized image coordinates.
// (x1, y1) is the top-left corner, (x2, y2) the bottom-right.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
};

inline bool box_valid(const BoundingBox& b) {
  return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 1.0 && b.y2 <= 1.0 &&
         b.x1 < b.x2 && b.y1 < b.y2;
}

inline void require_valid(const BoundingBox& b, const char* what = "box") {
  if (!box_valid(b)) {
    throw std::invalid_argument(std::string(what) +
                                ": expected 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1");
  }
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

// Intersection over union, symmetric, in [0, 1].
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  require_valid(a, "iou: first box");
  require_valid(b, "iou: second box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

// Intersection over target: the denominator is the *first* argument's area.
// Asymmetric on purpose, so a large candidate covering a small target scores 1
// even though their IoU is tiny.
inline double iot(const BoundingBox& target, const BoundingBox& candidate) {
  require_valid(target, "iot: target box");
  require_valid(candidate, "iot: candidate box");
  return intersection_area(target, candidate) / target.area();
}

enum class OverlapMeasure { IoU, IoT };

inline const char* to_string(OverlapMeasure m) {
  return m == OverlapMeasure::IoU ? "iou" : "iot";
}

inline OverlapMeasure overlap_measure_from_string(const std::string& s) {
  if (s == "iou") return OverlapMeasure::IoU;
  if (s == "iot") return OverlapMeasure::IoT;
  throw std::invalid_argument("unknown overlap measure: " + s);
}

// Which measure to threshold with, and at what level.
struct OverlapPolicy {
  OverlapMeasure measure = OverlapMeasure::IoT;
  double tau = 0.5;
};

inline void require_valid(const OverlapPolicy& p) {
  if (!(p.tau >= 0.0 && p.tau <= 1.0)) {
    throw std::invalid_argument("overlap policy: tau must lie in [0, 1]");
  }
}

inline double overlap(OverlapMeasure m, const BoundingBox& target,
                      const BoundingBox& candidate) {
  return m == OverlapMeasure::IoU ? iou(target, candidate) : iot(target, candidate);
}

// Indices of all regions whose overlap with the target reaches the threshold.
// A region identical to the target always qualifies (measure 1). Regions
// disjoint from the target never qualify, even at tau = 0; tau = 0 therefore
// means "every intersecting region".
inline std::vector<std::size_t> comask_set(const BoundingBox& target,
                                           const std::vector<BoundingBox>& regions,
                                           const OverlapPolicy& policy) {
  require_valid(policy);
  require_valid(target, "comask_set: target");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (intersection_area(target, regions[i]) <= 0.0) continue;
    if (overlap(policy.measure, target, regions[i]) >= policy.tau) out.push_back(i);
  }
  return out;
}

// Proposal with the highest IoU against the gold box; ties break to the lowest
// index, so the result is deterministic for duplicate proposals.
inline std::size_t best_match(const BoundingBox& gold,
                              const std::vector<BoundingBox>& proposals) {
  if (proposals.empty()) {
    throw std::invalid_argument("best_match: no proposals");
  }
  std::size_t best = 0;
  double best_iou = iou(gold, proposals[0]);
  for (std::size_t i = 1; i < proposals.size(); ++i) {
    const double v = iou(gold, proposals[i]);
    if (v > best_iou) {
      best_iou = v;
      best = i;
    }
  }
  return best;
}

}  // namespace xmodal
