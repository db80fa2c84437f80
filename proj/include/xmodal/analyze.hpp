#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "xmodal/corpus.hpp"
#include "xmodal/diagnose.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/stats.hpp"

namespace xmodal {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
};

// Two-sided paired t-test. Identical samples give (0, 1); a nonzero mean
// difference with zero variance gives (+/-inf, 0).
inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_ttest: samples must have equal length");
  }
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_ttest: need at least two pairs");

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ssd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ssd += d * d;
  }
  const double sd = std::sqrt(ssd / static_cast<double>(n - 1));

  TTestResult r;
  if (sd == 0.0) {
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, static_cast<double>(n - 1));
  return r;
}

struct AggregateRecord {
  std::string diagnostic;
  std::string setup;
  double tau = -1.0;
  std::string measure;
  double mean_bits = 0.0;
  double std_bits = 0.0;
  std::size_t count = 0;
  double rel_change_pct = 0.0;  // vs the same diagnostic's None setup
  double t_vs_none = 0.0;
  double p_vs_none = 1.0;
};

namespace detail {

inline int setup_rank(const std::string& s) {
  if (s == "none") return 0;
  if (s == "object" || s == "phrase") return 1;
  if (s == "all") return 2;
  return 3;
}

}  // namespace detail

// Groups records by (diagnostic, setup, tau, measure), pairs every group with
// its diagnostic's None group datapoint by datapoint, and reports mean, std,
// relative change and a paired t-test against that baseline.
inline std::vector<AggregateRecord> aggregate(const DiagnosticResult& result) {
  if (result.records.empty()) throw ValidationError("aggregate: no records");

  using Key = std::tuple<std::string, std::string, double, std::string>;
  std::map<Key, std::vector<const DiagnosticRecord*>> groups;
  for (const auto& rec : result.records) {
    groups[{rec.diagnostic, rec.setup, rec.tau, rec.measure}].push_back(&rec);
  }

  // Per-diagnostic baseline losses indexed by datapoint order.
  std::map<std::string, std::vector<const DiagnosticRecord*>> baselines;
  for (auto& [key, recs] : groups) {
    auto sorted = recs;
    std::sort(sorted.begin(), sorted.end(),
              [](const DiagnosticRecord* x, const DiagnosticRecord* y) {
                return x->datapoint_id < y->datapoint_id;
              });
    if (std::get<1>(key) == "none") baselines[std::get<0>(key)] = sorted;
    groups[key] = std::move(sorted);
  }
  for (const auto& [key, recs] : groups) {
    if (!baselines.count(std::get<0>(key))) {
      throw ValidationError("aggregate: diagnostic " + std::get<0>(key) +
                            " has no baseline (none) records");
    }
  }

  std::vector<Key> order;
  for (const auto& [key, recs] : groups) order.push_back(key);
  std::sort(order.begin(), order.end(), [](const Key& x, const Key& y) {
    const auto tx = std::make_tuple(std::get<0>(x), detail::setup_rank(std::get<1>(x)),
                                    std::get<2>(x), std::get<3>(x));
    const auto ty = std::make_tuple(std::get<0>(y), detail::setup_rank(std::get<1>(y)),
                                    std::get<2>(y), std::get<3>(y));
    return tx < ty;
  });

  std::vector<AggregateRecord> out;
  for (const Key& key : order) {
    const auto& recs = groups[key];
    const auto& base = baselines[std::get<0>(key)];

    AggregateRecord ar;
    ar.diagnostic = std::get<0>(key);
    ar.setup = std::get<1>(key);
    ar.tau = std::get<2>(key);
    ar.measure = std::get<3>(key);
    ar.count = recs.size();

    double mean = 0.0;
    for (const auto* r : recs) mean += r->loss_bits;
    mean /= static_cast<double>(recs.size());
    double ssd = 0.0;
    for (const auto* r : recs) {
      const double d = r->loss_bits - mean;
      ssd += d * d;
    }
    ar.mean_bits = mean;
    ar.std_bits = recs.size() > 1
                      ? std::sqrt(ssd / static_cast<double>(recs.size() - 1))
                      : 0.0;

    if (ar.setup == "none") {
      ar.rel_change_pct = 0.0;
      ar.t_vs_none = 0.0;
      ar.p_vs_none = 1.0;
      out.push_back(std::move(ar));
      continue;
    }

    if (recs.size() != base.size()) {
      throw ValidationError("aggregate: setup " + ar.setup +
                            " does not cover the same datapoints as the baseline");
    }
    std::vector<double> xs(recs.size()), ys(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i]->datapoint_id != base[i]->datapoint_id) {
        throw ValidationError("aggregate: setup " + ar.setup +
                              " and baseline disagree on datapoint ids");
      }
      xs[i] = recs[i]->loss_bits;
      ys[i] = base[i]->loss_bits;
    }
    double base_mean = 0.0;
    for (double y : ys) base_mean += y;
    base_mean /= static_cast<double>(ys.size());
    if (mean == base_mean) {
      ar.rel_change_pct = 0.0;
    } else if (base_mean == 0.0) {
      ar.rel_change_pct = mean > base_mean ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
    } else {
      ar.rel_change_pct = 100.0 * (mean - base_mean) / base_mean;
    }
    const TTestResult tt = paired_ttest(xs, ys);
    ar.t_vs_none = tt.t;
    ar.p_vs_none = tt.p;
    out.push_back(std::move(ar));
  }
  return out;
}

struct ConfusionMatrix {
  std::vector<std::string> categories;  // sorted unique category names
  Mat proportions;  // [gold category][silver-argmax category], mislabeled mass only
};

// Mass distribution of silver-argmax errors over category pairs, weighted so
// each datapoint counts once (its gold boxes share the weight). Total mass is
// one minus top-1 label agreement.
inline ConfusionMatrix confusion_matrix(const Corpus& c) {
  const auto dps = to_datapoints(c);
  if (dps.empty()) throw ValidationError("confusion_matrix: corpus has no datapoints");

  ConfusionMatrix cm;
  cm.categories = c.class_categories;
  std::sort(cm.categories.begin(), cm.categories.end());
  cm.categories.erase(std::unique(cm.categories.begin(), cm.categories.end()),
                      cm.categories.end());
  const int G = static_cast<int>(cm.categories.size());
  auto cat_index = [&](int cls) {
    const auto& name = c.class_categories[cls];
    const auto it = std::lower_bound(cm.categories.begin(), cm.categories.end(), name);
    return static_cast<int>(it - cm.categories.begin());
  };

  Mat sum = Mat::Zero(G, G);
  for (const auto& dp : dps) {
    const auto& ex = c.examples[dp.example];
    const auto& ph = ex.sentence.phrases[dp.phrase];
    std::vector<BoundingBox> boxes;
    boxes.reserve(ex.regions.size());
    for (const auto& r : ex.regions) boxes.push_back(r.box);

    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(G, G);
    for (const auto& gb : ph.gold_boxes) {
      const Region& r = ex.regions[best_match(gb, boxes)];
      if (r.gold_class < 0) {
        throw ValidationError("confusion_matrix: matched region has no gold label; "
                              "run label_match_subset first");
      }
      Eigen::Index pred;
      r.silver.maxCoeff(&pred);
      if (static_cast<int>(pred) == r.gold_class) continue;
      counts(cat_index(r.gold_class), cat_index(static_cast<int>(pred))) += 1;
    }
    sum += counts.cast<double>() / static_cast<double>(ph.gold_boxes.size());
  }
  cm.proportions = sum / static_cast<double>(dps.size());
  return cm;
}

// Aggregates per-seed pipeline runs: mean of the per-seed group means plus
// their range. All runs must report the same groups.
struct SeedSummaryRecord {
  std::string diagnostic;
  std::string setup;
  double tau = -1.0;
  std::string measure;
  double mean_bits = 0.0;  // mean over seeds of the per-seed mean
  double min_bits = 0.0;
  double max_bits = 0.0;
  std::size_t num_seeds = 0;
};

inline std::vector<SeedSummaryRecord> summarize_seed_runs(
    const std::vector<std::vector<AggregateRecord>>& runs) {
  if (runs.empty()) throw std::invalid_argument("summarize_seed_runs: no runs");
  std::vector<SeedSummaryRecord> out;
  for (std::size_t g = 0; g < runs[0].size(); ++g) {
    SeedSummaryRecord s;
    s.diagnostic = runs[0][g].diagnostic;
    s.setup = runs[0][g].setup;
    s.tau = runs[0][g].tau;
    s.measure = runs[0][g].measure;
    s.num_seeds = runs.size();
    s.min_bits = std::numeric_limits<double>::infinity();
    s.max_bits = -std::numeric_limits<double>::infinity();
    for (const auto& run : runs) {
      if (run.size() != runs[0].size() || run[g].diagnostic != s.diagnostic ||
          run[g].setup != s.setup || run[g].tau != s.tau || run[g].measure != s.measure) {
        throw ValidationError("summarize_seed_runs: runs report different groups");
      }
      s.mean_bits += run[g].mean_bits;
      s.min_bits = std::min(s.min_bits, run[g].mean_bits);
      s.max_bits = std::max(s.max_bits, run[g].mean_bits);
    }
    s.mean_bits /= static_cast<double>(runs.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace xmodal
