#pragma once

#include <algorithm>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "xmodal/corpus.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/geometry.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"

namespace xmodal {

// Vision-for-language: how much does masking the phrase's text cost, as the
// visual evidence is withdrawn?
enum class V4LMode { None, Object, All };

struct V4LSetup {
  V4LMode mode = V4LMode::None;
  OverlapPolicy object_comask{OverlapMeasure::IoT, 0.5};
};

// Language-for-vision: how much does predicting the phrase's region cost, as
// the text evidence is withdrawn?
enum class L4VMode { None, Phrase, All };

// With all text ablated, either every non-special token becomes [MASK], or
// the whole sentence collapses to a single [MASK] between [CLS] and [SEP].
enum class AllTextMode { MaskEach, SingleMask };

struct L4VSetup {
  L4VMode mode = L4VMode::None;
  AllTextMode all_text = AllTextMode::MaskEach;
};

enum class L4VTargetMode { SilverKl, GoldXe };

inline const char* to_string(V4LMode m) {
  switch (m) {
    case V4LMode::None: return "none";
    case V4LMode::Object: return "object";
    case V4LMode::All: return "all";
  }
  return "?";
}

inline const char* to_string(L4VMode m) {
  switch (m) {
    case L4VMode::None: return "none";
    case L4VMode::Phrase: return "phrase";
    case L4VMode::All: return "all";
  }
  return "?";
}

// Regions being *predicted* are zeroed together with every region that covers
// at least half of them; this is fixed across all L4V setups.
inline constexpr OverlapPolicy kPredictionComask{OverlapMeasure::IoT, 0.5};

struct DiagnosticRecord {
  int datapoint_id = 0;
  std::string diagnostic;  // "v4l" or "l4v"
  std::string setup;       // "none", "object", "phrase", "all"
  double tau = -1.0;       // region-selection threshold; -1 when not applicable
  std::string measure;     // "iou", "iot", or "-"
  double loss_bits = 0.0;
  int target_region = -1;  // L4V: region index scored; V4L: -1
  int num_ablated = 0;     // V4L: ablated regions; L4V: prediction-masked regions
};

struct DiagnosticResult {
  std::vector<DiagnosticRecord> records;
};

struct V4LInput {
  ModelInput input;
  std::vector<int> masked_positions;
  std::vector<int> targets;
  int num_ablated = 0;
};

// Phrase tokens become [MASK] and are predicted; regions are untouched,
// ablated around the gold boxes, or all ablated, to the corpus mean feature.
// Boxes are always kept.
inline V4LInput build_v4l_input(const Corpus& c, const GroundedExample& ex,
                                const Phrase& ph, const V4LSetup& setup,
                                const Vec& mean_feature) {
  require_valid(setup.object_comask);
  V4LInput r;
  r.input = make_input(ex);
  const int mask_id = c.mask_token_id();
  for (int t = ph.span_begin; t < ph.span_end; ++t) {
    r.masked_positions.push_back(t);
    r.targets.push_back(ex.sentence.tokens[t]);
    r.input.tokens[t] = mask_id;
  }

  const int K = static_cast<int>(ex.regions.size());
  if (setup.mode == V4LMode::All) {
    for (int k = 0; k < K; ++k) r.input.region_features.row(k) = mean_feature.transpose();
    r.num_ablated = K;
  } else if (setup.mode == V4LMode::Object) {
    std::vector<BoundingBox> boxes;
    boxes.reserve(K);
    for (const auto& reg : ex.regions) boxes.push_back(reg.box);
    std::set<std::size_t> ablated;
    for (const auto& gb : ph.gold_boxes) {
      for (std::size_t j : comask_set(gb, boxes, setup.object_comask)) ablated.insert(j);
    }
    for (std::size_t j : ablated) {
      r.input.region_features.row(static_cast<int>(j)) = mean_feature.transpose();
    }
    r.num_ablated = static_cast<int>(ablated.size());
  }
  return r;
}

struct L4VTarget {
  ModelInput input;
  int target_region = 0;
  int num_masked = 0;
};

// One target per gold box: its best-matching proposal is zeroed (with its
// co-mask neighbourhood) and predicted, under the setup's text ablation.
inline std::vector<L4VTarget> build_l4v_inputs(const Corpus& c, const GroundedExample& ex,
                                               const Phrase& ph, const L4VSetup& setup) {
  const int mask_id = c.mask_token_id();
  std::vector<BoundingBox> boxes;
  boxes.reserve(ex.regions.size());
  for (const auto& reg : ex.regions) boxes.push_back(reg.box);

  std::vector<int> base_tokens = ex.sentence.tokens;
  if (setup.mode == L4VMode::Phrase) {
    for (int t = ph.span_begin; t < ph.span_end; ++t) base_tokens[t] = mask_id;
  } else if (setup.mode == L4VMode::All) {
    if (setup.all_text == AllTextMode::MaskEach) {
      for (std::size_t t = 0; t < base_tokens.size(); ++t) {
        if (!is_special_token(c.vocabulary[base_tokens[t]])) base_tokens[t] = mask_id;
      }
    } else {
      const int cls_id = c.token_id("[CLS]");
      const int sep_id = c.token_id("[SEP]");
      if (cls_id < 0 || sep_id < 0) {
        throw ValidationError("single-mask text ablation needs [CLS] and [SEP] tokens");
      }
      base_tokens = {cls_id, mask_id, sep_id};
    }
  }

  std::vector<L4VTarget> out;
  for (const auto& gb : ph.gold_boxes) {
    L4VTarget t;
    t.input = make_input(ex);
    t.input.tokens = base_tokens;
    t.target_region = static_cast<int>(best_match(gb, boxes));
    const auto masked = comask_set(boxes[t.target_region], boxes, kPredictionComask);
    for (std::size_t j : masked) {
      t.input.region_features.row(static_cast<int>(j)).setZero();
    }
    t.num_masked = static_cast<int>(masked.size());
    out.push_back(std::move(t));
  }
  return out;
}

namespace detail {

// Runs fn(i) for i in [0, n), spread over `threads` workers. Results must be
// written into per-index slots; that keeps parallel runs bit-identical to
// sequential ones.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mu;
  const int chunk = (n + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (int i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

template <typename Model>
DiagnosticResult evaluate_v4l(const Model& model, const Corpus& c,
                              const std::vector<V4LSetup>& setups, int threads = 1) {
  const auto dps = to_datapoints(c);
  if (dps.empty()) throw ValidationError("evaluate_v4l: corpus has no datapoints");
  const Vec mean_feature = mean_region_feature(c);

  DiagnosticResult res;
  res.records.resize(setups.size() * dps.size());
  for (std::size_t s = 0; s < setups.size(); ++s) {
    const V4LSetup& setup = setups[s];
    DiagnosticRecord* out = res.records.data() + s * dps.size();
    detail::parallel_for(static_cast<int>(dps.size()), threads, [&, out](int i) {
      const auto& dp = dps[i];
      const GroundedExample& ex = c.examples[dp.example];
      const Phrase& ph = ex.sentence.phrases[dp.phrase];
      const V4LInput in = build_v4l_input(c, ex, ph, setup, mean_feature);
      const ModelOutput mo = model.forward(in.input);
      DiagnosticRecord rec;
      rec.datapoint_id = i;
      rec.diagnostic = "v4l";
      rec.setup = to_string(setup.mode);
      if (setup.mode == V4LMode::Object) {
        rec.tau = setup.object_comask.tau;
        rec.measure = to_string(setup.object_comask.measure);
      } else {
        rec.tau = -1.0;
        rec.measure = "-";
      }
      rec.loss_bits = mlm_loss(mo, in.masked_positions, in.targets);
      rec.target_region = -1;
      rec.num_ablated = in.num_ablated;
      out[i] = std::move(rec);
    });
  }
  return res;
}

template <typename Model>
DiagnosticResult evaluate_l4v(const Model& model, const Corpus& c,
                              const std::vector<L4VSetup>& setups,
                              L4VTargetMode target_mode, int threads = 1) {
  const auto dps = to_datapoints(c);
  if (dps.empty()) throw ValidationError("evaluate_l4v: corpus has no datapoints");

  DiagnosticResult res;
  res.records.resize(setups.size() * dps.size());
  for (std::size_t s = 0; s < setups.size(); ++s) {
    const L4VSetup& setup = setups[s];
    DiagnosticRecord* out = res.records.data() + s * dps.size();
    detail::parallel_for(static_cast<int>(dps.size()), threads, [&, out](int i) {
      const auto& dp = dps[i];
      const GroundedExample& ex = c.examples[dp.example];
      const Phrase& ph = ex.sentence.phrases[dp.phrase];
      const auto targets = build_l4v_inputs(c, ex, ph, setup);
      double bits = 0.0;
      for (const auto& t : targets) {
        const ModelOutput mo = model.forward(t.input);
        if (target_mode == L4VTargetMode::SilverKl) {
          bits += mrc_kl_loss(mo, t.target_region, ex.regions[t.target_region].silver);
        } else {
          const int gold = ex.regions[t.target_region].gold_class;
          if (gold < 0) {
            throw ValidationError(
                "evaluate_l4v: gold target mode needs gold labels on the matched "
                "regions; run the label-match subset first");
          }
          bits += mrc_xe_loss(mo, t.target_region, gold, 1.0);
        }
      }
      DiagnosticRecord rec;
      rec.datapoint_id = i;
      rec.diagnostic = "l4v";
      rec.setup = to_string(setup.mode);
      rec.tau = kPredictionComask.tau;
      rec.measure = to_string(kPredictionComask.measure);
      rec.loss_bits = bits / static_cast<double>(targets.size());
      rec.target_region = targets.front().target_region;
      rec.num_ablated = targets.front().num_masked;
      out[i] = std::move(rec);
    });
  }
  return res;
}

struct SweepPoint {
  double tau = 0.0;
  double mean_bits = 0.0;
};

struct SweepResult {
  OverlapMeasure measure = OverlapMeasure::IoT;
  std::vector<double> taus;  // ascending
  double none_mean = 0.0;
  double all_mean = 0.0;
  std::vector<SweepPoint> object_means;  // one per tau, same order
  DiagnosticResult records;              // none rows, object rows per tau, all rows
};

// V4L object ablation across thresholds, bracketed by the None and All
// references. Lower taus ablate supersets, so mean bits fall as tau rises.
template <typename Model>
SweepResult threshold_sweep(const Model& model, const Corpus& c, std::vector<double> taus,
                            OverlapMeasure measure, int threads = 1) {
  if (taus.empty()) throw ValidationError("threshold_sweep: no thresholds given");
  std::sort(taus.begin(), taus.end());
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] >= 0.0 && taus[i] <= 1.0)) {
      throw ValidationError("threshold_sweep: tau must lie in [0, 1]");
    }
    if (i > 0 && taus[i] == taus[i - 1]) {
      throw ValidationError("threshold_sweep: duplicate tau");
    }
  }

  SweepResult res;
  res.measure = measure;
  res.taus = taus;

  auto mean_of = [](const DiagnosticResult& r) {
    double sum = 0.0;
    for (const auto& rec : r.records) sum += rec.loss_bits;
    return sum / static_cast<double>(r.records.size());
  };
  auto append = [&res](const DiagnosticResult& r) {
    res.records.records.insert(res.records.records.end(), r.records.begin(),
                               r.records.end());
  };

  const DiagnosticResult none =
      evaluate_v4l(model, c, {V4LSetup{V4LMode::None, {}}}, threads);
  res.none_mean = mean_of(none);
  append(none);

  for (double tau : taus) {
    V4LSetup setup;
    setup.mode = V4LMode::Object;
    setup.object_comask = OverlapPolicy{measure, tau};
    const DiagnosticResult obj = evaluate_v4l(model, c, {setup}, threads);
    res.object_means.push_back({tau, mean_of(obj)});
    append(obj);
  }

  const DiagnosticResult all =
      evaluate_v4l(model, c, {V4LSetup{V4LMode::All, {}}}, threads);
  res.all_mean = mean_of(all);
  append(all);
  return res;
}

}  // namespace xmodal
