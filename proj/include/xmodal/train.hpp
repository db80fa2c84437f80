#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "xmodal/corpus.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/format.hpp"
#include "xmodal/geometry.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

struct MaskingPolicy {
  double token_mask_rate = 0.15;
  // Of the selected tokens: mask_prob become [MASK], random_prob become a
  // random non-special token, the rest stay as they are (but are still
  // predicted).
  double mask_prob = 0.8;
  double random_prob = 0.1;
  double region_mask_rate = 0.15;
  OverlapPolicy region_comask{OverlapMeasure::IoU, 0.4};
};

inline void validate_policy(const MaskingPolicy& p) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(p.token_mask_rate) || !in01(p.region_mask_rate) || !in01(p.mask_prob) ||
      !in01(p.random_prob) || p.mask_prob + p.random_prob > 1.0 + 1e-12) {
    throw ValidationError("masking policy: rates must lie in [0, 1] with mask+random <= 1");
  }
  require_valid(p.region_comask);
}

enum class TokenTreatment { Mask, Random, Keep };

struct TokenMask {
  int position = 0;
  TokenTreatment treatment = TokenTreatment::Mask;
  int replacement = -1;  // used by Random
};

struct TrainingMasks {
  std::vector<TokenMask> tokens;
  std::vector<int> regions;  // expanded by the co-mask policy, sorted
};

inline std::vector<int> non_special_ids(const Corpus& c) {
  std::vector<int> ids;
  for (int i = 0; i < c.vocab_size(); ++i) {
    if (!is_special_token(c.vocabulary[i])) ids.push_back(i);
  }
  if (ids.empty()) throw ValidationError("vocabulary has only special tokens");
  return ids;
}

// Draws the masking decisions for one example. Token candidates are the
// non-special positions; region seeds are Bernoulli draws expanded by the
// co-mask policy so overlapping neighbours cannot leak the masked content.
inline TrainingMasks sample_training_masks(const GroundedExample& ex,
                                           const MaskingPolicy& policy, const Corpus& c,
                                           Rng& rng) {
  validate_policy(policy);
  TrainingMasks out;
  const auto random_pool = non_special_ids(c);
  for (int t = 0; t < static_cast<int>(ex.sentence.tokens.size()); ++t) {
    if (is_special_token(c.vocabulary[ex.sentence.tokens[t]])) continue;
    if (!rng.bernoulli(policy.token_mask_rate)) continue;
    TokenMask tm;
    tm.position = t;
    const double u = rng.uniform();
    if (u < policy.mask_prob) {
      tm.treatment = TokenTreatment::Mask;
    } else if (u < policy.mask_prob + policy.random_prob) {
      tm.treatment = TokenTreatment::Random;
      tm.replacement = random_pool[rng.uniform_index(random_pool.size())];
    } else {
      tm.treatment = TokenTreatment::Keep;
    }
    out.tokens.push_back(tm);
  }

  const int K = static_cast<int>(ex.regions.size());
  std::vector<BoundingBox> boxes;
  boxes.reserve(K);
  for (const auto& r : ex.regions) boxes.push_back(r.box);
  std::set<int> masked;
  for (int k = 0; k < K; ++k) {
    if (!rng.bernoulli(policy.region_mask_rate)) continue;
    for (std::size_t j : comask_set(boxes[k], boxes, policy.region_comask)) {
      masked.insert(static_cast<int>(j));
    }
  }
  out.regions.assign(masked.begin(), masked.end());
  return out;
}

struct PreparedExample {
  ModelInput input;
  std::vector<int> mlm_positions;
  std::vector<int> mlm_targets;
  std::vector<int> mrc_regions;
};

// Applies the masking decisions: [MASK]/random substitution for tokens,
// zeroed features for masked regions. Boxes stay untouched.
inline PreparedExample prepare_training_input(const GroundedExample& ex,
                                              const TrainingMasks& masks, const Corpus& c) {
  PreparedExample p;
  p.input = make_input(ex);
  const int mask_id = c.mask_token_id();
  for (const auto& tm : masks.tokens) {
    p.mlm_positions.push_back(tm.position);
    p.mlm_targets.push_back(ex.sentence.tokens[tm.position]);
    switch (tm.treatment) {
      case TokenTreatment::Mask: p.input.tokens[tm.position] = mask_id; break;
      case TokenTreatment::Random: p.input.tokens[tm.position] = tm.replacement; break;
      case TokenTreatment::Keep: break;
    }
  }
  for (int k : masks.regions) p.input.region_features.row(k).setZero();
  p.mrc_regions = masks.regions;
  return p;
}

enum class VisionObjective { MrcKl, MrcXe };

inline const char* to_string(VisionObjective o) {
  return o == VisionObjective::MrcKl ? "mrc_kl" : "mrc_xe";
}

inline VisionObjective vision_objective_from_string(const std::string& s) {
  if (s == "mrc_kl") return VisionObjective::MrcKl;
  if (s == "mrc_xe") return VisionObjective::MrcXe;
  throw ValidationError("unknown vision objective: " + s);
}

enum class Regime {
  TextInit_VL,        // text-initialized, then joint VL training
  Rnd_VL,             // random init, joint VL training
  Rnd_V_then_VL,      // random init, vision-only phase, then VL
  TextInit_V_then_VL, // text-initialized, vision-only phase, then VL
  TextOnly_MLM,       // text tower only, regions mean-ablated
};

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::TextInit_VL: return "textinit-vl";
    case Regime::Rnd_VL: return "rnd-vl";
    case Regime::Rnd_V_then_VL: return "rnd-v-then-vl";
    case Regime::TextInit_V_then_VL: return "textinit-v-then-vl";
    case Regime::TextOnly_MLM: return "textonly-mlm";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "textinit-vl") return Regime::TextInit_VL;
  if (s == "rnd-vl") return Regime::Rnd_VL;
  if (s == "rnd-v-then-vl") return Regime::Rnd_V_then_VL;
  if (s == "textinit-v-then-vl") return Regime::TextInit_V_then_VL;
  if (s == "textonly-mlm") return Regime::TextOnly_MLM;
  throw ValidationError("unknown training regime: " + s);
}

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 10;         // main (joint or text-only) phase
  int vision_epochs = 0;   // vision-only phase of the *-v-then-vl regimes
  int batch_size = 16;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  VisionObjective vision_objective = VisionObjective::MrcKl;
  double itm_negative_rate = 0.5;
  MaskingPolicy masking;
};

inline void validate_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.vision_epochs < 0) {
    throw ValidationError("train: epoch counts cannot be negative");
  }
  if (cfg.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("train: learning_rate must be positive");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
      !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0) || !(cfg.adam_eps > 0.0)) {
    throw ValidationError("train: invalid Adam parameters");
  }
  if (!(cfg.itm_negative_rate >= 0.0 && cfg.itm_negative_rate <= 1.0)) {
    throw ValidationError("train: itm_negative_rate must lie in [0, 1]");
  }
  validate_policy(cfg.masking);
}

class Adam {
 public:
  Adam(const std::vector<nn::Param*>& params, const TrainConfig& cfg)
      : lr_(cfg.learning_rate),
        b1_(cfg.adam_beta1),
        b2_(cfg.adam_beta2),
        eps_(cfg.adam_eps) {
    for (const auto* p : params) {
      m_.push_back(Mat::Zero(p->v.rows(), p->v.cols()));
      v_.push_back(Mat::Zero(p->v.rows(), p->v.cols()));
    }
  }

  // update[i] == false freezes params[i] (its moments stay zero too, since
  // frozen parameters never receive gradient).
  void step(const std::vector<nn::Param*>& params, const std::vector<bool>& update) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!update[i]) continue;
      nn::Param& p = *params[i];
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.g.array().square().matrix();
      p.v.array() -=
          lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

struct LossLogRow {
  std::string phase;
  int epoch = 0;  // within the phase
  int step = 0;   // optimizer step within the phase
  double mlm_bits = 0.0;
  double mrc_bits = 0.0;
  double itm_bits = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<LossLogRow> log;
};

inline void write_loss_log(const std::vector<LossLogRow>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "phase,epoch,step,mlm_bits,mrc_bits,itm_bits,total\n";
  for (const auto& r : log) {
    out << r.phase << "," << r.epoch << "," << r.step << "," << fmt_g17(r.mlm_bits)
        << "," << fmt_g17(r.mrc_bits) << "," << fmt_g17(r.itm_bits) << ","
        << fmt_g17(r.total) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace detail {

struct Phase {
  const char* name;
  int epochs;
};

// Mean-ablates every region: the model still sees K region slots with their
// boxes, but all content is the corpus average.
inline void ablate_all_regions(ModelInput& in, const Vec& mean_feature) {
  for (int k = 0; k < in.region_features.rows(); ++k) {
    in.region_features.row(k) = mean_feature.transpose();
  }
}

}  // namespace detail

// Runs the given regime on the model in place. Single-threaded on purpose:
// results must be bit-identical run to run.
inline TrainResult train(MultimodalModel& model, const Corpus& corpus, Regime regime,
                         const TrainConfig& cfg) {
  validate_config(cfg);
  check_corpus_compat(model.cfg, corpus);
  if (corpus.examples.empty()) throw ValidationError("train: corpus has no examples");

  std::vector<detail::Phase> phases;
  switch (regime) {
    case Regime::TextInit_VL:
    case Regime::Rnd_VL:
      phases = {{"vl", cfg.epochs}};
      break;
    case Regime::Rnd_V_then_VL:
    case Regime::TextInit_V_then_VL:
      phases = {{"v", cfg.vision_epochs}, {"vl", cfg.epochs}};
      break;
    case Regime::TextOnly_MLM:
      phases = {{"text", cfg.epochs}};
      break;
  }

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(11);
  Rng mask_rng = root.fork(12);
  Rng itm_rng = root.fork(13);

  const int N = static_cast<int>(corpus.examples.size());
  const bool several_images = [&] {
    for (const auto& ex : corpus.examples) {
      if (ex.image_id != corpus.examples[0].image_id) return true;
    }
    return false;
  }();

  Vec mean_feature;
  if (regime == Regime::TextOnly_MLM) mean_feature = mean_region_feature(corpus);

  auto params = model.parameters();
  TrainResult result;

  for (const auto& phase : phases) {
    const bool text_phase = std::string(phase.name) == "text";
    const bool vision_phase = std::string(phase.name) == "v";
    std::vector<bool> update(params.size(), true);
    if (text_phase) {
      for (std::size_t i = 0; i < params.size(); ++i) update[i] = params[i]->text_tower;
    }
    Adam adam(params, cfg);
    int step = 0;

    for (int epoch = 0; epoch < phase.epochs; ++epoch) {
      std::vector<int> order(N);
      for (int i = 0; i < N; ++i) order[i] = i;
      shuffle_rng.shuffle(order);

      for (int start = 0; start < N; start += cfg.batch_size) {
        const int end = std::min(N, start + cfg.batch_size);
        const int count = end - start;
        double mlm_sum = 0.0, mrc_sum = 0.0, itm_sum = 0.0;
        int mlm_n = 0, mrc_n = 0, itm_n = 0;

        for (int bi = start; bi < end; ++bi) {
          const GroundedExample& ex = corpus.examples[order[bi]];

          if (!text_phase && !vision_phase && several_images &&
              itm_rng.bernoulli(cfg.itm_negative_rate)) {
            // Mismatched pair: this sentence with another image's regions.
            // Only the match head trains on it.
            int other = order[bi];
            for (int tries = 0; tries < 1000 && corpus.examples[other].image_id == ex.image_id;
                 ++tries) {
              other = static_cast<int>(itm_rng.uniform_index(N));
            }
            if (corpus.examples[other].image_id == ex.image_id) continue;
            ModelInput in = make_input(ex);
            const ModelInput donor = make_input(corpus.examples[other]);
            in.region_features = donor.region_features;
            in.boxes = donor.boxes;
            in.matched = false;
            ModelActs acts;
            const ModelOutput out = model.forward(in, acts);
            OutputGrads g;
            const double itm_bits = itm_loss_grad(out, false, g);
            model.backward(in, acts, g);
            itm_sum += itm_bits;
            ++itm_n;
            continue;
          }

          TrainingMasks masks = sample_training_masks(ex, cfg.masking, corpus, mask_rng);
          if (text_phase) masks.regions.clear();
          if (vision_phase) masks.tokens.clear();
          PreparedExample prep = prepare_training_input(ex, masks, corpus);
          if (text_phase) detail::ablate_all_regions(prep.input, mean_feature);

          ModelActs acts;
          const ModelOutput out = model.forward(prep.input, acts);
          OutputGrads g;
          bool any = false;

          if (!vision_phase && !prep.mlm_positions.empty()) {
            mlm_sum += mlm_loss_grad(out, prep.mlm_positions, prep.mlm_targets, g);
            ++mlm_n;
            any = true;
          }
          if (!text_phase) {
            double region_bits = 0.0;
            for (int k : prep.mrc_regions) {
              const Region& r = ex.regions[k];
              if (cfg.vision_objective == VisionObjective::MrcKl) {
                region_bits += mrc_kl_loss_grad(out, k, r.silver, g);
              } else {
                Eigen::Index argmax;
                const double w = r.silver.maxCoeff(&argmax);
                region_bits += mrc_xe_loss_grad(out, k, static_cast<int>(argmax), w, g);
              }
            }
            if (!prep.mrc_regions.empty()) {
              mrc_sum += region_bits;
              ++mrc_n;
              any = true;
            }
          }
          if (!text_phase && !vision_phase) {
            itm_sum += itm_loss_grad(out, true, g);
            ++itm_n;
            any = true;
          }
          if (any) model.backward(prep.input, acts, g);
        }

        for (auto* p : params) p->g /= static_cast<double>(count);
        adam.step(params, update);
        model.zero_grads();
        ++step;

        LossLogRow row;
        row.phase = phase.name;
        row.epoch = epoch;
        row.step = step;
        row.mlm_bits = mlm_n > 0 ? mlm_sum / mlm_n : 0.0;
        row.mrc_bits = mrc_n > 0 ? mrc_sum / mrc_n : 0.0;
        row.itm_bits = itm_n > 0 ? itm_sum / itm_n : 0.0;
        row.total = row.mlm_bits + row.mrc_bits + row.itm_bits;
        if (!std::isfinite(row.total)) {
          throw DivergenceError("training loss became non-finite at phase " +
                                std::string(phase.name) + " step " + std::to_string(step));
        }
        result.log.push_back(std::move(row));
      }
    }
  }
  return result;
}

// Full architecture, mean-ablated regions, MLM objective, text-tower updates
// only. The returned model's text tower is what a text-initialized regime
// copies; save it with save_checkpoint(..., /*text_tower_only=*/true).
inline MultimodalModel text_only_pretrain(const Corpus& corpus, const ModelConfig& mcfg,
                                          const TrainConfig& tcfg, TrainResult* log = nullptr) {
  MultimodalModel m = init_model(mcfg, tcfg.seed);
  TrainResult r = train(m, corpus, Regime::TextOnly_MLM, tcfg);
  if (log) *log = std::move(r);
  return m;
}

}  // namespace xmodal
