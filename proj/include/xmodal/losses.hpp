#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/model.hpp"

// Every loss is measured in bits (base-2 logs). The *_grad variants return
// the same value and accumulate d(loss)/d(logits) into an OutputGrads, so a
// training step can sum several losses into one backward pass.
namespace xmodal {

namespace detail {

inline nn::RowVec log_softmax_row(const nn::RowVec& logits) {
  const double mx = logits.maxCoeff();
  nn::RowVec shifted = logits.array() - mx;
  const double lse = std::log(shifted.array().exp().sum());
  return shifted.array() - lse;
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline void check_distribution(const Vec& p, int C, const char* what) {
  if (static_cast<int>(p.size()) != C) {
    throw std::invalid_argument(std::string(what) + ": distribution has wrong dimension");
  }
  double sum = 0.0;
  for (int c = 0; c < C; ++c) {
    if (p(c) < 0.0) throw std::invalid_argument(std::string(what) + ": negative probability");
    sum += p(c);
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string(what) + ": probabilities sum to " +
                                std::to_string(sum) + ", expected 1");
  }
}

inline void check_masked_positions(const ModelOutput& out, const std::vector<int>& positions,
                                   const std::vector<int>& targets) {
  if (positions.size() != targets.size()) {
    throw std::invalid_argument("mlm_loss: positions/targets size mismatch");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= out.token_logits.rows()) {
      throw std::invalid_argument("mlm_loss: masked position out of range");
    }
    if (targets[i] < 0 || targets[i] >= out.token_logits.cols()) {
      throw std::invalid_argument("mlm_loss: target token out of range");
    }
  }
}

}  // namespace detail

// Masked language modelling: the summed surprisal, in bits, of the true
// tokens at the masked positions. A sum, not a mean: a datapoint with a
// longer masked phrase pays for every token.
inline double mlm_loss(const ModelOutput& out, const std::vector<int>& positions,
                       const std::vector<int>& targets) {
  detail::check_masked_positions(out, positions, targets);
  double bits = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const nn::RowVec ls = detail::log_softmax_row(out.token_logits.row(positions[i]));
    bits -= ls(targets[i]) / std::numbers::ln2;
  }
  return bits;
}

inline double mlm_loss_grad(const ModelOutput& out, const std::vector<int>& positions,
                            const std::vector<int>& targets, OutputGrads& g) {
  detail::check_masked_positions(out, positions, targets);
  if (g.d_token_logits.size() == 0) {
    g.d_token_logits = Mat::Zero(out.token_logits.rows(), out.token_logits.cols());
  }
  double bits = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const nn::RowVec ls = detail::log_softmax_row(out.token_logits.row(positions[i]));
    bits -= ls(targets[i]) / std::numbers::ln2;
    nn::RowVec d = ls.array().exp() / std::numbers::ln2;
    d(targets[i]) -= 1.0 / std::numbers::ln2;
    g.d_token_logits.row(positions[i]) += d;
  }
  return bits;
}

// KL(target || model), in bits, for one region's class distribution.
// Terms with target probability zero contribute nothing.
inline double mrc_kl_loss(const ModelOutput& out, int region_index, const Vec& target) {
  if (region_index < 0 || region_index >= out.region_logits.rows()) {
    throw std::invalid_argument("mrc_kl_loss: region index out of range");
  }
  detail::check_distribution(target, static_cast<int>(out.region_logits.cols()),
                             "mrc_kl_loss");
  const nn::RowVec ls = detail::log_softmax_row(out.region_logits.row(region_index));
  double bits = 0.0;
  for (int c = 0; c < target.size(); ++c) {
    if (target(c) <= 0.0) continue;
    bits += target(c) * (std::log(target(c)) - ls(c)) / std::numbers::ln2;
  }
  return bits;
}

inline double mrc_kl_loss_grad(const ModelOutput& out, int region_index, const Vec& target,
                               OutputGrads& g) {
  const double bits = mrc_kl_loss(out, region_index, target);
  if (g.d_region_logits.size() == 0) {
    g.d_region_logits = Mat::Zero(out.region_logits.rows(), out.region_logits.cols());
  }
  const nn::RowVec ls = detail::log_softmax_row(out.region_logits.row(region_index));
  g.d_region_logits.row(region_index) +=
      (ls.array().exp().matrix() - target.transpose()) / std::numbers::ln2;
  return bits;
}

// Weighted cross-entropy, in bits, against a single class id. Training weighs
// by the strongest silver entry; gold evaluation passes weight 1.
inline double mrc_xe_loss(const ModelOutput& out, int region_index, int class_id,
                          double weight) {
  if (region_index < 0 || region_index >= out.region_logits.rows()) {
    throw std::invalid_argument("mrc_xe_loss: region index out of range");
  }
  if (class_id < 0 || class_id >= out.region_logits.cols()) {
    throw std::invalid_argument("mrc_xe_loss: class id out of range");
  }
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw std::invalid_argument("mrc_xe_loss: weight must lie in [0, 1]");
  }
  const nn::RowVec ls = detail::log_softmax_row(out.region_logits.row(region_index));
  return -weight * ls(class_id) / std::numbers::ln2;
}

inline double mrc_xe_loss_grad(const ModelOutput& out, int region_index, int class_id,
                               double weight, OutputGrads& g) {
  const double bits = mrc_xe_loss(out, region_index, class_id, weight);
  if (g.d_region_logits.size() == 0) {
    g.d_region_logits = Mat::Zero(out.region_logits.rows(), out.region_logits.cols());
  }
  const nn::RowVec ls = detail::log_softmax_row(out.region_logits.row(region_index));
  nn::RowVec d = weight * ls.array().exp() / std::numbers::ln2;
  d(class_id) -= weight / std::numbers::ln2;
  g.d_region_logits.row(region_index) += d;
  return bits;
}

// Binary cross-entropy of the match head, in bits. A zero logit costs exactly
// one bit either way.
inline double itm_loss(const ModelOutput& out, bool matched) {
  const double l = out.itm_logit;
  return detail::softplus(matched ? -l : l) / std::numbers::ln2;
}

inline double itm_loss_grad(const ModelOutput& out, bool matched, OutputGrads& g) {
  const double bits = itm_loss(out, matched);
  const double sigma = 1.0 / (1.0 + std::exp(-out.itm_logit));
  g.d_itm_logit += (sigma - (matched ? 1.0 : 0.0)) / std::numbers::ln2;
  return bits;
}

}  // namespace xmodal
