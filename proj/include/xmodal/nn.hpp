#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/rng.hpp"

// Dense layers with explicit reverse-mode gradients. Every layer follows the
// same contract: forward(..., Acts&) is const and writes whatever backward
// will need into the caller-owned Acts, so concurrent forward passes over one
// model are safe; backward(...) accumulates into Param::g and returns the
// gradient with respect to its inputs.
namespace xmodal::nn {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using ColVec = Eigen::VectorXd;

struct Param {
  std::string name;
  bool text_tower = false;
  Mat v;
  Mat g;

  void zero_grad() { g.setZero(); }
};

inline Mat softmax_rows(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    RowVec e = (x.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

// Exact (erf-based) GELU.
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return gelu(v); });
}

struct Linear {
  Param w;  // in x out
  Param b;  // 1 x out

  void init(const std::string& name, int in, int out, Rng& rng, bool text_tower) {
    w.name = name + ".w";
    b.name = name + ".b";
    w.text_tower = b.text_tower = text_tower;
    const double std = std::sqrt(2.0 / (in + out));
    w.v.resize(in, out);
    for (int i = 0; i < in; ++i) {
      for (int j = 0; j < out; ++j) w.v(i, j) = rng.normal(0.0, std);
    }
    w.g = Mat::Zero(in, out);
    b.v = Mat::Zero(1, out);
    b.g = Mat::Zero(1, out);
  }

  Mat forward(const Mat& x) const { return (x * w.v).rowwise() + b.v.row(0); }

  // x must be the forward input; returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy) {
    w.g += x.transpose() * dy;
    b.g.row(0) += dy.colwise().sum();
    return dy * w.v.transpose();
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct LayerNorm {
  Param gamma;  // 1 x dim
  Param beta;   // 1 x dim
  static constexpr double kEps = 1e-5;

  struct Acts {
    Mat xhat;
    ColVec inv_std;
  };

  void init(const std::string& name, int dim, bool text_tower) {
    gamma.name = name + ".gamma";
    beta.name = name + ".beta";
    gamma.text_tower = beta.text_tower = text_tower;
    gamma.v = Mat::Ones(1, dim);
    gamma.g = Mat::Zero(1, dim);
    beta.v = Mat::Zero(1, dim);
    beta.g = Mat::Zero(1, dim);
  }

  Mat forward(const Mat& x, Acts& a) const {
    const ColVec mean = x.rowwise().mean();
    const Mat centered = x.colwise() - mean;
    const ColVec var = centered.array().square().rowwise().mean();
    a.inv_std = (var.array() + kEps).sqrt().inverse();
    a.xhat = (centered.array().colwise() * a.inv_std.array()).matrix();
    Mat y = (a.xhat.array().rowwise() * gamma.v.row(0).array()).matrix();
    y.rowwise() += beta.v.row(0);
    return y;
  }

  Mat backward(const Acts& a, const Mat& dy) {
    gamma.g.row(0) += (dy.array() * a.xhat.array()).colwise().sum().matrix();
    beta.g.row(0) += dy.colwise().sum();
    const Mat dxhat = (dy.array().rowwise() * gamma.v.row(0).array()).matrix();
    const ColVec m1 = dxhat.rowwise().mean();
    const ColVec m2 = (dxhat.array() * a.xhat.array()).rowwise().mean();
    Mat tmp = dxhat.colwise() - m1;
    tmp -= (a.xhat.array().colwise() * m2.array()).matrix();
    return (tmp.array().colwise() * a.inv_std.array()).matrix();
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Scaled dot-product attention over `heads` parallel slices of the hidden
// dimension. Queries may come from a different sequence than keys/values,
// which is what the co-attention blocks use.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  struct Acts {
    Mat xq, xkv;
    Mat Q, K, V;
    std::vector<Mat> probs;  // one row-stochastic matrix per head
    Mat ctx;
  };

  void init(const std::string& name, int dim, int num_heads, Rng& rng, bool text_tower) {
    heads = num_heads;
    q.init(name + ".q", dim, dim, rng, text_tower);
    k.init(name + ".k", dim, dim, rng, text_tower);
    v.init(name + ".v", dim, dim, rng, text_tower);
    o.init(name + ".o", dim, dim, rng, text_tower);
  }

  Mat forward(const Mat& xq, const Mat& xkv, Acts& a) const {
    a.xq = xq;
    a.xkv = xkv;
    a.Q = q.forward(xq);
    a.K = k.forward(xkv);
    a.V = v.forward(xkv);
    const int dim = static_cast<int>(a.Q.cols());
    const int dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    a.probs.assign(heads, Mat());
    a.ctx.resize(xq.rows(), dim);
    for (int h = 0; h < heads; ++h) {
      const auto Qh = a.Q.middleCols(h * dh, dh);
      const auto Kh = a.K.middleCols(h * dh, dh);
      const auto Vh = a.V.middleCols(h * dh, dh);
      a.probs[h] = softmax_rows((Qh * Kh.transpose()) * scale);
      a.ctx.middleCols(h * dh, dh) = a.probs[h] * Vh;
    }
    return o.forward(a.ctx);
  }

  // Returns (dL/dxq, dL/dxkv).
  std::pair<Mat, Mat> backward(const Acts& a, const Mat& dy) {
    const Mat dctx = o.backward(a.ctx, dy);
    const int dim = static_cast<int>(a.Q.cols());
    const int dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dQ = Mat::Zero(a.Q.rows(), dim);
    Mat dK = Mat::Zero(a.K.rows(), dim);
    Mat dV = Mat::Zero(a.V.rows(), dim);
    for (int h = 0; h < heads; ++h) {
      const Mat& Ph = a.probs[h];
      const Mat dctxh = dctx.middleCols(h * dh, dh);
      const Mat dP = dctxh * a.V.middleCols(h * dh, dh).transpose();
      dV.middleCols(h * dh, dh) = Ph.transpose() * dctxh;
      const ColVec rowdot = (dP.array() * Ph.array()).rowwise().sum();
      const Mat dS = (Ph.array() * (dP.colwise() - rowdot).array()).matrix() * scale;
      dQ.middleCols(h * dh, dh) = dS * a.K.middleCols(h * dh, dh);
      dK.middleCols(h * dh, dh) = dS.transpose() * a.Q.middleCols(h * dh, dh);
    }
    Mat dxq = q.backward(a.xq, dQ);
    Mat dxkv = k.backward(a.xkv, dK);
    dxkv += v.backward(a.xkv, dV);
    return {std::move(dxq), std::move(dxkv)};
  }

  void collect(std::vector<Param*>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

struct FeedForward {
  Linear fc1, fc2;

  struct Acts {
    Mat x;
    Mat h1;  // pre-activation
    Mat h1act;
  };

  void init(const std::string& name, int dim, int hidden, Rng& rng, bool text_tower) {
    fc1.init(name + ".fc1", dim, hidden, rng, text_tower);
    fc2.init(name + ".fc2", hidden, dim, rng, text_tower);
  }

  Mat forward(const Mat& x, Acts& a) const {
    a.x = x;
    a.h1 = fc1.forward(x);
    a.h1act = gelu(a.h1);
    return fc2.forward(a.h1act);
  }

  Mat backward(Acts& a, const Mat& dy) {
    const Mat dh1act = fc2.backward(a.h1act, dy);
    const Mat dh1 =
        dh1act.array() * a.h1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    return fc1.backward(a.x, dh1);
  }

  void collect(std::vector<Param*>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

// Post-norm transformer block: LN(x + attn(x)), then LN(h + ff(h)).
struct EncoderBlock {
  MultiHeadAttention attn;
  LayerNorm ln1;
  FeedForward ff;
  LayerNorm ln2;

  struct Acts {
    MultiHeadAttention::Acts attn;
    LayerNorm::Acts ln1;
    FeedForward::Acts ff;
    LayerNorm::Acts ln2;
  };

  void init(const std::string& name, int dim, int heads, Rng& rng, bool text_tower) {
    attn.init(name + ".attn", dim, heads, rng, text_tower);
    ln1.init(name + ".ln1", dim, text_tower);
    ff.init(name + ".ff", dim, 4 * dim, rng, text_tower);
    ln2.init(name + ".ln2", dim, text_tower);
  }

  Mat forward(const Mat& x, Acts& a) const {
    const Mat h = ln1.forward(x + attn.forward(x, x, a.attn), a.ln1);
    return ln2.forward(h + ff.forward(h, a.ff), a.ln2);
  }

  Mat backward(Acts& a, const Mat& dy) {
    const Mat dh_sum = ln2.backward(a.ln2, dy);
    const Mat dh = dh_sum + ff.backward(a.ff, dh_sum);
    const Mat dx_sum = ln1.backward(a.ln1, dh);
    auto [dxq, dxkv] = attn.backward(a.attn, dx_sum);
    return dx_sum + dxq + dxkv;
  }

  void collect(std::vector<Param*>& out) {
    attn.collect(out);
    ln1.collect(out);
    ff.collect(out);
    ln2.collect(out);
  }
};

// Two-stream block: each stream queries the other's *incoming* states, then
// runs its own feed-forward, with post-norm around both sub-layers. The text
// half and the vision half carry separate parameters; only the text half
// belongs to the text tower.
struct CoAttentionBlock {
  MultiHeadAttention text_attends_vision;
  LayerNorm text_ln1;
  FeedForward text_ff;
  LayerNorm text_ln2;
  MultiHeadAttention vision_attends_text;
  LayerNorm vision_ln1;
  FeedForward vision_ff;
  LayerNorm vision_ln2;

  struct Acts {
    MultiHeadAttention::Acts t_attn;
    LayerNorm::Acts t_ln1;
    FeedForward::Acts t_ff;
    LayerNorm::Acts t_ln2;
    MultiHeadAttention::Acts v_attn;
    LayerNorm::Acts v_ln1;
    FeedForward::Acts v_ff;
    LayerNorm::Acts v_ln2;
  };

  void init(const std::string& name, int dim, int heads, Rng& rng) {
    text_attends_vision.init(name + ".t_attn", dim, heads, rng, true);
    text_ln1.init(name + ".t_ln1", dim, true);
    text_ff.init(name + ".t_ff", dim, 4 * dim, rng, true);
    text_ln2.init(name + ".t_ln2", dim, true);
    vision_attends_text.init(name + ".v_attn", dim, heads, rng, false);
    vision_ln1.init(name + ".v_ln1", dim, false);
    vision_ff.init(name + ".v_ff", dim, 4 * dim, rng, false);
    vision_ln2.init(name + ".v_ln2", dim, false);
  }

  std::pair<Mat, Mat> forward(const Mat& t, const Mat& v, Acts& a) const {
    const Mat ta = text_ln1.forward(t + text_attends_vision.forward(t, v, a.t_attn), a.t_ln1);
    Mat tout = text_ln2.forward(ta + text_ff.forward(ta, a.t_ff), a.t_ln2);
    const Mat va = vision_ln1.forward(v + vision_attends_text.forward(v, t, a.v_attn), a.v_ln1);
    Mat vout = vision_ln2.forward(va + vision_ff.forward(va, a.v_ff), a.v_ln2);
    return {std::move(tout), std::move(vout)};
  }

  std::pair<Mat, Mat> backward(Acts& a, const Mat& dtout, const Mat& dvout) {
    const Mat dta_sum = text_ln2.backward(a.t_ln2, dtout);
    const Mat dta = dta_sum + text_ff.backward(a.t_ff, dta_sum);
    const Mat dt_sum = text_ln1.backward(a.t_ln1, dta);
    auto [dt_q, dv_kv] = text_attends_vision.backward(a.t_attn, dt_sum);

    const Mat dva_sum = vision_ln2.backward(a.v_ln2, dvout);
    const Mat dva = dva_sum + vision_ff.backward(a.v_ff, dva_sum);
    const Mat dv_sum = vision_ln1.backward(a.v_ln1, dva);
    auto [dv_q, dt_kv] = vision_attends_text.backward(a.v_attn, dv_sum);

    Mat dt = dt_sum + dt_q + dt_kv;
    Mat dv = dv_sum + dv_q + dv_kv;
    return {std::move(dt), std::move(dv)};
  }

  void collect(std::vector<Param*>& out) {
    text_attends_vision.collect(out);
    text_ln1.collect(out);
    text_ff.collect(out);
    text_ln2.collect(out);
    vision_attends_text.collect(out);
    vision_ln1.collect(out);
    vision_ff.collect(out);
    vision_ln2.collect(out);
  }
};

struct Embedding {
  Param table;  // n x dim

  void init(const std::string& name, int n, int dim, Rng& rng, double std, bool text_tower) {
    table.name = name;
    table.text_tower = text_tower;
    table.v.resize(n, dim);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < dim; ++j) table.v(i, j) = rng.normal(0.0, std);
    }
    table.g = Mat::Zero(n, dim);
  }

  void collect(std::vector<Param*>& out) { out.push_back(&table); }
};

}  // namespace xmodal::nn
