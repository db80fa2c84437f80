#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xmodal/corpus.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/geometry.hpp"
#include "xmodal/nn.hpp"
#include "xmodal/version.hpp"

namespace xmodal {

using nn::Mat;

enum class Architecture { SingleStream, DualStream };

inline const char* to_string(Architecture a) {
  return a == Architecture::SingleStream ? "single_stream" : "dual_stream";
}

inline Architecture architecture_from_string(const std::string& s) {
  if (s == "single_stream") return Architecture::SingleStream;
  if (s == "dual_stream") return Architecture::DualStream;
  throw ValidationError("unknown architecture: " + s);
}

struct ModelConfig {
  Architecture architecture = Architecture::SingleStream;
  // Single-stream uses cross_layers joint blocks over the concatenated
  // sequence; dual-stream runs the per-modality blocks first, then
  // cross_layers co-attention blocks.
  int text_only_layers = 0;
  int vision_only_layers = 0;
  int cross_layers = 1;
  int hidden_dim = 32;
  int heads = 4;
  int vocab_size = 0;
  int num_classes = 0;
  int feature_dim = 0;
  int max_tokens = 16;
  int max_regions = 8;
  bool use_box_embedding = true;
};

inline void validate_config(const ModelConfig& cfg) {
  if (cfg.hidden_dim <= 0 || cfg.heads <= 0 || cfg.hidden_dim % cfg.heads != 0) {
    throw ValidationError("model: hidden_dim must be a positive multiple of heads");
  }
  if (cfg.vocab_size <= 0) throw ValidationError("model: vocab_size must be positive");
  if (cfg.num_classes < 2) throw ValidationError("model: need at least two classes");
  if (cfg.feature_dim <= 0) throw ValidationError("model: feature_dim must be positive");
  if (cfg.max_tokens <= 0 || cfg.max_regions <= 0) {
    throw ValidationError("model: sequence capacities must be positive");
  }
  if (cfg.cross_layers < 1) throw ValidationError("model: need at least one cross layer");
  if (cfg.text_only_layers < 0 || cfg.vision_only_layers < 0) {
    throw ValidationError("model: layer counts cannot be negative");
  }
  if (cfg.architecture == Architecture::SingleStream &&
      (cfg.text_only_layers != 0 || cfg.vision_only_layers != 0)) {
    throw ValidationError("model: single_stream has no per-modality blocks");
  }
}

inline nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["architecture"] = to_string(cfg.architecture);
  j["text_only_layers"] = cfg.text_only_layers;
  j["vision_only_layers"] = cfg.vision_only_layers;
  j["cross_layers"] = cfg.cross_layers;
  j["hidden_dim"] = cfg.hidden_dim;
  j["heads"] = cfg.heads;
  j["vocab_size"] = cfg.vocab_size;
  j["num_classes"] = cfg.num_classes;
  j["feature_dim"] = cfg.feature_dim;
  j["max_tokens"] = cfg.max_tokens;
  j["max_regions"] = cfg.max_regions;
  j["use_box_embedding"] = cfg.use_box_embedding;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  cfg.text_only_layers = j.at("text_only_layers").get<int>();
  cfg.vision_only_layers = j.at("vision_only_layers").get<int>();
  cfg.cross_layers = j.at("cross_layers").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.max_tokens = j.at("max_tokens").get<int>();
  cfg.max_regions = j.at("max_regions").get<int>();
  cfg.use_box_embedding = j.at("use_box_embedding").get<bool>();
  validate_config(cfg);
  return cfg;
}

// All substitution (mask tokens, zeroed or mean-ablated features) happens
// before a ModelInput is built; the model itself never rewrites its inputs.
struct ModelInput {
  std::vector<int> tokens;
  Mat region_features;             // K x D
  std::vector<BoundingBox> boxes;  // size K, kept even for ablated regions
  bool matched = true;             // image-text match label
};

struct ModelOutput {
  Mat token_logits;   // T x V
  Mat region_logits;  // K x C
  double itm_logit = 0.0;
};

// Gradients of a scalar loss with respect to the model outputs. Empty
// matrices (or a zero itm entry) mean that head took no part in the loss.
struct OutputGrads {
  Mat d_token_logits;
  Mat d_region_logits;
  double d_itm_logit = 0.0;
};

inline ModelInput make_input(const GroundedExample& ex) {
  ModelInput in;
  in.tokens = ex.sentence.tokens;
  const int K = static_cast<int>(ex.regions.size());
  const int D = K > 0 ? static_cast<int>(ex.regions[0].feature.size()) : 0;
  in.region_features.resize(K, D);
  in.boxes.reserve(K);
  for (int k = 0; k < K; ++k) {
    in.region_features.row(k) = ex.regions[k].feature.transpose();
    in.boxes.push_back(ex.regions[k].box);
  }
  return in;
}

struct ModelActs {
  Mat box5;
  nn::LayerNorm::Acts text_ln, vis_ln;
  Mat text_h0, vis_h0;
  std::vector<nn::EncoderBlock::Acts> joint_acts, text_acts, vis_acts;
  std::vector<nn::CoAttentionBlock::Acts> cross_acts;
  Mat h_text, h_vis;
  Mat mlm_h1, mlm_act, mlm_normed;
  nn::LayerNorm::Acts mlm_ln_acts;
};

class MultimodalModel {
 public:
  ModelConfig cfg;

  nn::Embedding tok_emb;  // vocab_size x H, also the tied MLM decoder
  nn::Embedding pos_emb;  // max_tokens x H, text positions only
  nn::Embedding seg_emb;  // 2 x H: row 0 text, row 1 vision
  nn::LayerNorm text_ln;
  nn::Linear feat_proj;  // D -> H
  nn::Linear box_proj;   // 5 -> H, present only with use_box_embedding
  nn::LayerNorm vis_ln;
  std::vector<nn::EncoderBlock> text_blocks, vision_blocks, joint_blocks;
  std::vector<nn::CoAttentionBlock> cross_blocks;
  nn::Linear mlm_transform;  // H -> H
  nn::LayerNorm mlm_ln;
  nn::Param mlm_bias;  // 1 x V; decoder weight is tok_emb
  nn::Linear mrc_head;  // H -> C
  nn::Linear itm_head;  // H -> 1, applied to the first text position

  MultimodalModel(const ModelConfig& config, Rng& rng) : cfg(config) {
    validate_config(cfg);
    const int H = cfg.hidden_dim;
    tok_emb.init("embeddings.token", cfg.vocab_size, H, rng, 0.1, true);
    pos_emb.init("embeddings.position", cfg.max_tokens, H, rng, 0.1, true);
    seg_emb.init("embeddings.segment", 2, H, rng, 0.1, true);
    text_ln.init("embeddings.text_ln", H, true);
    feat_proj.init("vision.feat_proj", cfg.feature_dim, H, rng, false);
    if (cfg.use_box_embedding) box_proj.init("vision.box_proj", 5, H, rng, false);
    vis_ln.init("vision.ln", H, false);
    if (cfg.architecture == Architecture::SingleStream) {
      joint_blocks.resize(cfg.cross_layers);
      for (int i = 0; i < cfg.cross_layers; ++i) {
        joint_blocks[i].init("joint.block" + std::to_string(i), H, cfg.heads, rng, true);
      }
    } else {
      text_blocks.resize(cfg.text_only_layers);
      for (int i = 0; i < cfg.text_only_layers; ++i) {
        text_blocks[i].init("text.block" + std::to_string(i), H, cfg.heads, rng, true);
      }
      vision_blocks.resize(cfg.vision_only_layers);
      for (int i = 0; i < cfg.vision_only_layers; ++i) {
        vision_blocks[i].init("vision.block" + std::to_string(i), H, cfg.heads, rng, false);
      }
      cross_blocks.resize(cfg.cross_layers);
      for (int i = 0; i < cfg.cross_layers; ++i) {
        cross_blocks[i].init("cross.block" + std::to_string(i), H, cfg.heads, rng);
      }
    }
    mlm_transform.init("mlm.transform", H, H, rng, true);
    mlm_ln.init("mlm.ln", H, true);
    mlm_bias.name = "mlm.bias";
    mlm_bias.text_tower = true;
    mlm_bias.v = Mat::Zero(1, cfg.vocab_size);
    mlm_bias.g = Mat::Zero(1, cfg.vocab_size);
    mrc_head.init("mrc.head", H, cfg.num_classes, rng, false);
    itm_head.init("itm.head", H, 1, rng, false);
  }

  std::vector<nn::Param*> parameters() {
    std::vector<nn::Param*> out;
    tok_emb.collect(out);
    pos_emb.collect(out);
    seg_emb.collect(out);
    text_ln.collect(out);
    feat_proj.collect(out);
    if (cfg.use_box_embedding) box_proj.collect(out);
    vis_ln.collect(out);
    for (auto& b : text_blocks) b.collect(out);
    for (auto& b : vision_blocks) b.collect(out);
    for (auto& b : joint_blocks) b.collect(out);
    for (auto& b : cross_blocks) b.collect(out);
    mlm_transform.collect(out);
    mlm_ln.collect(out);
    out.push_back(&mlm_bias);
    mrc_head.collect(out);
    itm_head.collect(out);
    return out;
  }

  std::vector<const nn::Param*> parameters() const {
    auto ps = const_cast<MultimodalModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->v.size());
    return n;
  }

  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
  }

  ModelOutput forward(const ModelInput& in) const {
    ModelActs a;
    return forward(in, a);
  }

  ModelOutput forward(const ModelInput& in, ModelActs& a) const {
    check_input(in);
    const int T = static_cast<int>(in.tokens.size());
    const int K = static_cast<int>(in.region_features.rows());
    const int H = cfg.hidden_dim;

    Mat xt(T, H);
    for (int t = 0; t < T; ++t) {
      xt.row(t) = tok_emb.table.v.row(in.tokens[t]) + pos_emb.table.v.row(t) +
                  seg_emb.table.v.row(0);
    }
    a.text_h0 = text_ln.forward(xt, a.text_ln);

    if (K > 0) {
      a.box5.resize(K, 5);
      for (int k = 0; k < K; ++k) {
        const auto& b = in.boxes[k];
        a.box5(k, 0) = b.x1;
        a.box5(k, 1) = b.y1;
        a.box5(k, 2) = b.x2;
        a.box5(k, 3) = b.y2;
        a.box5(k, 4) = b.area();
      }
      Mat xv = feat_proj.forward(in.region_features);
      if (cfg.use_box_embedding) xv += box_proj.forward(a.box5);
      xv.rowwise() += seg_emb.table.v.row(1);
      a.vis_h0 = vis_ln.forward(xv, a.vis_ln);
    } else {
      a.vis_h0.resize(0, H);
    }

    if (cfg.architecture == Architecture::SingleStream) {
      Mat z(T + K, H);
      z.topRows(T) = a.text_h0;
      if (K > 0) z.bottomRows(K) = a.vis_h0;
      a.joint_acts.resize(joint_blocks.size());
      for (std::size_t i = 0; i < joint_blocks.size(); ++i) {
        z = joint_blocks[i].forward(z, a.joint_acts[i]);
      }
      a.h_text = z.topRows(T);
      a.h_vis = z.bottomRows(K);
    } else {
      Mat t = a.text_h0;
      Mat v = a.vis_h0;
      a.text_acts.resize(text_blocks.size());
      for (std::size_t i = 0; i < text_blocks.size(); ++i) {
        t = text_blocks[i].forward(t, a.text_acts[i]);
      }
      a.vis_acts.resize(vision_blocks.size());
      for (std::size_t i = 0; i < vision_blocks.size(); ++i) {
        v = vision_blocks[i].forward(v, a.vis_acts[i]);
      }
      a.cross_acts.resize(cross_blocks.size());
      for (std::size_t i = 0; i < cross_blocks.size(); ++i) {
        std::tie(t, v) = cross_blocks[i].forward(t, v, a.cross_acts[i]);
      }
      a.h_text = t;
      a.h_vis = v;
    }

    ModelOutput out;
    a.mlm_h1 = mlm_transform.forward(a.h_text);
    a.mlm_act = nn::gelu(a.mlm_h1);
    a.mlm_normed = mlm_ln.forward(a.mlm_act, a.mlm_ln_acts);
    out.token_logits =
        (a.mlm_normed * tok_emb.table.v.transpose()).rowwise() + mlm_bias.v.row(0);
    out.region_logits = K > 0 ? mrc_head.forward(a.h_vis) : Mat(0, cfg.num_classes);
    out.itm_logit = itm_head.forward(a.h_text.row(0))(0, 0);
    if (!out.token_logits.allFinite() || !out.region_logits.allFinite() ||
        !std::isfinite(out.itm_logit)) {
      throw DivergenceError("model forward produced non-finite outputs");
    }
    return out;
  }

  // Accumulates parameter gradients for the forward pass recorded in `a`.
  void backward(const ModelInput& in, ModelActs& a, const OutputGrads& g) {
    const int T = static_cast<int>(in.tokens.size());
    const int K = static_cast<int>(in.region_features.rows());
    const int H = cfg.hidden_dim;

    Mat dh_text = Mat::Zero(T, H);
    Mat dh_vis = Mat::Zero(K, H);

    if (g.d_token_logits.size() > 0) {
      tok_emb.table.g += g.d_token_logits.transpose() * a.mlm_normed;
      mlm_bias.g.row(0) += g.d_token_logits.colwise().sum();
      const Mat d_normed = g.d_token_logits * tok_emb.table.v;
      const Mat d_act = mlm_ln.backward(a.mlm_ln_acts, d_normed);
      const Mat d_h1 =
          d_act.array() *
          a.mlm_h1.unaryExpr([](double x) { return nn::gelu_grad(x); }).array();
      dh_text += mlm_transform.backward(a.h_text, d_h1);
    }
    if (K > 0 && g.d_region_logits.size() > 0) {
      dh_vis += mrc_head.backward(a.h_vis, g.d_region_logits);
    }
    if (g.d_itm_logit != 0.0) {
      Mat dy(1, 1);
      dy(0, 0) = g.d_itm_logit;
      dh_text.row(0) += itm_head.backward(a.h_text.row(0), dy).row(0);
    }

    Mat d_text_h0, d_vis_h0;
    if (cfg.architecture == Architecture::SingleStream) {
      Mat dz(T + K, H);
      dz.topRows(T) = dh_text;
      if (K > 0) dz.bottomRows(K) = dh_vis;
      for (std::size_t i = joint_blocks.size(); i-- > 0;) {
        dz = joint_blocks[i].backward(a.joint_acts[i], dz);
      }
      d_text_h0 = dz.topRows(T);
      d_vis_h0 = dz.bottomRows(K);
    } else {
      Mat dt = dh_text;
      Mat dv = dh_vis;
      for (std::size_t i = cross_blocks.size(); i-- > 0;) {
        std::tie(dt, dv) = cross_blocks[i].backward(a.cross_acts[i], dt, dv);
      }
      for (std::size_t i = vision_blocks.size(); i-- > 0;) {
        dv = vision_blocks[i].backward(a.vis_acts[i], dv);
      }
      for (std::size_t i = text_blocks.size(); i-- > 0;) {
        dt = text_blocks[i].backward(a.text_acts[i], dt);
      }
      d_text_h0 = dt;
      d_vis_h0 = dv;
    }

    const Mat d_xt = text_ln.backward(a.text_ln, d_text_h0);
    for (int t = 0; t < T; ++t) {
      tok_emb.table.g.row(in.tokens[t]) += d_xt.row(t);
      pos_emb.table.g.row(t) += d_xt.row(t);
    }
    seg_emb.table.g.row(0) += d_xt.colwise().sum();

    if (K > 0) {
      const Mat d_xv = vis_ln.backward(a.vis_ln, d_vis_h0);
      seg_emb.table.g.row(1) += d_xv.colwise().sum();
      feat_proj.backward(in.region_features, d_xv);
      if (cfg.use_box_embedding) box_proj.backward(a.box5, d_xv);
    }
  }

 private:
  void check_input(const ModelInput& in) const {
    const int T = static_cast<int>(in.tokens.size());
    const int K = static_cast<int>(in.region_features.rows());
    if (T < 1) throw std::invalid_argument("model input has no tokens");
    if (T > cfg.max_tokens) {
      throw CompatibilityError("sentence of " + std::to_string(T) +
                               " tokens exceeds model max_tokens " +
                               std::to_string(cfg.max_tokens));
    }
    for (int id : in.tokens) {
      if (id < 0 || id >= cfg.vocab_size) {
        throw CompatibilityError("token id " + std::to_string(id) +
                                 " outside model vocabulary of size " +
                                 std::to_string(cfg.vocab_size));
      }
    }
    if (K > cfg.max_regions) {
      throw CompatibilityError("example with " + std::to_string(K) +
                               " regions exceeds model max_regions " +
                               std::to_string(cfg.max_regions));
    }
    if (static_cast<int>(in.boxes.size()) != K) {
      throw std::invalid_argument("model input: boxes and features disagree on K");
    }
    if (K > 0 && static_cast<int>(in.region_features.cols()) != cfg.feature_dim) {
      throw CompatibilityError("region features have dimension " +
                               std::to_string(in.region_features.cols()) +
                               ", model expects " + std::to_string(cfg.feature_dim));
    }
    for (const auto& b : in.boxes) require_valid(b, "model input box");
    if (cfg.architecture == Architecture::DualStream && K == 0) {
      throw std::invalid_argument("dual_stream model requires at least one region");
    }
  }
};

inline MultimodalModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return MultimodalModel(cfg, rng);
}

inline void check_corpus_compat(const ModelConfig& cfg, const Corpus& c) {
  if (cfg.vocab_size != c.vocab_size()) {
    throw CompatibilityError("model vocabulary size " + std::to_string(cfg.vocab_size) +
                             " does not match corpus vocabulary size " +
                             std::to_string(c.vocab_size()));
  }
  if (cfg.num_classes != c.num_classes) {
    throw CompatibilityError("model has " + std::to_string(cfg.num_classes) +
                             " classes, corpus has " + std::to_string(c.num_classes));
  }
  if (cfg.feature_dim != c.feature_dim) {
    throw CompatibilityError("model feature_dim " + std::to_string(cfg.feature_dim) +
                             " does not match corpus feature_dim " +
                             std::to_string(c.feature_dim));
  }
}

// ---- checkpoint serialization ----

namespace detail {

static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

inline constexpr char kCheckpointMagic[9] = "XMCKPT01";

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& s, double d) { put_u64(s, std::bit_cast<std::uint64_t>(d)); }

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct ByteReader {
  const std::string& s;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > s.size()) throw ValidationError("checkpoint truncated or corrupted");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace detail

inline void save_checkpoint(const MultimodalModel& m, const std::string& path,
                            bool text_tower_only = false) {
  std::string payload;
  detail::put_u32(payload, kFormatVersion);
  const std::string cfg_json = to_json(m.cfg).dump();
  detail::put_u32(payload, static_cast<std::uint32_t>(cfg_json.size()));
  payload += cfg_json;

  std::vector<const nn::Param*> params;
  for (const auto* p : m.parameters()) {
    if (!text_tower_only || p->text_tower) params.push_back(p);
  }
  detail::put_u64(payload, params.size());
  for (const auto* p : params) {
    detail::put_u32(payload, static_cast<std::uint32_t>(p->name.size()));
    payload += p->name;
    detail::put_u64(payload, static_cast<std::uint64_t>(p->v.rows()));
    detail::put_u64(payload, static_cast<std::uint64_t>(p->v.cols()));
    for (int j = 0; j < p->v.cols(); ++j) {
      for (int i = 0; i < p->v.rows(); ++i) detail::put_f64(payload, p->v(i, j));
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(detail::kCheckpointMagic, 8);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::string tail;
  detail::put_u64(tail, detail::fnv1a(payload));
  out.write(tail.data(), 8);
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct CheckpointData {
  ModelConfig cfg;
  std::vector<std::pair<std::string, Mat>> tensors;
};

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 16 || all.compare(0, 8, detail::kCheckpointMagic, 8) != 0) {
    throw ValidationError("not a checkpoint file: " + path);
  }
  const std::string payload = all.substr(8, all.size() - 16);
  detail::ByteReader tail{all, all.size() - 8};
  if (tail.u64() != detail::fnv1a(payload)) {
    throw ValidationError("checkpoint checksum mismatch (truncated or corrupted): " + path);
  }

  detail::ByteReader r{payload, 0};
  const std::uint32_t version = r.u32();
  if (version != static_cast<std::uint32_t>(kFormatVersion)) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = r.u32();
  CheckpointData data;
  try {
    data.cfg = model_config_from_json(nlohmann::json::parse(r.bytes(cfg_len)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint config: ") + e.what());
  }
  const std::uint64_t count = r.u64();
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    if (rows < 0 || cols < 0 || rows * cols > (1 << 28)) {
      throw ValidationError("checkpoint tensor " + name + " has implausible shape");
    }
    Mat v(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) v(i, j) = r.f64();
    }
    data.tensors.emplace_back(std::move(name), std::move(v));
  }
  if (r.pos != payload.size()) {
    throw ValidationError("checkpoint has trailing bytes: " + path);
  }
  return data;
}

// Loads a complete checkpoint. Every model parameter must be present, so a
// text-tower-only file is rejected with a pointed message.
inline MultimodalModel load_checkpoint(const std::string& path) {
  const CheckpointData data = read_checkpoint(path);
  MultimodalModel m = init_model(data.cfg, 0);
  std::unordered_map<std::string, nn::Param*> by_name;
  for (auto* p : m.parameters()) by_name[p->name] = p;
  std::unordered_map<std::string, bool> assigned;
  for (const auto& [name, v] : data.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CompatibilityError("checkpoint tensor " + name +
                               " has no counterpart in this architecture");
    }
    if (it->second->v.rows() != v.rows() || it->second->v.cols() != v.cols()) {
      throw CompatibilityError("checkpoint tensor " + name + " has wrong shape");
    }
    it->second->v = v;
    assigned[name] = true;
  }
  for (auto* p : m.parameters()) {
    if (!assigned.count(p->name)) {
      throw CompatibilityError("checkpoint is missing tensor " + p->name +
                               " (partial text-tower checkpoint? use it as an "
                               "initializer, not as a full model)");
    }
  }
  return m;
}

// Fresh random init, with any tensors present in `init` copied over. Used for
// text-initialized training: the checkpoint holds the text tower, everything
// else keeps its fresh values.
inline MultimodalModel init_model_from(const ModelConfig& cfg, std::uint64_t seed,
                                       const CheckpointData& init) {
  MultimodalModel m = init_model(cfg, seed);
  std::unordered_map<std::string, nn::Param*> by_name;
  for (auto* p : m.parameters()) by_name[p->name] = p;
  for (const auto& [name, v] : init.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CompatibilityError("initializer tensor " + name +
                               " has no counterpart in the target architecture");
    }
    if (it->second->v.rows() != v.rows() || it->second->v.cols() != v.cols()) {
      throw CompatibilityError("initializer tensor " + name + " has wrong shape");
    }
    it->second->v = v;
  }
  return m;
}

}  // namespace xmodal
