#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spotkit/errors.hpp"
#include "spotkit/geometry.hpp"
#include "spotkit/rng.hpp"
#include "spotkit/tensor.hpp"

namespace spotkit {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Architecture widths. Defaults are the desk-scale model; the projector
/// sizes default to the full-scale values and are usually overridden.
struct ModelConfig {
  std::size_t dim = 32;           // spatial token width D
  std::size_t temporal_dim = 32;  // temporal output width D_t
  std::size_t spatial_depth = 2;
  std::size_t temporal_depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t projector_hidden = 1024;
  std::size_t projector_out = 256;
  std::size_t kd_hidden = 1024;
  std::size_t num_classes = 5;

  void validate() const {
    if (dim == 0 || temporal_dim == 0 || heads == 0 || mlp_ratio == 0) throw ConfigError("model: widths must be positive");
    if (dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
    if (projector_hidden == 0 || projector_out == 0 || kd_hidden == 0) throw ConfigError("model: head sizes must be positive");
    if (num_classes == 0) throw ConfigError("model: num_classes must be positive");
  }
  bool operator==(const ModelConfig&) const = default;
};

namespace init {

inline Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return Tensor::uniform({in, out}, rng, -bound, bound, true);
}

inline Tensor small_normal(Shape shape, Rng& rng) { return Tensor::randn(std::move(shape), rng, 0.02, true); }

}  // namespace init

struct Linear {
  Tensor w, b;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) : w(init::xavier(in, out, rng)), b(Tensor::zeros({out}, true)) {}

  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gamma(Tensor::full({d}, 1.0, true)), beta(Tensor::zeros({d}, true)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

/// Pre-norm transformer block; attention is restricted to groups of rows.
struct TransformerBlock {
  LayerNorm norm1, norm2;
  Linear qkv, proj, fc1, fc2;
  std::size_t heads = 1;

  TransformerBlock() = default;
  TransformerBlock(std::size_t d, std::size_t heads_, std::size_t mlp_ratio, Rng& rng)
      : norm1(d), norm2(d), qkv(d, 3 * d, rng), proj(d, d, rng), fc1(d, mlp_ratio * d, rng),
        fc2(mlp_ratio * d, d, rng), heads(heads_) {}

  Tensor operator()(const Tensor& x, std::size_t groups) const {
    Tensor h = self_attention(qkv(norm1(x)), groups, heads);
    Tensor y = add(x, proj(h));
    return add(y, fc2(gelu(fc1(norm2(y)))));
  }
  void collect(const std::string& prefix, NamedParams& out) const {
    norm1.collect(prefix + ".norm1", out);
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
    norm2.collect(prefix + ".norm2", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

/// Stack of linear layers with GELU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t num_layers, Rng& rng) {
    if (num_layers == 0) throw ConfigError("mlp needs at least one layer");
    for (std::size_t i = 0; i < num_layers; ++i) {
      const std::size_t a = i == 0 ? in : hidden;
      const std::size_t b = i + 1 == num_layers ? out : hidden;
      layers.emplace_back(a, b, rng);
    }
  }

  Tensor operator()(Tensor x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = gelu(x);
    }
    return x;
  }
  void collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
  }
};

/// Tubelet vectors for one small window.
///
/// `frames` holds geometry.small_frames frames laid out [frame][channel][y][x].
/// Appends tubelets_per_small_window() rows of patch_dim() values to `out`,
/// ordered (time-tubelet, patch row, patch col); each row is laid out
/// (frame-in-tubelet, channel, y, x).
inline void append_tubelets(std::span<const float> frames, const WindowGeometry& g, std::vector<double>& out) {
  const std::size_t fs = g.frame_size();
  if (frames.size() != g.small_frames * fs) {
    throw ShapeError("small window has " + std::to_string(frames.size()) + " values, expected " +
                     std::to_string(g.small_frames * fs));
  }
  const std::size_t ph = g.height / g.patch, pw = g.width / g.patch;
  for (std::size_t tt = 0; tt < g.small_frames / g.temporal_patch; ++tt) {
    for (std::size_t py = 0; py < ph; ++py) {
      for (std::size_t px = 0; px < pw; ++px) {
        for (std::size_t f = 0; f < g.temporal_patch; ++f) {
          const float* frame = frames.data() + (tt * g.temporal_patch + f) * fs;
          for (std::size_t c = 0; c < g.channels; ++c) {
            for (std::size_t y = 0; y < g.patch; ++y) {
              const float* row = frame + (c * g.height + py * g.patch + y) * g.width + px * g.patch;
              for (std::size_t x = 0; x < g.patch; ++x) out.push_back(static_cast<double>(row[x]));
            }
          }
        }
      }
    }
  }
}

/// Vision transformer over one small window; the class token is the output.
struct SpatialEncoder {
  WindowGeometry geometry;
  Linear patch_embed;
  Tensor cls_token;  // [D]
  Tensor pos_embed;  // [spatial_tokens x D]
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;

  SpatialEncoder() = default;
  SpatialEncoder(const WindowGeometry& g, const ModelConfig& m, Rng& rng)
      : geometry(g), patch_embed(g.patch_dim(), m.dim, rng), cls_token(init::small_normal({m.dim}, rng)),
        pos_embed(init::small_normal({g.spatial_tokens(), m.dim}, rng)), norm(m.dim) {
    for (std::size_t i = 0; i < m.spatial_depth; ++i) blocks.emplace_back(m.dim, m.heads, m.mlp_ratio, rng);
  }

  std::size_t dim() const { return cls_token.size(); }

  /// `tubelets` is [G * tubelets_per_small_window x patch_dim]; returns [G x D].
  Tensor forward(const Tensor& tubelets, std::size_t groups) const {
    const std::size_t per = geometry.tubelets_per_small_window();
    if (tubelets.rank() != 2 || tubelets.dim(1) != geometry.patch_dim() || tubelets.dim(0) != groups * per) {
      throw ShapeError("spatial_forward: tubelets " + shape_str(tubelets.shape()) + " do not match " +
                       std::to_string(groups) + " windows of the configured geometry");
    }
    Tensor x = prepend_token(patch_embed(tubelets), cls_token, groups);
    x = add_group_broadcast(x, pos_embed);
    for (const auto& b : blocks) x = b(x, groups);
    x = norm(x);
    std::vector<std::size_t> cls_rows(groups);
    for (std::size_t i = 0; i < groups; ++i) cls_rows[i] = i * (per + 1);
    return gather_rows(x, cls_rows);
  }

  void collect(const std::string& prefix, NamedParams& out) const {
    patch_embed.collect(prefix + ".patch_embed", out);
    out.emplace_back(prefix + ".cls_token", cls_token);
    out.emplace_back(prefix + ".pos_embed", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
    norm.collect(prefix + ".norm", out);
  }
};

/// Spatial embedding of one small window of raw frames (convenience wrapper).
inline Tensor spatial_forward(std::span<const float> window, const SpatialEncoder& enc) {
  std::vector<double> rows;
  append_tubelets(window, enc.geometry, rows);
  const std::size_t n = enc.geometry.tubelets_per_small_window();
  return reshape(enc.forward(Tensor::from({n, enc.geometry.patch_dim()}, std::move(rows)), 1), {enc.dim()});
}

struct MaskedTokens {
  Tensor tokens;
  std::vector<std::size_t> masked;  // row indices, ascending
};

inline std::size_t mask_count(double ratio, std::size_t length) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(length) + 0.5));
}

/// Mask positions for one sequence: round-half-up(ratio * length) distinct
/// indices drawn uniformly without replacement, sorted ascending.
inline std::vector<std::size_t> draw_mask_positions(std::size_t length, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ParameterError("mask ratio must be in [0, 1]");
  const std::size_t k = mask_count(ratio, length);
  std::vector<std::size_t> pool(length);
  for (std::size_t i = 0; i < length; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, length - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Replaces a fraction of each group's tokens with `mask_token`.
/// `tokens` is [groups * length x D]; masks are drawn independently per group.
inline MaskedTokens apply_token_mask(const Tensor& tokens, const Tensor& mask_token, double ratio, Rng& rng,
                                     std::size_t groups = 1) {
  if (tokens.rank() != 2 || groups == 0 || tokens.dim(0) % groups != 0) {
    throw ShapeError("apply_token_mask: bad token matrix " + shape_str(tokens.shape()));
  }
  const std::size_t length = tokens.dim(0) / groups;
  MaskedTokens result;
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i : draw_mask_positions(length, ratio, rng)) result.masked.push_back(g * length + i);
  }
  result.tokens = result.masked.empty() ? tokens : replace_rows(tokens, result.masked, mask_token);
  return result;
}

inline MaskedTokens apply_token_mask(const Tensor& tokens, const Tensor& mask_token, double ratio,
                                     std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return apply_token_mask(tokens, mask_token, ratio, rng, 1);
}

/// Transformer over the sequence of small-window tokens.
struct TemporalEncoder {
  Tensor pos_embed;   // [T_l x D]
  Tensor mask_token;  // [D]
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;
  Linear out_proj;  // only when D != D_t

  TemporalEncoder() = default;
  TemporalEncoder(std::size_t length, const ModelConfig& m, Rng& rng)
      : pos_embed(init::small_normal({length, m.dim}, rng)), mask_token(init::small_normal({m.dim}, rng)),
        norm(m.dim) {
    for (std::size_t i = 0; i < m.temporal_depth; ++i) blocks.emplace_back(m.dim, m.heads, m.mlp_ratio, rng);
    if (m.temporal_dim != m.dim) out_proj = Linear(m.dim, m.temporal_dim, rng);
  }

  std::size_t length() const { return pos_embed.dim(0); }

  /// `tokens` is [G * T_l x D]; returns [G * T_l x D_t] in the same order.
  Tensor forward(const Tensor& tokens, std::size_t groups = 1) const {
    if (tokens.rank() != 2 || groups == 0 || tokens.dim(0) != groups * length() || tokens.dim(1) != pos_embed.dim(1)) {
      throw ShapeError("temporal_forward: tokens " + shape_str(tokens.shape()) + " do not match " +
                       std::to_string(groups) + " sequences of length " + std::to_string(length()));
    }
    Tensor x = add_group_broadcast(tokens, pos_embed);
    if (blocks.empty()) return out_proj.w.defined() ? out_proj(x) : x;
    for (const auto& b : blocks) x = b(x, groups);
    x = norm(x);
    return out_proj.w.defined() ? out_proj(x) : x;
  }

  void collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".pos_embed", pos_embed);
    out.emplace_back(prefix + ".mask_token", mask_token);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
    norm.collect(prefix + ".norm", out);
    if (out_proj.w.defined()) out_proj.collect(prefix + ".out_proj", out);
  }
};

inline Tensor temporal_forward(const Tensor& tokens, const TemporalEncoder& enc) { return enc.forward(tokens, 1); }

/// Per-token, per-class probabilities: sigmoid(tokens W + b).
inline Tensor classify(const Tensor& tokens_out, const Linear& head) {
  if (tokens_out.rank() != 2 || tokens_out.dim(1) != head.w.dim(0)) {
    throw ShapeError("classify: tokens " + shape_str(tokens_out.shape()) + " vs head " + shape_str(head.w.shape()));
  }
  return sigmoid(head(tokens_out));
}

/// target <- m * target + (1 - m) * online, elementwise.
inline void ema_update(const NamedParams& online, const NamedParams& target, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ParameterError("EMA momentum must be in [0, 1]");
  if (online.size() != target.size()) throw ShapeError("ema_update: parameter lists differ in length");
  for (std::size_t i = 0; i < online.size(); ++i) {
    if (online[i].second.shape() != target[i].second.shape()) {
      throw ShapeError("ema_update: shape mismatch at " + online[i].first);
    }
  }
  for (std::size_t i = 0; i < online.size(); ++i) {
    auto src = online[i].second.data();
    Tensor dst_t = target[i].second;
    auto dst = dst_t.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = momentum * dst[k] + (1.0 - momentum) * src[k];
  }
}

/// Independent copy of every parameter (used to build EMA targets).
inline void copy_values(const NamedParams& from, const NamedParams& to) {
  if (from.size() != to.size()) throw ShapeError("copy_values: parameter lists differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].second.shape() != to[i].second.shape()) throw ShapeError("copy_values: shape mismatch at " + from[i].first);
    Tensor dst = to[i].second;
    std::copy(from[i].second.data().begin(), from[i].second.data().end(), dst.mutable_data().begin());
  }
}

// ---------------------------------------------------------------------------
// Composite models

/// Spatial encoder -> temporal encoder -> linear classifier.
struct SpotModel {
  WindowGeometry geometry;
  ModelConfig config;
  SpatialEncoder spatial;
  TemporalEncoder temporal;
  Linear classifier;

  SpotModel() = default;
  SpotModel(const WindowGeometry& g, const ModelConfig& m, Rng& rng)
      : geometry(g), config(m), spatial(g, m, rng), temporal(g.tokens_per_window(), m, rng),
        classifier(m.temporal_dim, m.num_classes, rng) {}

  NamedParams backbone_parameters() const {
    NamedParams p;
    spatial.collect("spatial", p);
    temporal.collect("temporal", p);
    return p;
  }
  NamedParams parameters() const {
    NamedParams p = backbone_parameters();
    classifier.collect("classifier", p);
    return p;
  }

  /// Temporal tokens for G global windows; `tubelets` covers G * T_l small windows.
  Tensor encode(const Tensor& tubelets, std::size_t groups, double mask_ratio, Rng* mask_rng) const {
    const std::size_t tl = geometry.tokens_per_window();
    Tensor h = spatial.forward(tubelets, groups * tl);
    if (mask_ratio > 0.0 && mask_rng) h = apply_token_mask(h, temporal.mask_token, mask_ratio, *mask_rng, groups).tokens;
    return temporal.forward(h, groups);
  }
};

/// Online/target branches and heads for spatial contrastive pretraining.
struct SiameseModel {
  SpatialEncoder online;
  Mlp projector;  // 3 layers
  Mlp predictor;  // 2 layers
  SpatialEncoder target;
  Mlp target_projector;

  SiameseModel() = default;
  SiameseModel(const WindowGeometry& g, const ModelConfig& m, Rng& rng)
      : online(g, m, rng), projector(m.dim, m.projector_hidden, m.projector_out, 3, rng),
        predictor(m.projector_out, m.projector_hidden, m.projector_out, 2, rng), target(g, m, rng),
        target_projector(m.dim, m.projector_hidden, m.projector_out, 3, rng) {
    copy_values(online_branch(), target_branch());
    for (auto& [name, t] : target_branch()) {
      Tensor p = t;
      p.set_requires_grad(false);
    }
  }

  NamedParams online_branch() const {
    NamedParams p;
    online.collect("spatial", p);
    projector.collect("projector", p);
    return p;
  }
  NamedParams target_branch() const {
    NamedParams p;
    target.collect("target.spatial", p);
    target_projector.collect("target.projector", p);
    return p;
  }
  NamedParams trainable() const {
    NamedParams p = online_branch();
    predictor.collect("predictor", p);
    return p;
  }
};

}  // namespace spotkit
