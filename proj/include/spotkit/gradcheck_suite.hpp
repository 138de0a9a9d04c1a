#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spotkit/encoders.hpp"
#include "spotkit/gradcheck.hpp"
#include "spotkit/losses.hpp"

namespace spotkit {

struct GradSuiteEntry {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

struct GradSuiteOptions {
  std::size_t instances = 100;           // per loss / model check
  std::size_t primitive_instances = 10;  // per primitive
  std::uint64_t seed = 0;
  std::size_t model_coords_per_tensor = 6;
  bool primitives = true;
};

namespace gradsuite {

inline Tensor leaf(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi, true);
}

// Reduces any output to a scalar with fixed random weights so every output
// element carries a distinct gradient.
inline Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

struct Case {
  std::string name;
  // Builds inputs and a loss closure for instance `i`.
  std::function<std::pair<std::vector<Tensor>, std::function<Tensor()>>(Rng&)> make;
};

inline std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> f, double lo, double hi) {
    cases.push_back({std::move(name), [f, lo, hi](Rng& rng) {
                       Tensor x = leaf({3, 4}, rng, lo, hi);
                       Tensor w = Tensor::uniform(f(x).shape(), rng, -1.0, 1.0);
                       return std::make_pair(std::vector<Tensor>{x}, std::function<Tensor()>([=] { return weighted_sum(f(x), w); }));
                     }});
  };
  unary("exp", [](const Tensor& x) { return exp(x); }, -2, 2);
  unary("log", [](const Tensor& x) { return log(x); }, 0.2, 2);
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, -2, 2);
  unary("gelu", [](const Tensor& x) { return gelu(x); }, -2, 2);
  unary("scale_add_scalar", [](const Tensor& x) { return add_scalar(scale(x, -1.7), 0.3); }, -2, 2);
  unary("softmax_lastdim", [](const Tensor& x) { return softmax_lastdim(x, 0.7); }, -2, 2);
  unary("log_softmax_lastdim", [](const Tensor& x) { return log_softmax_lastdim(x, 0.7); }, -2, 2);
  unary("l2_normalize_rows", [](const Tensor& x) { return l2_normalize(x, 1); }, -2, 2);
  unary("l2_normalize_cols", [](const Tensor& x) { return l2_normalize(x, 0); }, -2, 2);
  unary("transpose", [](const Tensor& x) { return transpose(x); }, -2, 2);
  unary("sum_lastdim", [](const Tensor& x) { return sum_lastdim(x); }, -2, 2);
  unary("mean", [](const Tensor& x) { return mean(x); }, -2, 2);
  unary("slice", [](const Tensor& x) { return slice(x, 1, 1, 3); }, -2, 2);
  unary("reshape", [](const Tensor& x) { return reshape(x, {2, 6}); }, -2, 2);
  unary("gather_rows", [](const Tensor& x) { return gather_rows(x, {2, 0, 2}); }, -2, 2);

  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> f) {
    cases.push_back({std::move(name), [=](Rng& rng) {
                       Tensor a = leaf(sa, rng), b = leaf(sb, rng);
                       Tensor probe = f(a, b);
                       Tensor w = Tensor::uniform(probe.shape(), rng, -1.0, 1.0);
                       return std::make_pair(std::vector<Tensor>{a, b},
                                             std::function<Tensor()>([=] { return weighted_sum(f(a, b), w); }));
                     }});
  };
  binary("add", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("matmul", {3, 4}, {4, 2}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
  binary("matmul_nt", {3, 4}, {5, 4}, [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); });
  binary("add_row", {3, 4}, {4}, [](const Tensor& a, const Tensor& b) { return add_row(a, b); });
  binary("concat_rows", {2, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return concat({a, b}, 0); });
  binary("concat_cols", {3, 2}, {3, 3}, [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); });
  binary("replace_rows", {4, 3}, {3}, [](const Tensor& a, const Tensor& b) { return replace_rows(a, {1, 3}, b); });
  binary("add_group_broadcast", {6, 3}, {3, 3}, [](const Tensor& a, const Tensor& b) { return add_group_broadcast(a, b); });
  binary("prepend_token", {6, 3}, {3}, [](const Tensor& a, const Tensor& b) { return prepend_token(a, b, 2); });

  cases.push_back({"linear", [](Rng& rng) {
                     Tensor x = leaf({3, 4}, rng), w = leaf({4, 2}, rng), b = leaf({2}, rng);
                     Tensor r = Tensor::uniform({3, 2}, rng, -1, 1);
                     return std::make_pair(std::vector<Tensor>{x, w, b},
                                           std::function<Tensor()>([=] { return weighted_sum(linear(x, w, b), r); }));
                   }});
  cases.push_back({"layer_norm", [](Rng& rng) {
                     Tensor x = leaf({3, 5}, rng), g = leaf({5}, rng), b = leaf({5}, rng);
                     Tensor r = Tensor::uniform({3, 5}, rng, -1, 1);
                     return std::make_pair(std::vector<Tensor>{x, g, b},
                                           std::function<Tensor()>([=] { return weighted_sum(layer_norm(x, g, b), r); }));
                   }});
  cases.push_back({"self_attention", [](Rng& rng) {
                     Tensor qkv = leaf({6, 12}, rng);  // 2 groups x 3 tokens, D = 4, 2 heads
                     Tensor r = Tensor::uniform({6, 4}, rng, -1, 1);
                     return std::make_pair(std::vector<Tensor>{qkv}, std::function<Tensor()>([=] {
                                             return weighted_sum(self_attention(qkv, 2, 2), r);
                                           }));
                   }});
  return cases;
}

inline WindowGeometry tiny_geometry() {
  WindowGeometry g;
  g.fps = 2.0;
  g.small_frames = 2;
  g.global_frames = 8;  // T_l = 4
  g.height = g.width = 4;
  g.channels = 2;
  g.patch = 2;
  g.temporal_patch = 2;
  return g;
}

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.dim = 8;
  m.temporal_dim = 8;
  m.spatial_depth = 1;
  m.temporal_depth = 1;
  m.heads = 2;
  m.mlp_ratio = 2;
  m.projector_hidden = 8;
  m.projector_out = 8;
  m.kd_hidden = 8;
  m.num_classes = 3;
  return m;
}

// Perturbs every parameter so layer norms and biases are away from their
// symmetric initial values.
inline void jitter_parameters(const NamedParams& params, Rng& rng) {
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (const auto& [name, p] : params) {
    Tensor t = p;
    for (auto& v : t.mutable_data()) v += d(rng);
  }
}

inline std::vector<Tensor> tensors_of(const NamedParams& params) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : params) out.push_back(p);
  return out;
}

inline std::vector<Case> loss_cases() {
  std::vector<Case> cases;
  cases.push_back({"moco_loss", [](Rng& rng) {
                     const std::size_t b = 2, d = 8;
                     Tensor z1s = leaf({b, d}, rng), z2s = leaf({b, d}, rng), z1t = leaf({b, d}, rng),
                            z2t = leaf({b, d}, rng);
                     auto queue = std::make_shared<MomentumQueue>(4, d);
                     queue->enqueue(Tensor::uniform({4, d}, rng, -2, 2));
                     return std::make_pair(std::vector<Tensor>{z1s, z2s, z1t, z2t}, std::function<Tensor()>([=] {
                                             return moco_loss(z1s, z2s, z1t, z2t, *queue, 0.5);
                                           }));
                   }});
  cases.push_back({"sce_kd_loss", [](Rng& rng) {
                     const std::size_t tl = 2, mp = 4, d = 6;
                     Tensor z = leaf({tl, d}, rng);
                     Tensor bank = Tensor::uniform({mp, d}, rng, -2, 2);
                     std::uniform_int_distribution<std::size_t> pick(0, mp - 1);
                     std::vector<std::size_t> idx{pick(rng), pick(rng)};
                     auto targets = std::make_shared<SceTargets>(sce_targets(idx, bank, 0.5, 0.5));
                     return std::make_pair(std::vector<Tensor>{z}, std::function<Tensor()>([=] {
                                             return sce_kd_loss(z, *targets, bank, 0.5);
                                           }));
                   }});
  cases.push_back({"bce_spotting_loss", [](Rng& rng) {
                     Tensor p = Tensor::uniform({4, 3}, rng, 0.05, 0.95, true);
                     Tensor y = Tensor::uniform({4, 3}, rng, 0.0, 1.0);
                     return std::make_pair(std::vector<Tensor>{p},
                                           std::function<Tensor()>([=] { return bce_spotting_loss(p, y); }));
                   }});
  return cases;
}

inline std::vector<Case> model_cases() {
  std::vector<Case> cases;
  cases.push_back({"spatial_encoder", [](Rng& rng) {
                     const auto g = tiny_geometry();
                     auto enc = std::make_shared<SpatialEncoder>(g, tiny_model(), rng);
                     NamedParams p;
                     enc->collect("spatial", p);
                     jitter_parameters(p, rng);
                     Tensor x = Tensor::uniform({3 * g.tubelets_per_small_window(), g.patch_dim()}, rng, -2, 2);
                     return std::make_pair(tensors_of(p),
                                           std::function<Tensor()>([=] { return mean(enc->forward(x, 3)); }));
                   }});
  cases.push_back({"temporal_encoder", [](Rng& rng) {
                     auto enc = std::make_shared<TemporalEncoder>(4, tiny_model(), rng);
                     NamedParams p;
                     enc->collect("temporal", p);
                     jitter_parameters(p, rng);
                     Tensor h = leaf({4, 8}, rng);
                     Tensor r = Tensor::uniform({4, 8}, rng, -1, 1);
                     auto in = tensors_of(p);
                     in.push_back(h);
                     return std::make_pair(in, std::function<Tensor()>([=] {
                                             return weighted_sum(temporal_forward(h, *enc), r);
                                           }));
                   }});
  cases.push_back({"tiny_model_bce", [](Rng& rng) {
                     const auto g = tiny_geometry();
                     auto model = std::make_shared<SpotModel>(g, tiny_model(), rng);
                     const NamedParams p = model->parameters();
                     jitter_parameters(p, rng);
                     const std::size_t groups = 2;
                     Tensor x = Tensor::uniform(
                         {groups * g.tokens_per_window() * g.tubelets_per_small_window(), g.patch_dim()}, rng, -2, 2);
                     Tensor y = Tensor::uniform({groups * g.tokens_per_window(), 3}, rng, 0, 1);
                     // A fixed mask pattern keeps the loss a deterministic function of the weights.
                     const std::uint64_t mask_seed = rng();
                     return std::make_pair(tensors_of(p), std::function<Tensor()>([=] {
                                             Rng mask_rng(mask_seed);
                                             return bce_spotting_loss(
                                                 classify(model->encode(x, groups, 0.25, &mask_rng), model->classifier), y);
                                           }));
                   }});
  return cases;
}

inline GradSuiteEntry run_case(const Case& c, std::size_t instances, std::uint64_t seed, std::size_t per_tensor) {
  GradSuiteEntry e{c.name, instances, 0, 0.0, ""};
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = make_rng(seed, c.name, i);
    auto [inputs, fn] = c.make(rng);
    GradCheckOptions opt;
    opt.max_per_tensor = per_tensor;
    opt.seed = derive_seed(seed, c.name + ".coords", i);
    const auto r = gradcheck(fn, inputs, opt);
    e.coordinates += r.coordinates;
    if (e.worst.empty() || r.max_rel_error > e.max_rel_error) {
      e.max_rel_error = r.max_rel_error;
      e.worst = "instance " + std::to_string(i) + " input " + r.worst;
    }
  }
  return e;
}

}  // namespace gradsuite

/// Finite-difference check of every primitive, loss and encoder on random
/// inputs drawn from [-2, 2].
inline std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& opt = {}) {
  std::vector<GradSuiteEntry> out;
  if (opt.primitives) {
    for (const auto& c : gradsuite::primitive_cases()) out.push_back(gradsuite::run_case(c, opt.primitive_instances, opt.seed, 0));
  }
  for (const auto& c : gradsuite::loss_cases()) out.push_back(gradsuite::run_case(c, opt.instances, opt.seed, 0));
  for (const auto& c : gradsuite::model_cases()) {
    out.push_back(gradsuite::run_case(c, opt.instances, opt.seed, opt.model_coords_per_tensor));
  }
  return out;
}

}  // namespace spotkit
