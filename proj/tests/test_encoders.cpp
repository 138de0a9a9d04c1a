#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "spotkit/encoders.hpp"
#include "spotkit/gradcheck.hpp"
#include "spotkit/losses.hpp"

using namespace spotkit;

namespace {

ModelConfig small_config() {
  ModelConfig m;
  m.dim = 8;
  m.temporal_dim = 8;
  m.spatial_depth = 1;
  m.temporal_depth = 1;
  m.heads = 2;
  m.mlp_ratio = 2;
  m.num_classes = 3;
  return m;
}

WindowGeometry small_geometry() {
  WindowGeometry g;
  g.height = g.width = 4;
  g.channels = 2;
  g.patch = 2;
  g.global_frames = 8;
  return g;
}

void fill(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void randomize(Tensor t, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : t.mutable_data()) x = d(rng);
}

std::vector<double> ref_layer_norm(std::vector<double> x, const Tensor& gamma, const Tensor& beta) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean) / n;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
  return x;
}

}  // namespace

TEST(Geometry, DefaultSmallWindowHasSeventeenTokens) {
  const WindowGeometry g;
  EXPECT_EQ(g.spatial_tokens(), 17u);
  EXPECT_EQ(g.tokens_per_window(), 32u);
  Rng rng(0);
  const SpatialEncoder enc(g, ModelConfig{}, rng);
  EXPECT_EQ(enc.pos_embed.dim(0), 17u);
}

TEST(Geometry, InvalidShapesAreRejected) {
  WindowGeometry g;
  g.global_frames = 63;
  EXPECT_THROW(g.validate(), ConfigError);
  g = {};
  g.patch = 5;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(SpatialEncoder, ZeroInputAndZeroWeightsFollowTheBiasPath) {
  Rng rng(1);
  const auto g = small_geometry();
  auto m = small_config();
  m.spatial_depth = 2;
  SpatialEncoder enc(g, m, rng);
  NamedParams p;
  enc.collect("s", p);
  for (auto& [name, t] : p) {
    if (name.ends_with(".w")) fill(t, 0.0);
    else randomize(t, rng);
  }
  const std::vector<float> frames(g.small_frames * g.frame_size(), 0.0f);
  const Tensor out = spatial_forward(frames, enc);

  // With zero weights every attention value row equals the value bias, so
  // each block adds proj.b + fc2.b to the class-token row.
  std::vector<double> x(m.dim);
  for (std::size_t i = 0; i < m.dim; ++i) x[i] = enc.cls_token[i] + enc.pos_embed.at(0, i);
  for (const auto& b : enc.blocks) {
    for (std::size_t i = 0; i < m.dim; ++i) x[i] += b.proj.b[i] + b.fc2.b[i];
  }
  const auto want = ref_layer_norm(x, enc.norm.gamma, enc.norm.beta);
  ASSERT_EQ(out.shape(), (Shape{m.dim}));
  for (std::size_t i = 0; i < m.dim; ++i) EXPECT_NEAR(out[i], want[i], 1e-12);
}

TEST(SpatialEncoder, WrongWindowShapeIsShapeError) {
  Rng rng(2);
  const auto g = small_geometry();
  const SpatialEncoder enc(g, small_config(), rng);
  const std::vector<float> frames(g.small_frames * g.frame_size() + 1, 0.0f);
  EXPECT_THROW(spatial_forward(frames, enc), ShapeError);
  EXPECT_THROW(enc.forward(Tensor::zeros({3, g.patch_dim()}), 1), ShapeError);
}

TEST(SpatialEncoder, BatchedForwardEqualsPerWindowForward) {
  Rng rng(3);
  const auto g = small_geometry();
  const SpatialEncoder enc(g, small_config(), rng);
  const std::size_t per = g.tubelets_per_small_window();
  const Tensor all = Tensor::uniform({3 * per, g.patch_dim()}, rng, -1, 1);
  const Tensor batched = enc.forward(all, 3);
  for (std::size_t w = 0; w < 3; ++w) {
    const Tensor single = enc.forward(slice(all, 0, w * per, (w + 1) * per), 1);
    for (std::size_t i = 0; i < enc.dim(); ++i) EXPECT_NEAR(batched.at(w, i), single[i], 1e-12);
  }
}

TEST(SpatialEncoder, PatchWeightGradientMatchesFiniteDifferences) {
  Rng rng(4);
  const auto g = small_geometry();
  const SpatialEncoder enc(g, small_config(), rng);
  const Tensor x = Tensor::uniform({2 * g.tubelets_per_small_window(), g.patch_dim()}, rng, -2, 2);
  const auto r = gradcheck([&] { return mean(enc.forward(x, 2)); }, {enc.patch_embed.w, enc.patch_embed.b});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(TokenMask, ZeroRatioIsIdentity) {
  Rng rng(5);
  const Tensor tokens = Tensor::uniform({6, 4}, rng, -1, 1);
  const auto r = apply_token_mask(tokens, Tensor::zeros({4}), 0.0, std::uint64_t{9});
  EXPECT_TRUE(r.masked.empty());
  EXPECT_EQ(r.tokens.values(), tokens.values());
}

TEST(TokenMask, QuarterOfThirtyTwoMasksEight) {
  const Tensor tokens = Tensor::zeros({32, 4});
  EXPECT_EQ(apply_token_mask(tokens, Tensor::full({4}, 1.0), 0.25, std::uint64_t{0}).masked.size(), 8u);
}

TEST(TokenMask, SameSeedSamePositions) {
  const Tensor tokens = Tensor::zeros({32, 4});
  const auto a = apply_token_mask(tokens, Tensor::full({4}, 1.0), 0.4, std::uint64_t{77});
  const auto b = apply_token_mask(tokens, Tensor::full({4}, 1.0), 0.4, std::uint64_t{77});
  EXPECT_EQ(a.masked, b.masked);
}

TEST(TokenMask, CountDistinctnessAndContentHoldForAllRatios) {
  Rng rng(6);
  for (std::size_t length = 1; length <= 40; ++length) {
    for (int step = 0; step <= 20; ++step) {
      const double ratio = step / 20.0;
      const Tensor tokens = Tensor::uniform({length, 3}, rng, -1, 1);
      const Tensor mask = Tensor::from({3}, {7, 8, 9});
      const auto r = apply_token_mask(tokens, mask, ratio, rng, 1);
      const auto want = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(length) + 0.5));
      ASSERT_EQ(r.masked.size(), want) << "length " << length << " ratio " << ratio;
      const std::set<std::size_t> unique(r.masked.begin(), r.masked.end());
      ASSERT_EQ(unique.size(), want);
      for (std::size_t row = 0; row < length; ++row) {
        const bool masked = unique.count(row) > 0;
        for (std::size_t c = 0; c < 3; ++c) {
          ASSERT_EQ(r.tokens.at(row, c), masked ? mask[c] : tokens.at(row, c));
        }
      }
    }
  }
}

TEST(TokenMask, RoundsHalfUp) {
  EXPECT_EQ(mask_count(0.5, 1), 1u);
  EXPECT_EQ(mask_count(0.25, 2), 1u);
  EXPECT_EQ(mask_count(0.125, 4), 1u);
  EXPECT_EQ(mask_count(0.1, 4), 0u);
}

TEST(TokenMask, GroupsAreMaskedIndependently) {
  Rng rng(8);
  const auto r = apply_token_mask(Tensor::zeros({3 * 8, 2}), Tensor::full({2}, 1.0), 0.25, rng, 3);
  ASSERT_EQ(r.masked.size(), 6u);
  for (std::size_t g = 0; g < 3; ++g) {
    EXPECT_EQ(std::count_if(r.masked.begin(), r.masked.end(), [&](std::size_t i) { return i / 8 == g; }), 2);
  }
}

TEST(TemporalEncoder, DepthZeroAddsPositionalEmbedding) {
  Rng rng(9);
  auto m = small_config();
  m.temporal_depth = 0;
  const TemporalEncoder enc(5, m, rng);
  const Tensor tokens = Tensor::uniform({5, m.dim}, rng, -1, 1);
  const Tensor out = temporal_forward(tokens, enc);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < m.dim; ++c) EXPECT_NEAR(out.at(i, c), tokens.at(i, c) + enc.pos_embed.at(i, c), 1e-15);
}

TEST(TemporalEncoder, PermutationEquivariantWithoutPositions) {
  Rng rng(10);
  auto m = small_config();
  m.temporal_depth = 2;
  TemporalEncoder enc(6, m, rng);
  fill(enc.pos_embed, 0.0);
  const Tensor tokens = Tensor::uniform({6, m.dim}, rng, -1, 1);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const Tensor out = temporal_forward(tokens, enc);
  const Tensor out_perm = temporal_forward(gather_rows(tokens, perm), enc);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < m.dim; ++c) EXPECT_NEAR(out_perm.at(i, c), out.at(perm[i], c), 1e-12);
}

TEST(TemporalEncoder, EveryOutputDependsOnEveryInput) {
  Rng rng(11);
  const TemporalEncoder enc(4, small_config(), rng);
  const Tensor tokens = Tensor::uniform({4, 8}, rng, -1, 1);
  const Tensor base = temporal_forward(tokens, enc);
  Tensor bumped = tokens.clone(false);
  bumped.mutable_data()[0] += 0.5;  // first token only
  const Tensor out = temporal_forward(bumped, enc);
  for (std::size_t i = 1; i < 4; ++i) {
    double diff = 0;
    for (std::size_t c = 0; c < 8; ++c) diff += std::abs(out.at(i, c) - base.at(i, c));
    EXPECT_GT(diff, 1e-9) << "token " << i;
  }
}

TEST(TemporalEncoder, LengthMismatchIsShapeError) {
  Rng rng(12);
  const TemporalEncoder enc(4, small_config(), rng);
  EXPECT_THROW(temporal_forward(Tensor::zeros({5, 8}), enc), ShapeError);
}

TEST(TemporalEncoder, ProjectsToTemporalWidth) {
  Rng rng(13);
  auto m = small_config();
  m.temporal_dim = 5;
  const TemporalEncoder enc(4, m, rng);
  EXPECT_EQ(temporal_forward(Tensor::zeros({4, 8}), enc).shape(), (Shape{4, 5}));
}

TEST(TemporalEncoder, GradientOnFourTokens) {
  Rng rng(14);
  const TemporalEncoder enc(4, small_config(), rng);
  Tensor tokens = Tensor::uniform({4, 8}, rng, -2, 2, true);
  const Tensor w = Tensor::uniform({4, 8}, rng, -1, 1);
  const auto r = gradcheck([&] { return sum(mul(temporal_forward(tokens, enc), w)); }, {tokens, enc.pos_embed});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Ema, Limits) {
  const Tensor online = Tensor::from({1}, {2.0});
  Tensor target = Tensor::from({1}, {0.0});
  ema_update({{"p", online}}, {{"p", target}}, 1.0);
  EXPECT_EQ(target[0], 0.0);
  ema_update({{"p", online}}, {{"p", target}}, 0.5);
  EXPECT_EQ(target[0], 1.0);
  ema_update({{"p", online}}, {{"p", target}}, 0.0);
  EXPECT_EQ(target[0], 2.0);
}

TEST(Ema, ShapeMismatchIsShapeError) {
  EXPECT_THROW(ema_update({{"p", Tensor::zeros({2})}}, {{"p", Tensor::zeros({3})}}, 0.5), ShapeError);
}

TEST(Ema, UpdateIsConvex) {
  Rng rng(15);
  std::uniform_real_distribution<double> mom(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor online = Tensor::uniform({3, 3}, rng, -5, 5);
    const Tensor before = Tensor::uniform({3, 3}, rng, -5, 5);
    Tensor target = before.clone(false);
    ema_update({{"p", online}}, {{"p", target}}, mom(rng));
    for (std::size_t i = 0; i < 9; ++i) {
      EXPECT_GE(target[i], std::min(before[i], online[i]) - 1e-12);
      EXPECT_LE(target[i], std::max(before[i], online[i]) + 1e-12);
    }
  }
}

TEST(Classify, ZeroHeadGivesOneHalf) {
  Rng rng(16);
  Linear head(8, 3, rng);
  fill(head.w, 0.0);
  const Tensor p = classify(Tensor::uniform({4, 8}, rng, -1, 1), head);
  for (double v : p.data()) EXPECT_EQ(v, 0.5);
}

TEST(Classify, LargeBiasSaturates) {
  Rng rng(17);
  Linear head(8, 3, rng);
  fill(head.w, 0.0);
  Tensor b = head.b;
  b.mutable_data()[1] = 40.0;
  const Tensor p = classify(Tensor::uniform({4, 8}, rng, -1, 1), head);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_GT(p.at(r, 1), 1.0 - 1e-12);
    EXPECT_GT(p.at(r, 0), 0.0);
    EXPECT_LT(p.at(r, 0), 1.0);
  }
}

TEST(Classify, GradientThroughSigmoidAndBce) {
  Rng rng(18);
  const Linear head(8, 3, rng);
  const Tensor z = Tensor::uniform({4, 8}, rng, -2, 2);
  const Tensor y = Tensor::uniform({4, 3}, rng, 0, 1);
  const auto r = gradcheck([&] { return bce_spotting_loss(classify(z, head), y); }, {head.w, head.b});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(SpotModel, EncodeShapeAndParameterNames) {
  Rng rng(19);
  const auto g = small_geometry();
  const SpotModel model(g, small_config(), rng);
  const std::size_t tl = g.tokens_per_window();
  const Tensor x = Tensor::zeros({2 * tl * g.tubelets_per_small_window(), g.patch_dim()});
  EXPECT_EQ(model.encode(x, 2, 0.0, nullptr).shape(), (Shape{2 * tl, 8}));
  for (const auto& [name, t] : model.backbone_parameters()) {
    EXPECT_TRUE(name.starts_with("spatial.") || name.starts_with("temporal.")) << name;
  }
  EXPECT_EQ(model.parameters().back().first, "classifier.b");
}

TEST(SiameseModel, TargetStartsAsCopyAndIsNotTrainable) {
  Rng rng(20);
  auto m = small_config();
  m.projector_hidden = 8;
  m.projector_out = 4;
  const SiameseModel s(small_geometry(), m, rng);
  const auto online = s.online_branch();
  const auto target = s.target_branch();
  ASSERT_EQ(online.size(), target.size());
  for (std::size_t i = 0; i < online.size(); ++i) {
    EXPECT_EQ(online[i].second.values(), target[i].second.values()) << online[i].first;
    EXPECT_FALSE(target[i].second.requires_grad());
  }
  for (const auto& [name, t] : s.trainable()) EXPECT_FALSE(name.starts_with("target")) << name;
}
