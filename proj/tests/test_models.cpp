#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <vector>

#include "lesion/models.hpp"
#include "lesion/ops.hpp"
#include "test_util.hpp"

using namespace lesion;
using namespace lesion::test;

namespace {

// Moves patch perm[t] of the source image to slot t.
Tensor permute_patches(const Tensor& image, std::size_t p, const std::vector<std::size_t>& perm) {
  const std::size_t h = image.dim(1), w = image.dim(2), gw = w / p;
  std::vector<double> out(image.size());
  const auto src = image.data();
  for (std::size_t t = 0; t < perm.size(); ++t) {
    const std::size_t ty = t / gw, tx = t % gw, sy = perm[t] / gw, sx = perm[t] % gw;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          out[(c * h + ty * p + y) * w + tx * p + x] = src[(c * h + sy * p + y) * w + sx * p + x];
  }
  return Tensor(image.shape(), out);
}

void zero_all(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    fill(t, 0.0);
  }
}

EncoderLayer random_layer(std::size_t d, std::size_t hidden, Rng& rng) {
  EncoderLayer l;
  l.ln1_gain = random_tensor({d}, rng, 0.5, 1.5);
  l.ln1_shift = random_tensor({d}, rng);
  l.wq = random_tensor({d, d}, rng);
  l.wk = random_tensor({d, d}, rng);
  l.wv = random_tensor({d, d}, rng);
  l.wo = random_tensor({d, d}, rng);
  l.ln2_gain = random_tensor({d}, rng, 0.5, 1.5);
  l.ln2_shift = random_tensor({d}, rng);
  l.mlp_w1 = random_tensor({d, hidden}, rng);
  l.mlp_b1 = random_tensor({hidden}, rng);
  l.mlp_w2 = random_tensor({hidden, d}, rng);
  l.mlp_b2 = random_tensor({d}, rng);
  return l;
}

// Loop-level multi-head attention: returns the output and the [h,T,T] weights.
std::pair<std::vector<double>, std::vector<double>> naive_msa(const Tensor& seq, const EncoderLayer& l, std::size_t heads) {
  const std::size_t t = seq.dim(0), d = seq.dim(1), dh = d / heads;
  auto project = [&](const Tensor& w) {
    std::vector<double> out(t * d, 0.0);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[i * d + j] += seq[i * d + k] * w[k * d + j];
    return out;
  };
  const auto q = project(l.wq), k = project(l.wk), v = project(l.wv);
  std::vector<double> ctx(t * d, 0.0), weights(heads * t * t);
  for (std::size_t hh = 0; hh < heads; ++hh)
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(t);
      double mx = -1e300;
      for (std::size_t j = 0; j < t; ++j) {
        double dot = 0.0;
        for (std::size_t e = 0; e < dh; ++e) dot += q[i * d + hh * dh + e] * k[j * d + hh * dh + e];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < t; ++j) {
        weights[(hh * t + i) * t + j] = s[j] / z;
        for (std::size_t e = 0; e < dh; ++e) ctx[i * d + hh * dh + e] += s[j] / z * v[j * d + hh * dh + e];
      }
    }
  std::vector<double> out(t * d, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k2 = 0; k2 < d; ++k2) out[i * d + j] += ctx[i * d + k2] * l.wo[k2 * d + j];
  return {out, weights};
}

}  // namespace

TEST(Patchify, ShapesAndDegenerateSplit) {
  Rng rng(1);
  Tensor image = random_tensor({3, 4, 4}, rng);
  EXPECT_EQ(patchify(image, 2).shape(), (Shape{4, 12}));
  Tensor whole = patchify(image, 4);
  ASSERT_EQ(whole.shape(), (Shape{1, 48}));
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(whole[i], image[i]);
  EXPECT_EQ(error_kind([&] { patchify(image, 3); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(error_kind([&] { patchify(Tensor({2, 4, 4}), 2); }), ErrorKind::ShapeMismatch);
}

TEST(Patchify, IndexMapOracle) {
  std::vector<double> values(48);
  std::iota(values.begin(), values.end(), 0.0);
  Tensor patches = patchify(Tensor({3, 4, 4}, values), 2);
  // Patch 0: top-left 2x2 block of each channel, channel-major.
  expect_values(reshape(gather(patches, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, {12}), {12}),
                {0, 1, 4, 5, 16, 17, 20, 21, 32, 33, 36, 37});
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t py = t / 2, px = t % 2;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x)
          EXPECT_EQ(patches[t * 12 + c * 4 + y * 2 + x], values[(c * 4 + py * 2 + y) * 4 + px * 2 + x]);
  }
}

TEST(Embed, Examples) {
  Rng rng(2);
  Tensor patches = random_tensor({4, 12}, rng);
  Tensor positional = random_tensor({4, 6}, rng);
  expect_values(embed(patches, Tensor({12, 6}), Tensor({4, 6})), std::vector<double>(24, 0.0));
  expect_values(embed(patches, Tensor({12, 6}), positional), positional.to_vector());
  std::vector<double> eye(144, 0.0);
  for (std::size_t i = 0; i < 12; ++i) eye[i * 12 + i] = 1.0;
  expect_values(embed(patches, Tensor({12, 12}, eye), Tensor({4, 12})), patches.to_vector());
  EXPECT_EQ(error_kind([&] { embed(patches, Tensor({12, 6}), Tensor({5, 6})); }), ErrorKind::ShapeMismatch);
}

TEST(Msa, MatchesLoopOracleAndRowsSumToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t heads = 1 + rng.below(3), d = heads * (1 + rng.below(4)), t = 1 + rng.below(7);
    EncoderLayer l = random_layer(d, 4, rng);
    Tensor seq = random_tensor({t, d}, rng, -2.0, 2.0);
    Tensor weights;
    Tensor out = msa(seq, l, heads, &weights);
    auto [expected, expected_weights] = naive_msa(seq, l, heads);
    expect_values(out, expected, 1e-12);
    expect_values(weights, expected_weights, 1e-12);
    ASSERT_EQ(weights.shape(), (Shape{heads, t, t}));
    for (std::size_t row = 0; row < heads * t; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < t; ++j) s += weights[row * t + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Msa, SingleTokenIsValueThenOutput) {
  Rng rng(4);
  EncoderLayer l = random_layer(4, 4, rng);
  Tensor x = random_tensor({1, 4}, rng);
  Tensor weights;
  Tensor out = msa(x, l, 2, &weights);
  for (std::size_t i = 0; i < weights.size(); ++i) EXPECT_EQ(weights[i], 1.0);
  expect_values(out, matmul(matmul(x, l.wv), l.wo).to_vector(), 1e-12);
}

TEST(Msa, ZeroValueAndIdenticalTokens) {
  Rng rng(5);
  EncoderLayer l = random_layer(6, 4, rng);
  Tensor seq = random_tensor({5, 6}, rng);
  l.wv = Tensor({6, 6});
  expect_values(msa(seq, l, 3), std::vector<double>(30, 0.0), 0.0);

  EncoderLayer l2 = random_layer(6, 4, rng);
  std::vector<double> row = random_tensor({6}, rng).to_vector(), values;
  for (int i = 0; i < 3; ++i) values.insert(values.end(), row.begin(), row.end());
  Tensor out = msa(Tensor({3, 6}, values), l2, 2);
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out[i * 6 + j], out[j], 1e-14);
  EXPECT_EQ(error_kind([&] { msa(seq, l2, 4); }), ErrorKind::ShapeMismatch);
}

TEST(Encoder, ZeroWeightsAreIdentity) {
  Rng rng(6);
  std::vector<EncoderLayer> layers;
  for (int i = 0; i < 3; ++i) {
    EncoderLayer l = random_layer(8, 16, rng);
    for (Tensor* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2, &l.ln1_shift, &l.ln2_shift})
      fill(*t, 0.0);
    fill(l.ln1_gain, 1.0);
    fill(l.ln2_gain, 1.0);
    layers.push_back(l);
  }
  Tensor seq = random_tensor({4, 8}, rng);
  Tensor out = encoder_forward(seq, layers, 2, 0.0, rng, false);
  for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_EQ(out[i], seq[i]);
}

TEST(Encoder, DepthIsComposition) {
  Rng rng(7);
  std::vector<EncoderLayer> layers{random_layer(6, 10, rng), random_layer(6, 10, rng), random_layer(6, 10, rng)};
  Tensor seq = random_tensor({5, 6}, rng);
  Tensor chained = seq;
  for (const auto& l : layers) chained = encoder_layer(chained, l, 3, 0.0, rng, false);
  EXPECT_EQ(max_abs_diff(encoder_forward(seq, layers, 3, 0.0, rng, false), chained), 0.0);
}

TEST(Encoder, SingleLayerMatchesHandComposition) {
  Rng rng(8);
  EncoderLayer l = random_layer(8, 12, rng);
  Tensor seq = random_tensor({6, 8}, rng);
  Tensor x = add(seq, msa(layer_norm(seq, l.ln1_gain, l.ln1_shift), l, 2));
  Tensor hidden = gelu(add(matmul(layer_norm(x, l.ln2_gain, l.ln2_shift), l.mlp_w1), l.mlp_b1));
  Tensor expected = add(x, add(matmul(hidden, l.mlp_w2), l.mlp_b2));
  EXPECT_LE(max_abs_diff(encoder_layer(seq, l, 2, 0.0, rng, false), expected), 1e-12);
}

TEST(Encoder, DropoutOnlyWhenTraining) {
  Rng rng(9);
  EncoderLayer l = random_layer(8, 12, rng);
  Tensor seq = random_tensor({4, 8}, rng);
  Rng a(1), b(1);
  EXPECT_EQ(max_abs_diff(encoder_layer(seq, l, 2, 0.5, a, false), encoder_layer(seq, l, 2, 0.0, b, false)), 0.0);
  EXPECT_GT(max_abs_diff(encoder_layer(seq, l, 2, 0.5, a, true), encoder_layer(seq, l, 2, 0.0, b, false)), 0.0);
}

TEST(TokensToGrid, TokenPlacement) {
  std::vector<double> values(4 * 3);
  std::iota(values.begin(), values.end(), 0.0);
  Tensor grid = tokens_to_grid(Tensor({4, 3}, values));
  ASSERT_EQ(grid.shape(), (Shape{3, 2, 2}));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(grid[(d * 2 + t / 2) * 2 + t % 2], values[t * 3 + d]);
  EXPECT_EQ(error_kind([] { tokens_to_grid(Tensor({3, 2})); }), ErrorKind::ShapeMismatch);
}

TEST(ViT, ShapeContract) {
  Rng rng(10);
  ViTConfig c;
  c.num_classes = 5;
  for (AttentionVariant v : {AttentionVariant::None, AttentionVariant::Eca, AttentionVariant::Cbam}) {
    c.attention = v;
    VisionTransformer vit(c, rng);
    Tensor logits = vit.forward(random_tensor({3, 32, 32}, rng, 0.0, 1.0), rng, false);
    ASSERT_EQ(logits.shape(), (Shape{5}));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(std::isfinite(logits[i]));
  }
  VisionTransformer vit(c, rng);
  EXPECT_EQ(error_kind([&] { vit.forward(Tensor({3, 16, 16}), rng, false); }), ErrorKind::ShapeMismatch);
  ViTConfig bad = c;
  bad.patch_size = 5;
  EXPECT_EQ(error_kind([&] { VisionTransformer(bad, rng); }), ErrorKind::InvalidConfig);
  bad = c;
  bad.num_heads = 3;
  EXPECT_EQ(error_kind([&] { VisionTransformer(bad, rng); }), ErrorKind::InvalidConfig);
  bad = c;
  bad.num_classes = 1;
  EXPECT_EQ(error_kind([&] { VisionTransformer(bad, rng); }), ErrorKind::InvalidConfig);
}

TEST(ViT, ZeroClassifierGivesBias) {
  Rng rng(11);
  for (AttentionVariant v : {AttentionVariant::None, AttentionVariant::Cbam}) {
    ViTConfig c;
    c.attention = v;
    VisionTransformer vit(c, rng);
    fill(vit.head_w2(), 0.0);
    fill_uniform(vit.head_b2(), rng);
    for (int i = 0; i < 3; ++i) {
      Tensor logits = vit.forward(random_tensor({3, 32, 32}, rng), rng, false);
      EXPECT_EQ(max_abs_diff(logits, vit.head_b2()), 0.0);
    }
  }
}

TEST(ViT, PatchPermutationInvarianceWithoutPositional) {
  Rng rng(12);
  ViTConfig c;
  VisionTransformer vit(c, rng);
  fill(vit.positional(), 0.0);
  Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  Tensor base = vit.forward(image, rng, false);
  std::vector<std::size_t> perm(c.tokens());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(std::span<std::size_t>(perm));
    Tensor logits = vit.forward(permute_patches(image, c.patch_size, perm), rng, false);
    EXPECT_LE(max_abs_diff(logits, base), 1e-9);
  }
}

TEST(ViT, PatchPermutationChangesLogitsWithPositional) {
  Rng rng(13);
  ViTConfig c;
  VisionTransformer vit(c, rng);
  Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  Tensor base = vit.forward(image, rng, false);
  std::vector<std::size_t> perm(c.tokens());
  std::iota(perm.begin(), perm.end(), 0);
  double largest = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(std::span<std::size_t>(perm));
    largest = std::max(largest, max_abs_diff(vit.forward(permute_patches(image, c.patch_size, perm), rng, false), base));
  }
  EXPECT_GT(largest, 1e-6);
}

TEST(ViT, ZeroCbamQuartersPooledFeatures) {
  Rng rng(14);
  ViTConfig c;
  c.attention = AttentionVariant::Cbam;
  VisionTransformer vit(c, rng);
  CbamModule* cbam = vit.cbam();
  ASSERT_NE(cbam, nullptr);
  fill(cbam->w0(), 0.0);
  fill(cbam->w1(), 0.0);
  fill(cbam->spatial_kernel(), 0.0);
  fill(cbam->spatial_bias(), 0.0);
  for (int i = 0; i < 3; ++i) {
    Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    Tensor f = mean(vit.encode(image, rng, false), 0);
    Tensor expected = vit.head(scale(f, 0.25));
    EXPECT_LE(max_abs_diff(vit.forward(image, rng, false), expected), 1e-9);
  }
}

TEST(ViT, CbamGridShape) {
  Rng rng(15);
  ViTConfig c;
  c.attention = AttentionVariant::Cbam;
  VisionTransformer vit(c, rng);
  Tensor tokens = vit.encode(random_tensor({3, 32, 32}, rng), rng, false);
  ASSERT_EQ(tokens.shape(), (Shape{16, 16}));
  Tensor grid = tokens_to_grid(tokens);
  EXPECT_EQ(grid.shape(), (Shape{16, 4, 4}));
  EXPECT_EQ(vit.cbam()->forward(grid).shape(), grid.shape());
}

TEST(ViT, TrainingStepReachesEveryParameter) {
  Rng rng(16);
  for (AttentionVariant v : {AttentionVariant::None, AttentionVariant::Eca, AttentionVariant::Cbam}) {
    ViTConfig c;
    c.attention = v;
    c.dropout_rate = 0.1;
    VisionTransformer vit(c, rng);
    std::vector<Tensor> logits;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      logits.push_back(vit.forward(random_tensor({3, 32, 32}, rng, 0.0, 1.0), rng, true));
      labels.push_back(i % static_cast<int>(c.num_classes));
    }
    cross_entropy(stack(logits), labels).backward();
    for (const auto& p : vit.parameters()) {
      ASSERT_TRUE(p.tensor.has_grad()) << to_string(v) << " " << p.name;
      double norm = 0.0;
      for (double g : p.tensor.grad()) norm += std::abs(g);
      EXPECT_GT(norm, 0.0) << to_string(v) << " " << p.name;
    }
  }
}

TEST(TinyCnn, ShapeContractAndErrors) {
  Rng rng(18);
  TinyCnnConfig c;
  c.num_classes = 6;
  TinyCnn cnn(c, rng);
  Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  EXPECT_EQ(cnn.forward(image, rng, false).shape(), (Shape{6}));
  EXPECT_EQ(cnn.features(image).shape(), (Shape{32}));
  TinyCnnConfig bad = c;
  bad.image_size = 4;
  EXPECT_EQ(error_kind([&] { TinyCnn(bad, rng); }), ErrorKind::InvalidConfig);
  bad = c;
  bad.widths = {};
  EXPECT_EQ(error_kind([&] { TinyCnn(bad, rng); }), ErrorKind::InvalidConfig);
  bad = c;
  bad.widths = {8, 0};
  EXPECT_EQ(error_kind([&] { TinyCnn(bad, rng); }), ErrorKind::InvalidConfig);
}

TEST(TinyCnn, ZeroClassifierGivesBias) {
  Rng rng(19);
  TinyCnnConfig c;
  c.stage_attention.assign(3, AttentionVariant::Cbam);
  TinyCnn cnn(c, rng);
  fill(cnn.classifier_weight(), 0.0);
  fill_uniform(cnn.classifier_bias(), rng);
  EXPECT_EQ(max_abs_diff(cnn.forward(random_tensor({3, 32, 32}, rng), rng, false), cnn.classifier_bias()), 0.0);
}

TEST(TinyCnn, ZeroEcaHalvesFeaturesAtEachStage) {
  Rng rng(20);
  TinyCnnConfig plain_cfg;
  TinyCnnConfig eca_cfg = plain_cfg;
  eca_cfg.stage_attention.assign(3, AttentionVariant::Eca);
  TinyCnn plain(plain_cfg, rng), with_eca(eca_cfg, rng);
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor k = with_eca.stages()[s].kernel, b = with_eca.stages()[s].bias;
    auto kd = k.mutable_data();
    auto src = plain.stages()[s].kernel.data();
    std::copy(src.begin(), src.end(), kd.begin());
    fill_uniform(b, rng, -0.1, 0.1);
    auto bsrc = b.data();
    auto bd = plain.stages()[s].bias.mutable_data();
    std::copy(bsrc.begin(), bsrc.end(), bd.begin());
    fill(with_eca.stages()[s].eca->kernel(), 0.0);
  }
  auto copy = [](Tensor dst, const Tensor& src) {
    auto d = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  };
  copy(with_eca.classifier_weight(), plain.classifier_weight());
  copy(with_eca.classifier_bias(), plain.classifier_bias());

  Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  // The none-variant pipeline with a 0.5 factor at each insertion point.
  Tensor x = image;
  for (const CnnStage& stage : plain.stages()) x = avg_pool2(scale(relu(conv2d(x, stage.kernel, stage.bias, 1, 1)), 0.5));
  Tensor expected = linear(reshape(global_pool(x, PoolMode::Avg), {32}), plain.classifier_weight(), plain.classifier_bias());
  EXPECT_LE(max_abs_diff(with_eca.forward(image, rng, false), expected), 1e-12);
  EXPECT_GT(max_abs_diff(plain.forward(image, rng, false), expected), 1e-6);
}

TEST(ParamCount, MatchesBuiltModelsForAllVariants) {
  Rng rng(21);
  for (const std::string& variant : model_variants()) {
    for (std::size_t k : {2u, 4u, 7u}) {
      nlohmann::json cfg = default_model_config(variant, 32, k);
      auto model = make_model(cfg, rng);
      EXPECT_EQ(param_count(cfg), count_scalars(model->parameters())) << variant;
      EXPECT_EQ(model->num_classes(), k);
    }
  }
}

TEST(ParamCount, RandomViTConfigs) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    ViTConfig c;
    c.patch_size = 1 + rng.below(4);
    c.image_size = c.patch_size * (1 + rng.below(4));
    c.num_heads = 1 + rng.below(3);
    c.embed_dim = c.num_heads * (1 + rng.below(4));
    c.depth = 1 + rng.below(3);
    c.mlp_hidden = 1 + rng.below(10);
    c.num_classes = 2 + rng.below(5);
    c.attention = static_cast<AttentionVariant>(rng.below(3));
    c.attention_settings.cbam_reduction = 1 + rng.below(8);
    EXPECT_EQ(param_count(c), count_scalars(VisionTransformer(c, rng).parameters()));
  }
}

TEST(ParamCount, AttentionIncrementsAndDepthLinearity) {
  ViTConfig base;
  ViTConfig eca = base, cbam = base;
  eca.attention = AttentionVariant::Eca;
  cbam.attention = AttentionVariant::Cbam;
  const std::size_t d = base.embed_dim;
  EXPECT_EQ(param_count(eca) - param_count(base), eca_kernel_size(static_cast<std::int64_t>(d)));
  EXPECT_EQ(param_count(cbam) - param_count(base), 2 * d * std::max<std::size_t>(1, d / 16) + 2 * 7 * 7 + 1);

  ViTConfig one = base, two = base, four = base;
  one.depth = 1;
  two.depth = 2;
  four.depth = 4;
  const std::size_t per_layer = param_count(two) - param_count(one);
  EXPECT_EQ(param_count(four) - param_count(two), 2 * per_layer);
  EXPECT_EQ(param_count(two) - (param_count(one) - per_layer), 2 * per_layer);

  TinyCnnConfig cnn;
  TinyCnnConfig cnn_eca = cnn;
  cnn_eca.stage_attention = {AttentionVariant::None, AttentionVariant::Eca, AttentionVariant::None};
  EXPECT_EQ(param_count(cnn_eca) - param_count(cnn), eca_kernel_size(16));
}

TEST(ModelConfig, RejectsUnknownVariants) {
  Rng rng(23);
  EXPECT_EQ(error_kind([&] { make_model({{"variant", "resnet"}}, rng); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(error_kind([&] { make_model({{"variant", "vit-se"}}, rng); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(error_kind([&] { make_model({{"image_size", 32}}, rng); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(error_kind([&] { make_model({{"variant", "vit"}, {"depth", "two"}}, rng); }), ErrorKind::InvalidConfig);
}

TEST(ModelConfig, JsonRoundTrip) {
  Rng rng(24);
  for (const std::string& variant : model_variants()) {
    nlohmann::json cfg = default_model_config(variant, 16, 3);
    auto model = make_model(cfg, rng);
    EXPECT_EQ(model->config_json(), cfg) << variant;
    EXPECT_EQ(cfg.at("variant"), variant);
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(25);
  for (const std::string& variant : model_variants()) {
    auto model = make_model(default_model_config(variant, 16, 3), rng);
    std::stringstream buffer;
    write_checkpoint(buffer, model_checkpoint(*model));
    auto restored = restore_model(read_checkpoint(buffer));
    EXPECT_EQ(restored->config_json(), model->config_json());
    auto a = model->parameters(), b = restored->parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].tensor.shape(), b[i].tensor.shape());
      EXPECT_EQ(std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(), a[i].tensor.size() * sizeof(double)), 0)
          << variant << " " << a[i].name;
    }
    Tensor image = random_tensor({3, 16, 16}, rng);
    EXPECT_EQ(max_abs_diff(model->forward(image, rng, false), restored->forward(image, rng, false)), 0.0);

    std::stringstream again;
    write_checkpoint(again, model_checkpoint(*restored));
    std::stringstream first;
    write_checkpoint(first, model_checkpoint(*model));
    EXPECT_EQ(again.str(), first.str());
  }
}

TEST(Checkpoint, CorruptInputsRejected) {
  Rng rng(26);
  auto model = make_model(default_model_config("vit-cbam", 16, 3), rng);
  std::stringstream buffer;
  write_checkpoint(buffer, model_checkpoint(*model));
  const std::string bytes = buffer.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_EQ(error_kind([&] { read_checkpoint(truncated); }), ErrorKind::TruncatedPayload);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  EXPECT_EQ(error_kind([&] { read_checkpoint(bad_magic); }), ErrorKind::MalformedHeader);
  EXPECT_EQ(error_kind([] { load_checkpoint("/nonexistent/dir/model.atnc"); }), ErrorKind::FileNotFound);

  Checkpoint cp = model_checkpoint(*model);
  cp.tensors.pop_back();
  EXPECT_EQ(error_kind([&] { restore_model(cp); }), ErrorKind::MalformedHeader);
}
