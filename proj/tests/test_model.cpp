// Encoder layout, forward invariants and hand-written backward pass.

#include <gtest/gtest.h>

#include <cmath>

#include "headsim/headsim.hpp"

using namespace headsim;

namespace {

EncoderConfig tiny(Variant v) {
  EncoderConfig e;
  e.image_size = 16;
  e.patch_size = 8;
  e.embed_dim = 8;
  e.depth = 1;
  e.num_heads = 2;
  e.variant = v;
  return e;
}

std::vector<Image> random_images(int n, int size, std::uint64_t seed) {
  Rng rng = make_rng(seed, "images");
  std::vector<Image> v;
  for (int i = 0; i < n; ++i) {
    Image img(size, size);
    for (auto& x : img.data) x = static_cast<float>(uniform(rng));
    v.push_back(std::move(img));
  }
  return v;
}

// Larger init than the default so the finite differences are well above noise.
Parameters<double> fd_params(const EncoderConfig& e, std::uint64_t seed) {
  Parameters<double> p = parameter_init<double>(e, seed);
  Rng rng = make_rng(seed, "perturb");
  for (auto& v : p.values) v += 0.2 * normal(rng);
  return p;
}

// A fixed random linear functional of both outputs.
double probe_loss(const Parameters<double>& p, std::span<const Image> imgs, const MatT<double>& wi,
                  const MatT<double>& wh) {
  const auto r = encode<double>(p, imgs);
  double s = r.z_id.cwiseProduct(wi).sum();
  if (r.z_head.size()) s += r.z_head.cwiseProduct(wh).sum();
  return s;
}

}  // namespace

TEST(Layout, DefaultParameterCount) {
  // Independent tally for the default dual-CLS encoder.
  const long d = 128, p = 8, tokens = 2 + 64, mlp = 512, depth = 4;
  const long patch = p * p * 3 * d + d;
  const long block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * mlp + mlp) + (mlp * d + d);
  const long total = patch + tokens * d + 2 * d + depth * block + 2 * d + 2 * (d * d + d);
  EXPECT_EQ(total, 859776);
  EXPECT_EQ(ParamLayout(EncoderConfig{}).total(), static_cast<std::size_t>(total));
}

TEST(Layout, VariantsDifferOnlyInClsAndHeadProjection) {
  const EncoderConfig base;
  EncoderConfig shared = base, split = base;
  shared.variant = Variant::shared;
  split.variant = Variant::dual_head_split;
  const long d = base.embed_dim;
  EXPECT_EQ(ParamLayout(base).total() - ParamLayout(split).total(), static_cast<std::size_t>(2 * d));
  EXPECT_EQ(ParamLayout(split).total() - ParamLayout(shared).total(), static_cast<std::size_t>(d * d + d));
}

TEST(Init, SameSeedSameParametersAndDistinctClsRows) {
  const EncoderConfig e;
  const auto a = parameter_init<float>(e, 3), b = parameter_init<float>(e, 3), c = parameter_init<float>(e, 4);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  const auto cls = a.mat("cls");
  EXPECT_GT((cls.row(0) - cls.row(1)).norm(), 0.01f);
  EXPECT_EQ(a.row("norm.g").minCoeff(), 1.0f);
  EXPECT_EQ(a.row("block0.fc1.b").cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_LE(a.mat("block0.qkv.w").cwiseAbs().maxCoeff(), 0.04f + 1e-7f);
}

TEST(Encode, OutputsAreUnitNorm) {
  for (Variant v : kAllVariants) {
    EncoderConfig e = tiny(v);
    e.embed_dim = 16;
    const auto p = parameter_init<float>(e, 1);
    const auto imgs = random_images(5, 16, 2);
    const auto r = encode<float>(p, imgs);
    for (Eigen::Index i = 0; i < 5; ++i) {
      EXPECT_NEAR(r.z_id.row(i).norm(), 1.0f, 1e-5f);
      EXPECT_NEAR(r.z_head.row(i).norm(), 1.0f, 1e-5f);
    }
    if (v == Variant::shared) EXPECT_EQ(r.z_id, r.z_head);
    else EXPECT_NE(r.z_id, r.z_head);
  }
}

TEST(Encode, DuplicatedBatchIsBitIdentical) {
  const auto p = parameter_init<float>(EncoderConfig{}, 7);
  auto imgs = random_images(6, 64, 3);
  const auto once = encode<float>(p, imgs);
  std::vector<Image> twice = imgs;
  twice.insert(twice.end(), imgs.begin(), imgs.end());
  const auto r = encode<float>(p, twice);
  EXPECT_EQ(MatT<float>(r.z_id.topRows(6)), MatT<float>(r.z_id.bottomRows(6)));
  EXPECT_EQ(MatT<float>(r.z_head.topRows(6)), MatT<float>(r.z_head.bottomRows(6)));
  EXPECT_EQ(MatT<float>(r.z_id.topRows(6)), once.z_id);
  // Position within the batch does not matter either.
  const auto single = encode<float>(p, std::span<const Image>(imgs).subspan(4, 1));
  EXPECT_EQ(MatT<float>(single.z_id), MatT<float>(once.z_id.row(4)));
}

TEST(Encode, InferenceWithoutHeadLeavesCounterAlone) {
  const auto p = parameter_init<float>(tiny(Variant::dual_cls), 1);
  const auto imgs = random_images(2, 16, 1);
  const std::size_t before = head_embedding_counter();
  const auto r = encode<float>(p, imgs, {false, false});
  EXPECT_EQ(head_embedding_counter(), before);
  EXPECT_EQ(r.z_head.size(), 0);
  encode<float>(p, imgs);
  EXPECT_EQ(head_embedding_counter(), before + 1);
}

TEST(Encode, RejectsWrongSizeOrNonFinite) {
  auto p = parameter_init<float>(tiny(Variant::dual_cls), 1);
  EXPECT_THROW(encode<float>(p, random_images(1, 24, 1)), std::invalid_argument);
  p.values[3] = std::nanf("");
  EXPECT_THROW(encode<float>(p, random_images(1, 16, 1)), std::invalid_argument);
}

TEST(Projection, NormalizesAndRoutesByHead) {
  EncoderConfig e = tiny(Variant::dual_cls);
  auto p = parameter_init<double>(e, 2);
  const RowT<double> s = RowT<double>::LinSpaced(8, -1, 1);
  const RowT<double> a = project_and_normalize(p, s, ProjectionHead::id);
  const RowT<double> b = project_and_normalize(p, s, ProjectionHead::head);
  EXPECT_NEAR(a.norm(), 1.0, 1e-12);
  EXPECT_NEAR(b.norm(), 1.0, 1e-12);
  EXPECT_GT((a - b).norm(), 1e-3);
  // Reference: explicit affine map then divide by its norm.
  RowT<double> v = s * p.mat("g_id.w") + p.row("g_id.b");
  EXPECT_LT((a - v / v.norm()).norm(), 1e-12);
  // Zero affine output stays finite.
  p.mat("g_id.w").setZero();
  p.row("g_id.b").setZero();
  EXPECT_TRUE(project_and_normalize(p, s, ProjectionHead::id).allFinite());
  EXPECT_THROW(project_and_normalize(p, RowT<double>(RowT<double>::Constant(8, std::nan(""))), ProjectionHead::id),
               std::invalid_argument);
}

TEST(Projection, SharedUsesIdentityProjectionForHead) {
  const auto p = parameter_init<double>(tiny(Variant::shared), 2);
  const RowT<double> s = RowT<double>::LinSpaced(8, -1, 1);
  EXPECT_EQ(project_and_normalize(p, s, ProjectionHead::id), project_and_normalize(p, s, ProjectionHead::head));
}

// Central differences against encode_backward for every parameter.
TEST(Backward, MatchesFiniteDifferences) {
  for (Variant v : kAllVariants) {
    const EncoderConfig e = tiny(v);
    const Parameters<double> p = fd_params(e, 5);
    const auto imgs = random_images(2, 16, 6);
    Rng rng = make_rng(7, "probe");
    MatT<double> wi(2, 8), wh(2, 8);
    for (Eigen::Index i = 0; i < wi.size(); ++i) wi.data()[i] = normal(rng), wh.data()[i] = normal(rng);

    const auto fwd = encode<double>(p, imgs, {true, true});
    Parameters<double> g(e);
    encode_backward<double>(p, fwd, wi, wh, g);

    double worst = 0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < p.size(); ++k) {
      Parameters<double> pp = p, pm = p;
      pp.values[k] += h;
      pm.values[k] -= h;
      const double fd = (probe_loss(pp, imgs, wi, wh) - probe_loss(pm, imgs, wi, wh)) / (2 * h);
      // Floor the denominator: some entries (key bias) have exactly zero gradient.
      const double rel = std::abs(fd - g.values[k]) / std::max({std::abs(fd), std::abs(g.values[k]), 1e-3});
      worst = std::max(worst, rel);
    }
    EXPECT_LT(worst, 1e-5) << to_string(v);
  }
}

TEST(Backward, KeyBiasGradientIsZero) {
  // Softmax is invariant to a shift shared by all keys.
  const EncoderConfig e = tiny(Variant::dual_cls);
  const Parameters<double> p = fd_params(e, 8);
  const auto imgs = random_images(2, 16, 9);
  const auto fwd = encode<double>(p, imgs, {true, true});
  Parameters<double> g(e);
  encode_backward<double>(p, fwd, MatT<double>::Ones(2, 8), MatT<double>::Ones(2, 8), g);
  EXPECT_LT(g.row("block0.qkv.b").segment(8, 8).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(g.row("block0.qkv.b").segment(16, 8).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Backward, IdProjectionGradMatchesFullBackward) {
  const EncoderConfig e = tiny(Variant::dual_cls);
  const Parameters<double> p = fd_params(e, 10);
  const auto imgs = random_images(3, 16, 11);
  const auto fwd = encode<double>(p, imgs, {true, true});
  MatT<double> dz = MatT<double>::Random(3, 8);
  Parameters<double> g(e);
  encode_backward<double>(p, fwd, dz, MatT<double>(), g);
  EXPECT_LT((id_projection_grad(fwd, dz) - MatT<double>(g.mat("g_id.w"))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(g.mat("g_head.w").cwiseAbs().maxCoeff(), 0.0);
}
