// Alignment and similarity losses, loss routing and batch objective gradients.

#include <gtest/gtest.h>

#include <cmath>

#include "headsim/headsim.hpp"

using namespace headsim;

namespace {

// Long-double reference, evaluated without the stable rewrite.
double softplus_ref(long double x) { return static_cast<double>(std::log1p(std::exp(x))); }

std::vector<float> unit(std::vector<float> v) {
  double n = 0;
  for (float x : v) n += static_cast<double>(x) * x;
  for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

MatT<double> random_unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  MatT<double> z(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z(i, k) = normal(rng);
    z.row(i).normalize();
  }
  return z;
}

struct Problem {
  MatT<double> z_id, z_head;
  std::vector<Quadruplet> quads;
  std::vector<std::optional<RowT<double>>> targets;
  std::vector<std::uint8_t> distill;
};

Problem random_problem(std::uint64_t seed) {
  Rng rng = make_rng(seed, "objective");
  const Eigen::Index n = 12, d = 6;
  Problem p;
  p.z_id = random_unit_rows(n, d, rng);
  p.z_head = random_unit_rows(n, d, rng);
  std::vector<SampleMeta> metas;
  for (int i = 0; i < n; ++i) metas.push_back({"s" + std::to_string(i), i / 4, (i / 2) % 2, "", i % 3 == 0});
  Eigen::MatrixXd s = p.z_id.cast<double>() * p.z_id.cast<double>().transpose();
  p.quads = build_quadruplets(metas, s);
  const MatT<double> t = random_unit_rows(n, d, rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.distill.push_back(i % 3 == 0);
    if (i % 3 == 0) p.targets.emplace_back(RowT<double>(t.row(i)));
    else p.targets.emplace_back(std::nullopt);
  }
  return p;
}

ObjectiveResult<double> objective(const Problem& p, Variant v, const LossWeights& w) {
  return batch_objective<double>(p.z_id, p.z_head, p.quads, p.targets, p.distill, v, Margins{}, w);
}

}  // namespace

TEST(Softplus, ReferenceValues) {
  EXPECT_NEAR(softplus_stable(0.0), std::log(2.0), 1e-9);
  EXPECT_NEAR(softplus_stable(50.0), 50.0, 1e-9);
  EXPECT_NEAR(softplus_stable(-0.9), softplus_ref(-0.9L), 1e-12);
  EXPECT_NEAR(softplus_stable(-0.9), 0.341153, 1e-6);
  EXPECT_TRUE(std::isfinite(softplus_stable(1000.0)));
  EXPECT_EQ(softplus_stable(1000.0), 1000.0);
  EXPECT_GE(softplus_stable(-1000.0), 0.0);
}

TEST(Align, Identities) {
  const std::vector<float> a = {1, 0, 0}, b = {0, 1, 0}, c = {-1, 0, 0};
  EXPECT_NEAR(align_loss(a, a), 0.0, 1e-9);
  EXPECT_NEAR(align_loss(a, b), 1.0, 1e-9);
  EXPECT_NEAR(align_loss(a, c), 2.0, 1e-9);
  const auto u = unit({0.3f, -1.2f, 0.7f}), v = unit({1.0f, 0.5f, -0.25f});
  double dot = 0;
  for (int k = 0; k < 3; ++k) dot += static_cast<double>(u[k]) * v[k];
  EXPECT_NEAR(align_loss(u, v), 1.0 - dot, 1e-12);
}

TEST(Align, RejectsNonUnitOrMismatched) {
  const std::vector<float> a = {1, 0, 0}, big = {2, 0, 0}, short_ = {1, 0};
  EXPECT_THROW(align_loss(a, big), std::invalid_argument);
  EXPECT_THROW(align_loss(a, short_), std::invalid_argument);
}

TEST(SimLoss, AllZeroIsThreeLnTwo) {
  EXPECT_NEAR(sim_loss(0, 0.0, 0, Margins{0, 0, 0}), 3 * std::log(2.0), 1e-9);
  EXPECT_NEAR(sim_loss(0.4, 0.4, 0.4, Margins{0, 0, 0}), 3 * std::log(2.0), 1e-9);
}

TEST(SimLoss, MatchesScalarOracle) {
  const Margins m{0.1, 0.3, 0.2};
  const double ref = softplus_ref(-0.9L) + softplus_ref(-1.7L) + softplus_ref(-0.8L);
  EXPECT_NEAR(sim_loss(1, 0.0, -1, m), ref, 1e-6);
  EXPECT_NEAR(sim_loss(1, std::nullopt, -1, m), softplus_ref(-1.7L), 1e-6);
}

TEST(SimLoss, CollapsedEmbeddingValue) {
  // All similarities equal: the sum of softplus at each margin.
  const Margins m{0.1, 0.3, 0.2};
  EXPECT_NEAR(sim_loss(0.5, 0.5, 0.5, m), softplus_ref(0.1L) + softplus_ref(0.3L) + softplus_ref(0.2L), 1e-12);
}

TEST(SimLoss, RejectsOutOfRange) {
  EXPECT_THROW(sim_loss(1.5, 0.0, 0, Margins{}), std::invalid_argument);
  EXPECT_THROW(sim_loss(0, -3.0, 0, Margins{}), std::invalid_argument);
}

TEST(SimLoss, MonotoneInEachSimilarity) {
  const Margins m;
  EXPECT_LT(sim_loss(0.9, 0.3, 0.0, m), sim_loss(0.8, 0.3, 0.0, m));
  EXPECT_LT(sim_loss(0.9, 0.3, -0.1, m), sim_loss(0.9, 0.3, 0.0, m));
}

TEST(Routing, PerVariant) {
  EXPECT_TRUE(LossRouting::for_variant(Variant::shared).sim_on_id);
  EXPECT_FALSE(LossRouting::for_variant(Variant::shared).sim_on_head);
  EXPECT_FALSE(LossRouting::for_variant(Variant::dual_head_split).sim_on_id);
  EXPECT_TRUE(LossRouting::for_variant(Variant::dual_head_split).sim_on_head);
  for (Variant v : {Variant::dual_head_both, Variant::dual_cls}) {
    EXPECT_TRUE(LossRouting::for_variant(v).sim_on_id);
    EXPECT_TRUE(LossRouting::for_variant(v).sim_on_head);
  }
}

TEST(BatchObjective, LossEqualsSumOfScalarTerms) {
  const Problem p = random_problem(1);
  ASSERT_FALSE(p.quads.empty());
  const auto r = objective(p, Variant::dual_cls, {1.0, 1.0});
  double sid = 0, shd = 0, al = 0;
  int na = 0;
  for (const auto& q : p.quads) {
    auto term = [&](const MatT<double>& z) {
      const auto a = z.row(q.anchor);
      std::optional<double> s1;
      if (q.semi_negative_present) s1 = a.dot(z.row(q.semi_negative));
      return sim_loss(a.dot(z.row(q.positive)), s1, a.dot(z.row(q.negative)), Margins{});
    };
    sid += term(p.z_id);
    shd += term(p.z_head);
  }
  for (std::size_t i = 0; i < p.distill.size(); ++i)
    if (p.distill[i]) {
      al += 1.0 - p.targets[i]->dot(p.z_id.row(static_cast<Eigen::Index>(i)));
      ++na;
    }
  const double nq = static_cast<double>(p.quads.size());
  EXPECT_NEAR(r.loss.sim_id, sid / nq, 1e-12);
  EXPECT_NEAR(r.loss.sim_head, shd / nq, 1e-12);
  EXPECT_NEAR(r.loss.align, al / na, 1e-12);
  EXPECT_NEAR(r.loss.total, r.loss.align + r.loss.sim_id + r.loss.sim_head, 1e-12);
  EXPECT_EQ(r.loss.num_align_pairs, na);
}

TEST(BatchObjective, SplitRoutingLeavesIdentityPathAlignOnly) {
  const Problem p = random_problem(2);
  const auto r = objective(p, Variant::dual_head_split, {1.0, 1.0});
  EXPECT_EQ(r.dz_id_sim.norm(), 0.0);
  EXPECT_EQ(r.loss.sim_id, 0.0);
  for (std::size_t i = 0; i < p.distill.size(); ++i)
    if (!p.distill[i]) { EXPECT_EQ(r.dz_id.row(static_cast<Eigen::Index>(i)).norm(), 0.0); }
}

TEST(BatchObjective, SharedVariantHasNoHeadGradient) {
  const Problem p = random_problem(3);
  const auto r = batch_objective<double>(p.z_id, MatT<double>(), p.quads, p.targets, p.distill, Variant::shared,
                                         Margins{}, LossWeights{});
  EXPECT_EQ(r.dz_head.size(), 0);
  EXPECT_EQ(r.loss.sim_head, 0.0);
  EXPECT_GT(r.loss.sim_id, 0.0);
}

// Central differences on the embeddings, per variant.
TEST(BatchObjective, GradientsMatchFiniteDifferences) {
  for (Variant v : kAllVariants) {
    const Problem base = random_problem(4);
    const LossWeights w{0.7, 1.3};
    const auto r = objective(base, v, w);
    const double h = 1e-6;
    for (int which = 0; which < 2; ++which) {
      if (which == 1 && v == Variant::shared) continue;
      const MatT<double>& analytic = which == 0 ? r.dz_id : r.dz_head;
      for (Eigen::Index i = 0; i < base.z_id.rows(); ++i)
        for (Eigen::Index k = 0; k < base.z_id.cols(); ++k) {
          Problem pp = base, pm = base;
          (which == 0 ? pp.z_id : pp.z_head)(i, k) += h;
          (which == 0 ? pm.z_id : pm.z_head)(i, k) -= h;
          const double fd = (objective(pp, v, w).loss.total - objective(pm, v, w).loss.total) / (2 * h);
          EXPECT_NEAR(analytic(i, k), fd, 1e-7) << to_string(v) << " which " << which << " at " << i << "," << k;
        }
    }
  }
}

TEST(BatchObjective, RejectsMissingTeacherTarget) {
  Problem p = random_problem(5);
  p.targets[0].reset();
  EXPECT_THROW(objective(p, Variant::dual_cls, {}), std::invalid_argument);
}

TEST(BatchObjective, RejectsOutOfRangeQuadruplet) {
  Problem p = random_problem(6);
  p.quads.push_back({0, 1, 0, 99, false});
  EXPECT_THROW(objective(p, Variant::dual_cls, {}), std::out_of_range);
}
