// Relations, quadruplet mining and mixed batch composition.

#include <gtest/gtest.h>

#include <set>

#include "headsim/headsim.hpp"

using namespace headsim;

namespace {

SampleMeta meta(const std::string& id, int u, int a) { return {id, u, a, "", false}; }

std::vector<SampleMeta> grid_pool(int U, int A, int n) {
  std::vector<SampleMeta> v;
  for (int u = 0; u < U; ++u)
    for (int a = 0; a < A; ++a)
      for (int j = 0; j < n; ++j) v.push_back({head_sample_id(u, a, j), u, a, "", j % 2 == 0});
  return v;
}

Eigen::MatrixXd random_similarity(std::size_t n, Rng& rng) {
  Eigen::MatrixXd s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) s(i, j) = s(j, i) = i == j ? 1.0 : uniform(rng, -1.0, 1.0);
  return s;
}

}  // namespace

TEST(Relation, FromLabels) {
  EXPECT_EQ(relation_of(meta("a", 1, 2), meta("b", 1, 2)), Relation::R1);
  EXPECT_EQ(relation_of(meta("a", 1, 2), meta("b", 1, 3)), Relation::R2);
  EXPECT_EQ(relation_of(meta("a", 1, 2), meta("b", 4, 2)), Relation::R3);
  EXPECT_THROW(relation_of(meta("a", 1, 2), meta("a", 1, 2)), std::invalid_argument);
}

TEST(Relation, SegmentAndClusterSemantics) {
  // identity = cluster id, appearance = segment ordinal.
  const SampleMeta seg0a{"s0f0", 7, 0, "video0", true};
  const SampleMeta seg0b{"s0f1", 7, 0, "video0", false};
  const SampleMeta seg1{"s1f0", 7, 1, "video1", true};
  const SampleMeta other{"s2f0", 8, 2, "video0", true};
  EXPECT_EQ(relation_of(seg0a, seg0b), Relation::R1);
  EXPECT_EQ(relation_of(seg0a, seg1), Relation::R2);
  EXPECT_EQ(relation_of(seg0a, other), Relation::R3);
}

TEST(Mining, NoSemiNegativeWhenEveryStateIsUnique) {
  // Two samples per (u,a) so R1 exists, one state per identity so no R2 does.
  std::vector<SampleMeta> m = {meta("a", 0, 0), meta("b", 0, 0), meta("c", 1, 0), meta("d", 1, 0),
                               meta("e", 2, 0), meta("f", 2, 0)};
  Rng rng = make_rng(1, "m");
  const auto q = build_quadruplets(m, random_similarity(m.size(), rng));
  ASSERT_EQ(q.size(), m.size());
  for (const auto& x : q) EXPECT_FALSE(x.semi_negative_present);
}

TEST(Mining, NoAnchorWithoutPositive) {
  std::vector<SampleMeta> m = {meta("a", 0, 0), meta("b", 0, 1), meta("c", 1, 0)};
  EXPECT_TRUE(build_quadruplets(m, Eigen::MatrixXd::Identity(3, 3)).empty());
}

TEST(Mining, UniqueCandidatesAreChosenRegardlessOfSimilarity) {
  std::vector<SampleMeta> m = {meta("a", 0, 0), meta("b", 0, 0), meta("c", 0, 1), meta("d", 1, 0)};
  Rng rng = make_rng(2, "m");
  for (int trial = 0; trial < 20; ++trial) {
    for (MiningMode mode : {MiningMode::hard, MiningMode::random}) {
      const auto q = build_quadruplets(m, random_similarity(4, rng), {mode, true}, &rng);
      ASSERT_FALSE(q.empty());
      EXPECT_EQ(q[0].anchor, 0u);
      EXPECT_EQ(q[0].positive, 1u);
      EXPECT_TRUE(q[0].semi_negative_present);
      EXPECT_EQ(q[0].semi_negative, 2u);
      EXPECT_EQ(q[0].negative, 3u);
    }
  }
}

// Brute-force oracle: enumerate candidates per relation and pick extremes.
TEST(Mining, HardModeMatchesExhaustiveSelection) {
  Rng rng = make_rng(3, "m");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SampleMeta> m;
    for (int i = 0; i < 16; ++i)
      m.push_back(meta("s" + std::to_string(i), static_cast<int>(uniform_index(rng, 3)),
                       static_cast<int>(uniform_index(rng, 2))));
    const Eigen::MatrixXd s = random_similarity(16, rng);
    const auto quads = build_quadruplets(m, s);
    std::size_t k = 0;
    for (std::size_t a = 0; a < 16; ++a) {
      double best_pos = 2, best_semi = -2, best_neg = -2;
      long pos = -1, semi = -1, neg = -1;
      for (std::size_t j = 0; j < 16; ++j) {
        if (j == a) continue;
        const bool same_u = m[a].identity == m[j].identity, same_a = m[a].appearance == m[j].appearance;
        if (same_u && same_a && s(a, j) < best_pos) best_pos = s(a, j), pos = static_cast<long>(j);
        if (same_u && !same_a && s(a, j) > best_semi) best_semi = s(a, j), semi = static_cast<long>(j);
        if (!same_u && s(a, j) > best_neg) best_neg = s(a, j), neg = static_cast<long>(j);
      }
      if (pos < 0 || neg < 0) continue;
      ASSERT_LT(k, quads.size());
      const auto& q = quads[k++];
      EXPECT_EQ(q.anchor, a);
      EXPECT_EQ(static_cast<long>(q.positive), pos);
      EXPECT_EQ(static_cast<long>(q.negative), neg);
      EXPECT_EQ(q.semi_negative_present, semi >= 0);
      if (semi >= 0) { EXPECT_EQ(static_cast<long>(q.semi_negative), semi); }
    }
    EXPECT_EQ(k, quads.size());
  }
}

TEST(Mining, EveryQuadrupletSatisfiesItsRelations) {
  Rng rng = make_rng(4, "m");
  const auto pool = grid_pool(4, 3, 3);
  for (MiningMode mode : {MiningMode::hard, MiningMode::random})
    for (int trial = 0; trial < 20; ++trial) {
      const auto q = build_quadruplets(pool, random_similarity(pool.size(), rng), {mode, trial % 2 == 0}, &rng);
      for (const auto& x : q) {
        EXPECT_EQ(relation_of(pool[x.anchor], pool[x.positive]), Relation::R1);
        EXPECT_EQ(relation_of(pool[x.anchor], pool[x.negative]), Relation::R3);
        if (x.semi_negative_present) { EXPECT_EQ(relation_of(pool[x.anchor], pool[x.semi_negative]), Relation::R2); }
      }
    }
}

TEST(Mining, HardSelectionIsScaleInvariant) {
  Rng rng = make_rng(5, "m");
  const auto pool = grid_pool(3, 2, 3);
  const Eigen::MatrixXd s = random_similarity(pool.size(), rng);
  EXPECT_EQ(build_quadruplets(pool, s), build_quadruplets(pool, 3.7 * s));
}

TEST(Mining, RandomModeNeedsRng) {
  const auto pool = grid_pool(2, 2, 2);
  EXPECT_THROW(build_quadruplets(pool, Eigen::MatrixXd::Zero(8, 8), {MiningMode::random, true}), std::invalid_argument);
  EXPECT_THROW(build_quadruplets(pool, Eigen::MatrixXd::Zero(7, 7)), std::invalid_argument);
}

TEST(MixedBatch, CountsAndFlags) {
  const auto head = grid_pool(4, 2, 4);
  const auto face = grid_pool(10, 1, 2);
  Rng rng = make_rng(6, "b");
  const auto b = mixed_batch(head, face, 8, 0.5, rng);
  ASSERT_EQ(b.entries.size(), 8u);
  EXPECT_EQ(b.head_count, 4u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(b.entries[i].pool, i < 4 ? Pool::head : Pool::face);
    if (i >= 4) { EXPECT_TRUE(b.entries[i].distill); }
    if (i < 4) { EXPECT_EQ(b.entries[i].distill, head[b.entries[i].index].face_visible); }
  }
  const auto all_head = mixed_batch(head, face, 8, 1.0, rng);
  EXPECT_EQ(all_head.head_count, 8u);
  for (const auto& e : all_head.entries) EXPECT_EQ(e.pool, Pool::head);
}

TEST(MixedBatch, HeadEntriesAreDistinct) {
  const auto head = grid_pool(5, 3, 4);
  const auto face = grid_pool(40, 1, 2);
  Rng rng = make_rng(7, "b");
  for (int t = 0; t < 50; ++t) {
    const auto b = mixed_batch(head, face, 64, 0.5, rng);
    std::set<std::size_t> h, f;
    for (std::size_t i = 0; i < b.entries.size(); ++i)
      (i < b.head_count ? h : f).insert(b.entries[i].index);
    EXPECT_EQ(h.size(), b.head_count);
    EXPECT_EQ(f.size(), b.entries.size() - b.head_count);
  }
}

// Brute-force relation scan over many sampled batches.
TEST(MixedBatch, HeadSubBatchCoversAllRelations) {
  const auto head = grid_pool(4, 2, 5);
  const auto face = grid_pool(20, 1, 1);
  Rng rng = make_rng(8, "b");
  for (int t = 0; t < 1000; ++t) {
    const auto b = mixed_batch(head, face, 16, 0.5, rng);
    bool r[4] = {false, false, false, false};
    for (std::size_t i = 0; i < b.head_count; ++i)
      for (std::size_t j = i + 1; j < b.head_count; ++j)
        r[static_cast<int>(relation_of(head[b.entries[i].index], head[b.entries[j].index]))] = true;
    ASSERT_TRUE(r[1] && r[2] && r[3]) << "batch " << t;
  }
}

TEST(MixedBatch, RejectsBadArguments) {
  const auto head = grid_pool(2, 2, 2);
  const auto face = grid_pool(2, 1, 1);
  Rng rng = make_rng(9, "b");
  EXPECT_THROW(mixed_batch(head, face, 0, 0.5, rng), std::invalid_argument);
  EXPECT_THROW(mixed_batch(head, face, 8, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(mixed_batch(head, face, 8, 0.5, rng), std::invalid_argument);  // face pool too small
}

TEST(MixedBatch, HashDependsOnContent) {
  const auto head = grid_pool(4, 2, 4);
  const auto face = grid_pool(10, 1, 2);
  Rng a = make_rng(10, "b"), b = make_rng(10, "b"), c = make_rng(11, "b");
  const auto x = mixed_batch(head, face, 8, 0.5, a);
  EXPECT_EQ(x.hash(), mixed_batch(head, face, 8, 0.5, b).hash());
  EXPECT_NE(x.hash(), mixed_batch(head, face, 8, 0.5, c).hash());
}
