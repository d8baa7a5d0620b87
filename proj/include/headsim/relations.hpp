#pragma once

// Pairwise R1/R2/R3 relations, in-batch quadruplet mining and mixed batches.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headsim/core.hpp"
#include "headsim/synthworld.hpp"

namespace headsim {

struct SampleMeta {
  std::string sample_id;
  int identity = 0;    // identity or cluster id
  int appearance = 0;  // appearance state or segment id, unique across videos
  std::string video_id;
  bool face_visible = false;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

// R1: same identity and state. R2: same identity, different state. R3: different identity.
enum class Relation { R1 = 1, R2 = 2, R3 = 3 };

inline std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::R1: return "R1";
    case Relation::R2: return "R2";
    case Relation::R3: return "R3";
  }
  return "?";
}

inline Relation relation_from_labels(int identity_a, int appearance_a, int identity_b, int appearance_b) {
  if (identity_a != identity_b) return Relation::R3;
  return appearance_a == appearance_b ? Relation::R1 : Relation::R2;
}

inline Relation relation_of(const SampleMeta& a, const SampleMeta& b) {
  if (a.sample_id == b.sample_id)
    throw std::invalid_argument("relation_of: identical sample ids '" + a.sample_id + "'");
  return relation_from_labels(a.identity, a.appearance, b.identity, b.appearance);
}

inline SampleMeta meta_from_manifest(const ManifestRecord& m) {
  return {m.sample_id, m.identity, m.appearance, m.video_id, m.face_visible};
}

struct Quadruplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t semi_negative = 0;
  std::size_t negative = 0;
  bool semi_negative_present = false;

  friend bool operator==(const Quadruplet&, const Quadruplet&) = default;
};

enum class MiningMode { hard, random };

inline MiningMode parse_mining_mode(std::string_view s) {
  if (s == "hard") return MiningMode::hard;
  if (s == "random") return MiningMode::random;
  throw std::invalid_argument("unknown mining mode '" + std::string(s) + "'");
}

struct MiningOptions {
  MiningMode mode = MiningMode::hard;
  // Hard mode picks the least similar R1 partner; otherwise a uniformly random one.
  bool hardest_positive = true;
};

// One quadruplet per anchor with at least one R1 and one R3 partner in the batch.
// `similarity` is the batch's pairwise cosine matrix. Random choices need `rng`.
inline std::vector<Quadruplet> build_quadruplets(std::span<const SampleMeta> metas,
                                                 const Eigen::MatrixXd& similarity, MiningOptions opt = {},
                                                 Rng* rng = nullptr) {
  const std::size_t n = metas.size();
  if (similarity.rows() != static_cast<Eigen::Index>(n) || similarity.cols() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument("build_quadruplets: similarity matrix does not match batch size");
  const bool need_rng = opt.mode == MiningMode::random || !opt.hardest_positive;
  if (need_rng && rng == nullptr) throw std::invalid_argument("build_quadruplets: random selection needs an rng");

  std::vector<Quadruplet> out;
  std::vector<std::size_t> r1, r2, r3;
  for (std::size_t a = 0; a < n; ++a) {
    r1.clear();
    r2.clear();
    r3.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      switch (relation_from_labels(metas[a].identity, metas[a].appearance, metas[j].identity, metas[j].appearance)) {
        case Relation::R1: r1.push_back(j); break;
        case Relation::R2: r2.push_back(j); break;
        case Relation::R3: r3.push_back(j); break;
      }
    }
    if (r1.empty() || r3.empty()) continue;

    // Candidates are in ascending index order, so strict comparisons keep the lowest index on ties.
    auto argmax = [&](const std::vector<std::size_t>& c) {
      std::size_t best = c.front();
      for (std::size_t j : c)
        if (similarity(a, j) > similarity(a, best)) best = j;
      return best;
    };
    auto argmin = [&](const std::vector<std::size_t>& c) {
      std::size_t best = c.front();
      for (std::size_t j : c)
        if (similarity(a, j) < similarity(a, best)) best = j;
      return best;
    };
    auto pick = [&](const std::vector<std::size_t>& c) { return c[uniform_index(*rng, c.size())]; };

    Quadruplet q;
    q.anchor = a;
    if (opt.mode == MiningMode::hard) {
      q.positive = opt.hardest_positive ? argmin(r1) : pick(r1);
      q.negative = argmax(r3);
      if (!r2.empty()) {
        q.semi_negative = argmax(r2);
        q.semi_negative_present = true;
      }
    } else {
      q.positive = pick(r1);
      q.negative = pick(r3);
      if (!r2.empty()) {
        q.semi_negative = pick(r2);
        q.semi_negative_present = true;
      }
    }
    out.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mixed batches.
// ---------------------------------------------------------------------------
struct BatchEntry {
  Pool pool = Pool::head;
  std::size_t index = 0;  // index into the pool it came from
  bool distill = false;   // receives a teacher target

  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

struct BatchDescriptor {
  std::vector<BatchEntry> entries;  // head entries first, then face entries
  std::size_t head_count = 0;

  std::uint64_t hash() const {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (const auto& e : entries)
      h = mix64(h ^ (e.index * 4 + (e.pool == Pool::face ? 2 : 0) + (e.distill ? 1 : 0)));
    return h;
  }
};

inline std::size_t head_count_for(int batch_size, double head_fraction) {
  return static_cast<std::size_t>(std::ceil(head_fraction * batch_size - 1e-9));
}

// Head entries are drawn identity by identity: up to two states, up to two
// samples each, so a batch holds R1, R2 and R3 pairs whenever the pool allows.
inline BatchDescriptor mixed_batch(std::span<const SampleMeta> head_pool, std::span<const SampleMeta> face_pool,
                                   int batch_size, double head_fraction, Rng& rng) {
  if (batch_size <= 0) throw std::invalid_argument("mixed_batch: batch_size must be positive");
  if (!(head_fraction > 0.0 && head_fraction <= 1.0))
    throw std::invalid_argument("mixed_batch: head_fraction must lie in (0,1]");
  const std::size_t n_head = std::min<std::size_t>(head_count_for(batch_size, head_fraction), batch_size);
  const std::size_t n_face = static_cast<std::size_t>(batch_size) - n_head;
  if (n_head > 0 && head_pool.empty()) throw std::invalid_argument("mixed_batch: empty head pool");
  if (n_face > 0 && face_pool.empty()) throw std::invalid_argument("mixed_batch: empty face pool");
  if (n_head > head_pool.size()) throw std::invalid_argument("mixed_batch: head pool smaller than head share");
  if (n_face > face_pool.size()) throw std::invalid_argument("mixed_batch: face pool smaller than face share");

  std::map<int, std::map<int, std::vector<std::size_t>>> by_identity;
  for (std::size_t i = 0; i < head_pool.size(); ++i)
    by_identity[head_pool[i].identity][head_pool[i].appearance].push_back(i);
  std::vector<int> identities;
  for (const auto& [u, _] : by_identity) identities.push_back(u);

  BatchDescriptor batch;
  std::vector<std::uint8_t> used(head_pool.size(), 0);
  std::vector<int> order = identities;
  shuffle(order, rng);
  std::size_t cursor = 0;
  bool progress_in_pass = false;
  while (batch.entries.size() < n_head) {
    if (cursor == order.size()) {
      if (!progress_in_pass) break;
      progress_in_pass = false;
      shuffle(order, rng);
      cursor = 0;
    }
    const int u = order[cursor++];
    std::size_t budget = n_head - batch.entries.size();
    if (batch.entries.empty() && n_head >= 4) budget = std::min<std::size_t>(budget, std::min<std::size_t>(4, n_head - 1));
    budget = std::min<std::size_t>(budget, 4);

    std::vector<std::vector<std::size_t>> states;
    for (const auto& [a, members] : by_identity[u]) {
      std::vector<std::size_t> avail;
      for (std::size_t i : members)
        if (!used[i]) avail.push_back(i);
      if (!avail.empty()) states.push_back(std::move(avail));
    }
    shuffle(states, rng);
    // Prefer states that can still supply an R1 pair.
    std::stable_sort(states.begin(), states.end(),
                     [](const auto& x, const auto& y) { return (x.size() >= 2) > (y.size() >= 2); });
    std::vector<std::size_t> picked;
    for (std::size_t s = 0; s < states.size() && s < 2; ++s) {
      shuffle(states[s], rng);
      for (std::size_t k = 0; k < states[s].size() && k < 2; ++k) picked.push_back(states[s][k]);
    }
    for (std::size_t k = 0; k < picked.size() && k < budget; ++k) {
      used[picked[k]] = 1;
      batch.entries.push_back({Pool::head, picked[k], head_pool[picked[k]].face_visible});
      progress_in_pass = true;
    }
  }
  batch.head_count = batch.entries.size();
  for (std::size_t i : sample_without_replacement(face_pool.size(), n_face, rng))
    batch.entries.push_back({Pool::face, i, true});
  // Keep face entries in random order as well.
  std::vector<BatchEntry> faces(batch.entries.begin() + static_cast<std::ptrdiff_t>(batch.head_count),
                                batch.entries.end());
  shuffle(faces, rng);
  std::copy(faces.begin(), faces.end(), batch.entries.begin() + static_cast<std::ptrdiff_t>(batch.head_count));
  return batch;
}

}  // namespace headsim
