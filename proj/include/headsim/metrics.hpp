#pragma once

// Verification and ordering metrics: ROC/AUC, VR@FAR, evaluation-pair
// protocols, hierarchical ordering satisfaction and top-k retrieval.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "headsim/core.hpp"
#include "headsim/model.hpp"
#include "headsim/relations.hpp"

namespace headsim {

struct ScoredPair {
  double score = 0;
  bool label = false;
  Relation relation = Relation::R3;
};

inline constexpr double kReportedFars[] = {1e-2, 1e-3, 1e-4};

struct RocResult {
  std::vector<double> thresholds;  // thresholds[k] accepts scores >= thresholds[k]; +inf first
  std::vector<double> far;
  std::vector<double> tpr;
  double auc = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::map<double, std::optional<double>> vr_at_far;
};

inline std::optional<double> vr_at_far(const RocResult& r, double target_far);

// Threshold sweep over distinct scores, highest first, ties grouped.
inline RocResult roc(std::span<const ScoredPair> pairs) {
  RocResult r;
  for (const auto& p : pairs) {
    if (!(p.score >= -1.0 - 1e-6 && p.score <= 1.0 + 1e-6))
      throw std::invalid_argument("roc: score outside [-1,1]");
    (p.label ? r.positives : r.negatives)++;
  }
  if (r.positives == 0 || r.negatives == 0) throw std::invalid_argument("roc: need positive and negative pairs");

  std::vector<const ScoredPair*> order;
  order.reserve(pairs.size());
  for (const auto& p : pairs) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->score > b->score; });

  const double P = static_cast<double>(r.positives), N = static_cast<double>(r.negatives);
  r.thresholds.push_back(std::numeric_limits<double>::infinity());
  r.far.push_back(0.0);
  r.tpr.push_back(0.0);
  std::size_t tp = 0, fp = 0;
  // Twice the trapezoid area in count units: sum dFP * (TP_prev + TP_cur).
  double area2 = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = order[i]->score;
    std::size_t gtp = 0, gfp = 0;
    for (; i < order.size() && order[i]->score == s; ++i) (order[i]->label ? gtp : gfp)++;
    area2 += static_cast<double>(gfp) * static_cast<double>(2 * tp + gtp);
    tp += gtp;
    fp += gfp;
    r.thresholds.push_back(s);
    r.far.push_back(static_cast<double>(fp) / N);
    r.tpr.push_back(static_cast<double>(tp) / P);
  }
  r.auc = area2 / (2.0 * P * N);
  for (double f : kReportedFars) r.vr_at_far[f] = vr_at_far(r, f);
  return r;
}

// TPR at the most permissive threshold with FAR <= target; nullopt when the
// negative count cannot resolve the target.
inline std::optional<double> vr_at_far(const RocResult& r, double target_far) {
  if (!(target_far > 0.0 && target_far < 1.0)) throw std::invalid_argument("vr_at_far: target must lie in (0,1)");
  if (static_cast<double>(r.negatives) * target_far < 1.0 - 1e-12) return std::nullopt;
  double best = 0.0;
  for (std::size_t k = 0; k < r.far.size(); ++k)
    if (r.far[k] <= target_far + 1e-15) best = std::max(best, r.tpr[k]);
  return best;
}

inline std::optional<double> vr_at_far(std::span<const ScoredPair> pairs, double target_far) {
  return vr_at_far(roc(pairs), target_far);
}

// ---------------------------------------------------------------------------
// Evaluation pairs.
// ---------------------------------------------------------------------------
enum class Protocol { identity, appearance };

inline std::string_view to_string(Protocol p) { return p == Protocol::identity ? "identity" : "appearance"; }

inline Protocol parse_protocol(std::string_view s) {
  if (s == "identity") return Protocol::identity;
  if (s == "appearance") return Protocol::appearance;
  throw std::invalid_argument("unknown protocol '" + std::string(s) + "'");
}

// identity: positives R1+R2, negatives R3. appearance: positives R1, negatives R2+R3.
inline bool protocol_label(Protocol p, Relation r) {
  if (p == Protocol::identity) return r != Relation::R3;
  return r == Relation::R1;
}

struct PairLimits {
  std::size_t max_positives = 20000;
  std::size_t max_negatives = 200000;
};

inline double cosine_rows(const MatT<float>& e, std::size_t i, std::size_t j) {
  return static_cast<double>(e.row(static_cast<Eigen::Index>(i)).dot(e.row(static_cast<Eigen::Index>(j))));
}

// All unordered pairs, labelled by the protocol, each class subsampled to its cap.
inline std::vector<ScoredPair> build_eval_pairs(std::span<const SampleMeta> metas, const MatT<float>& embeddings,
                                                Protocol protocol, PairLimits limits, Rng& rng) {
  const std::size_t n = metas.size();
  if (embeddings.rows() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument("build_eval_pairs: embeddings do not match metadata");
  auto rel = [&](std::size_t i, std::size_t j) {
    return relation_from_labels(metas[i].identity, metas[i].appearance, metas[j].identity, metas[j].appearance);
  };
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) (protocol_label(protocol, rel(i, j)) ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("build_eval_pairs: protocol '" + std::string(to_string(protocol)) +
                                "' yields no positive or no negative pairs");

  const auto pos_keep = sample_without_replacement(n_pos, std::min(n_pos, limits.max_positives), rng);
  const auto neg_keep = sample_without_replacement(n_neg, std::min(n_neg, limits.max_negatives), rng);
  std::vector<ScoredPair> out;
  out.reserve(pos_keep.size() + neg_keep.size());
  std::size_t pos_rank = 0, neg_rank = 0, pi = 0, ni = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const Relation r = rel(i, j);
      const bool label = protocol_label(protocol, r);
      const bool keep = label ? (pi < pos_keep.size() && pos_keep[pi] == pos_rank)
                              : (ni < neg_keep.size() && neg_keep[ni] == neg_rank);
      if (keep) {
        out.push_back({cosine_rows(embeddings, i, j), label, r});
        (label ? pi : ni)++;
      }
      (label ? pos_rank : neg_rank)++;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchical ordering.
// ---------------------------------------------------------------------------
struct OrderingTriple {
  double s_r1 = 0, s_r2 = 0, s_r3 = 0;
};

// Fraction of triples with s_r1 > s_r2 > s_r3 (strict).
inline double ordering_satisfaction(std::span<const OrderingTriple> triples) {
  if (triples.empty()) throw std::invalid_argument("ordering_satisfaction: empty input");
  std::size_t ok = 0;
  for (const auto& t : triples)
    if (t.s_r1 > t.s_r2 && t.s_r2 > t.s_r3) ++ok;
  return static_cast<double>(ok) / static_cast<double>(triples.size());
}

// Draws `count` (anchor, R1, R2, R3) score triples with uniformly random partners.
inline std::vector<OrderingTriple> sample_ordering_triples(std::span<const SampleMeta> metas,
                                                           const MatT<float>& embeddings, std::size_t count,
                                                           Rng& rng) {
  const std::size_t n = metas.size();
  std::vector<std::vector<std::size_t>> r1(n), r2(n), r3(n);
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      switch (relation_from_labels(metas[i].identity, metas[i].appearance, metas[j].identity, metas[j].appearance)) {
        case Relation::R1: r1[i].push_back(j); break;
        case Relation::R2: r2[i].push_back(j); break;
        case Relation::R3: r3[i].push_back(j); break;
      }
    }
    if (!r1[i].empty() && !r2[i].empty() && !r3[i].empty()) anchors.push_back(i);
  }
  if (anchors.empty()) throw std::invalid_argument("sample_ordering_triples: no anchor has R1, R2 and R3 partners");
  std::vector<OrderingTriple> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t a = anchors[uniform_index(rng, anchors.size())];
    const std::size_t p = r1[a][uniform_index(rng, r1[a].size())];
    const std::size_t s = r2[a][uniform_index(rng, r2[a].size())];
    const std::size_t q = r3[a][uniform_index(rng, r3[a].size())];
    out.push_back({cosine_rows(embeddings, a, p), cosine_rows(embeddings, a, s), cosine_rows(embeddings, a, q)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval.
// ---------------------------------------------------------------------------
struct RetrievalResult {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

// Descending cosine, ties by lowest gallery index. self_index[q], when given and
// non-negative, names the gallery row that is the query itself and is skipped.
inline std::vector<RetrievalResult> retrieval_topk(const MatT<float>& queries, const MatT<float>& gallery,
                                                   std::size_t k, std::span<const long> self_index = {}) {
  if (gallery.rows() == 0) throw std::invalid_argument("retrieval_topk: empty gallery");
  if (queries.cols() != gallery.cols()) throw std::invalid_argument("retrieval_topk: dimension mismatch");
  if (!self_index.empty() && self_index.size() != static_cast<std::size_t>(queries.rows()))
    throw std::invalid_argument("retrieval_topk: self_index must cover every query");
  std::vector<RetrievalResult> out(static_cast<std::size_t>(queries.rows()));
  const MatT<float> sims = queries * gallery.transpose();
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const long self = self_index.empty() ? -1 : self_index[static_cast<std::size_t>(q)];
    std::vector<std::size_t> cand;
    for (Eigen::Index g = 0; g < gallery.rows(); ++g)
      if (g != self) cand.push_back(static_cast<std::size_t>(g));
    if (k > cand.size()) throw std::invalid_argument("retrieval_topk: k exceeds gallery size");
    auto better = [&](std::size_t a, std::size_t b) {
      const float sa = sims(q, static_cast<Eigen::Index>(a)), sb = sims(q, static_cast<Eigen::Index>(b));
      return sa != sb ? sa > sb : a < b;
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
    auto& r = out[static_cast<std::size_t>(q)];
    for (std::size_t i = 0; i < k; ++i) {
      r.indices.push_back(cand[i]);
      r.scores.push_back(sims(q, static_cast<Eigen::Index>(cand[i])));
    }
  }
  return out;
}

}  // namespace headsim
