#pragma once

// Alignment (distillation) loss, hierarchical Softplus similarity loss and the
// per-variant batch objective with gradients on the embeddings.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "headsim/model.hpp"
#include "headsim/relations.hpp"

namespace headsim {

struct Margins {
  double m1 = 0.1;
  double m2 = 0.3;
  double m3 = 0.2;

  void validate() const {
    if (!(m1 > 0 && m2 > 0 && m3 > 0)) throw std::invalid_argument("margins must be strictly positive");
  }
};

struct LossWeights {
  double align = 1.0;
  double sim = 1.0;
};

struct LossBreakdown {
  double align = 0;
  double sim_id = 0;
  double sim_head = 0;
  double total = 0;
  int num_quadruplets = 0;
  int num_align_pairs = 0;
};

// log(1 + exp(x)) without overflow.
template <typename T>
T softplus_stable(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// 1 - cos(z_t, z_id) for unit inputs.
inline double align_loss(std::span<const float> z_t, std::span<const float> z_id) {
  if (z_t.size() != z_id.size()) throw std::invalid_argument("align_loss: dimension mismatch");
  double dot = 0, nt = 0, ni = 0;
  for (std::size_t k = 0; k < z_t.size(); ++k) {
    dot += static_cast<double>(z_t[k]) * z_id[k];
    nt += static_cast<double>(z_t[k]) * z_t[k];
    ni += static_cast<double>(z_id[k]) * z_id[k];
  }
  if (std::abs(std::sqrt(nt) - 1.0) > 1e-4 || std::abs(std::sqrt(ni) - 1.0) > 1e-4)
    throw std::invalid_argument("align_loss: inputs must be unit-norm");
  return 1.0 - dot;
}

inline double sim_loss(double s_ap, std::optional<double> s_an1, double s_an2, const Margins& m) {
  auto check = [](double s) {
    if (!(s >= -1.0 - 1e-6 && s <= 1.0 + 1e-6)) throw std::invalid_argument("sim_loss: similarity outside [-1,1]");
  };
  check(s_ap);
  check(s_an2);
  if (!s_an1) return softplus_stable(m.m2 + s_an2 - s_ap);
  check(*s_an1);
  return softplus_stable(m.m1 + *s_an1 - s_ap) + softplus_stable(m.m2 + s_an2 - s_ap) +
         softplus_stable(m.m3 + s_an2 - *s_an1);
}

// Which embeddings each loss touches, per variant. For shared, z_head is z_id
// and the similarity loss is counted once on z_id.
struct LossRouting {
  bool sim_on_id = true;
  bool sim_on_head = true;

  static LossRouting for_variant(Variant v) {
    switch (v) {
      case Variant::shared: return {true, false};
      case Variant::dual_head_split: return {false, true};
      case Variant::dual_head_both:
      case Variant::dual_cls: return {true, true};
    }
    return {};
  }
};

template <typename T>
struct ObjectiveResult {
  LossBreakdown loss;
  MatT<T> dz_id;      // total gradient on z_id (weighted)
  MatT<T> dz_head;    // total gradient on z_head (weighted)
  MatT<T> dz_id_sim;  // similarity-path share of dz_id
};

namespace detail {

// Adds the mean similarity loss over `quads` computed on rows of z; returns the mean.
template <typename T>
T accumulate_sim(const MatT<T>& z, std::span<const Quadruplet> quads, const Margins& m, T scale, MatT<T>& dz) {
  if (quads.empty()) return T(0);
  T total = T(0);
  const T inv = T(1) / static_cast<T>(quads.size());
  for (const auto& q : quads) {
    const auto za = z.row(q.anchor), zp = z.row(q.positive), zn2 = z.row(q.negative);
    const T s_ap = za.dot(zp);
    const T s_an2 = za.dot(zn2);
    T d_ap, d_an2, d_an1 = T(0);
    if (q.semi_negative_present) {
      const auto zn1 = z.row(q.semi_negative);
      const T s_an1 = za.dot(zn1);
      const T x1 = T(m.m1) + s_an1 - s_ap, x2 = T(m.m2) + s_an2 - s_ap, x3 = T(m.m3) + s_an2 - s_an1;
      total += softplus_stable(x1) + softplus_stable(x2) + softplus_stable(x3);
      const T g1 = sigmoid(x1), g2 = sigmoid(x2), g3 = sigmoid(x3);
      d_ap = -g1 - g2;
      d_an1 = g1 - g3;
      d_an2 = g2 + g3;
      const T k1 = scale * inv * d_an1;
      dz.row(q.anchor) += k1 * zn1;
      dz.row(q.semi_negative) += k1 * za;
    } else {
      const T x2 = T(m.m2) + s_an2 - s_ap;
      total += softplus_stable(x2);
      const T g2 = sigmoid(x2);
      d_ap = -g2;
      d_an2 = g2;
    }
    const T kp = scale * inv * d_ap, kn = scale * inv * d_an2;
    dz.row(q.anchor) += kp * zp + kn * zn2;
    dz.row(q.positive) += kp * za;
    dz.row(q.negative) += kn * za;
  }
  return total * inv;
}

}  // namespace detail

// teacher_targets[i] must be set for every i with distill[i] != 0.
template <typename T>
ObjectiveResult<T> batch_objective(const MatT<T>& z_id, const MatT<T>& z_head, std::span<const Quadruplet> quads,
                                   std::span<const std::optional<RowT<T>>> teacher_targets,
                                   std::span<const std::uint8_t> distill, Variant variant, const Margins& margins,
                                   const LossWeights& weights) {
  const Eigen::Index n = z_id.rows(), d = z_id.cols();
  const bool has_head = z_head.size() != 0;
  if (has_head && (z_head.rows() != n || z_head.cols() != d))
    throw std::invalid_argument("batch_objective: z_head shape mismatch");
  if (distill.size() != static_cast<std::size_t>(n) || teacher_targets.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("batch_objective: distillation inputs must cover the batch");
  for (const auto& q : quads) {
    const auto bad = [n](std::size_t i) { return i >= static_cast<std::size_t>(n); };
    if (bad(q.anchor) || bad(q.positive) || bad(q.negative) || (q.semi_negative_present && bad(q.semi_negative)))
      throw std::out_of_range("batch_objective: quadruplet index out of range");
  }
  const LossRouting route = LossRouting::for_variant(variant);
  if (route.sim_on_head && !has_head && !quads.empty())
    throw std::invalid_argument("batch_objective: variant needs z_head");

  ObjectiveResult<T> r;
  r.dz_id = MatT<T>::Zero(n, d);
  r.dz_head = MatT<T>::Zero(has_head ? n : 0, has_head ? d : 0);
  r.dz_id_sim = MatT<T>::Zero(n, d);

  // Alignment on z_id.
  int n_align = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!distill[static_cast<std::size_t>(i)]) continue;
    if (!teacher_targets[static_cast<std::size_t>(i)])
      throw std::invalid_argument("batch_objective: missing teacher target for distillation sample " +
                                  std::to_string(i));
    if (teacher_targets[static_cast<std::size_t>(i)]->size() != d)
      throw std::invalid_argument("batch_objective: teacher target dimension mismatch");
    ++n_align;
  }
  T align = T(0);
  if (n_align > 0) {
    const T inv = T(1) / static_cast<T>(n_align);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!distill[static_cast<std::size_t>(i)]) continue;
      const RowT<T>& t = *teacher_targets[static_cast<std::size_t>(i)];
      align += (T(1) - t.dot(z_id.row(i))) * inv;
      r.dz_id.row(i) -= T(weights.align) * inv * t;
    }
  }

  T sim_id = T(0), sim_head = T(0);
  if (route.sim_on_id) sim_id = detail::accumulate_sim<T>(z_id, quads, margins, T(weights.sim), r.dz_id_sim);
  if (route.sim_on_head && has_head)
    sim_head = detail::accumulate_sim<T>(z_head, quads, margins, T(weights.sim), r.dz_head);
  r.dz_id += r.dz_id_sim;

  r.loss.align = static_cast<double>(align);
  r.loss.sim_id = static_cast<double>(sim_id);
  r.loss.sim_head = static_cast<double>(sim_head);
  r.loss.total = weights.align * r.loss.align + weights.sim * (r.loss.sim_id + r.loss.sim_head);
  r.loss.num_quadruplets = static_cast<int>(quads.size());
  r.loss.num_align_pairs = n_align;
  return r;
}

}  // namespace headsim
