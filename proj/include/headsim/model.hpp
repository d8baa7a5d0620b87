#pragma once

// Small Vision Transformer encoder with identity / head-similarity outputs.
//
// Token layout for dual_cls is [CLS_id, CLS_head, patches...]; every other
// variant prepends a single CLS token. All blocks are pre-norm. Gradients are
// hand-written so the encoder can be trained and finite-difference checked in
// either float or double.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include "headsim/core.hpp"

namespace headsim {

enum class Variant { dual_cls, shared, dual_head_split, dual_head_both };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::dual_cls: return "dual_cls";
    case Variant::shared: return "shared";
    case Variant::dual_head_split: return "dual_head_split";
    case Variant::dual_head_both: return "dual_head_both";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "dual_cls") return Variant::dual_cls;
  if (s == "shared") return Variant::shared;
  if (s == "dual_head_split") return Variant::dual_head_split;
  if (s == "dual_head_both") return Variant::dual_head_both;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

inline constexpr Variant kAllVariants[] = {Variant::shared, Variant::dual_head_split, Variant::dual_head_both,
                                           Variant::dual_cls};

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 128;
  int depth = 4;
  int num_heads = 4;
  Variant variant = Variant::dual_cls;
  double mlp_ratio = 4.0;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int num_cls() const { return variant == Variant::dual_cls ? 2 : 1; }
  int num_tokens() const { return num_cls() + num_patches(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int mlp_dim() const { return static_cast<int>(std::lround(embed_dim * mlp_ratio)); }
  int head_dim() const { return embed_dim / num_heads; }
  bool has_head_projection() const { return variant != Variant::shared; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw std::invalid_argument("EncoderConfig: patch_size must divide image_size");
    if (embed_dim <= 0 || depth < 0 || num_heads <= 0 || embed_dim % num_heads != 0)
      throw std::invalid_argument("EncoderConfig: embed_dim must be a positive multiple of num_heads");
    if (!(mlp_ratio > 0.0)) throw std::invalid_argument("EncoderConfig: mlp_ratio must be positive");
  }
};

// ---------------------------------------------------------------------------
// Parameter storage: one flat buffer with named, shaped slices.
// ---------------------------------------------------------------------------
struct TensorSlot {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  bool decay = false;  // receives weight decay
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const EncoderConfig& cfg) {
    cfg.validate();
    const int d = cfg.embed_dim, m = cfg.mlp_dim();
    add("patch.w", cfg.patch_dim(), d, true);
    add("patch.b", 1, d);
    add("pos", cfg.num_tokens(), d);
    add("cls", cfg.num_cls(), d);
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      add(p + "ln1.g", 1, d);
      add(p + "ln1.b", 1, d);
      add(p + "qkv.w", d, 3 * d, true);
      add(p + "qkv.b", 1, 3 * d);
      add(p + "proj.w", d, d, true);
      add(p + "proj.b", 1, d);
      add(p + "ln2.g", 1, d);
      add(p + "ln2.b", 1, d);
      add(p + "fc1.w", d, m, true);
      add(p + "fc1.b", 1, m);
      add(p + "fc2.w", m, d, true);
      add(p + "fc2.b", 1, d);
    }
    add("norm.g", 1, d);
    add("norm.b", 1, d);
    add("g_id.w", d, d, true);
    add("g_id.b", 1, d);
    if (cfg.has_head_projection()) {
      add("g_head.w", d, d, true);
      add("g_head.b", 1, d);
    }
  }

  const TensorSlot& operator[](const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return slots_.count(name) != 0; }
  std::size_t total() const { return total_; }
  const std::vector<std::string>& names() const { return order_; }

 private:
  void add(const std::string& name, int rows, int cols, bool decay = false) {
    slots_[name] = TensorSlot{total_, rows, cols, decay};
    order_.push_back(name);
    total_ += static_cast<std::size_t>(rows) * cols;
  }
  std::map<std::string, TensorSlot> slots_;
  std::vector<std::string> order_;
  std::size_t total_ = 0;
};

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Parameters {
  EncoderConfig config;
  ParamLayout layout;
  // Over-aligned so every Parameters instance vectorizes its segments the same
  // way; with plain new[] alignment, reductions could round differently per copy.
  std::vector<T, Eigen::aligned_allocator<T>> values;

  Parameters() = default;
  explicit Parameters(const EncoderConfig& cfg) : config(cfg), layout(cfg), values(layout.total(), T(0)) {}

  Eigen::Map<MatT<T>> mat(const std::string& name) {
    const auto& s = layout[name];
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const MatT<T>> mat(const std::string& name) const {
    const auto& s = layout[name];
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<RowT<T>> row(const std::string& name) {
    const auto& s = layout[name];
    return {values.data() + s.offset, static_cast<Eigen::Index>(s.size())};
  }
  Eigen::Map<const RowT<T>> row(const std::string& name) const {
    const auto& s = layout[name];
    return {values.data() + s.offset, static_cast<Eigen::Index>(s.size())};
  }
  std::size_t size() const { return values.size(); }

  template <typename U>
  Parameters<U> cast() const {
    Parameters<U> out(config);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
    return out;
  }
};

// Truncated normal (std 0.02, cut at 2 std) weights, zero biases, unit norm gains.
template <typename T>
Parameters<T> parameter_init(const EncoderConfig& cfg, std::uint64_t seed) {
  Parameters<T> p(cfg);
  for (const auto& name : p.layout.names()) {
    const auto& slot = p.layout[name];
    const bool is_gain = name.ends_with(".g");
    const bool is_bias = name.ends_with(".b");
    // Each tensor draws from its own stream, so CLS rows never share a sub-seed.
    Rng rng = make_rng(seed, "param-init", fnv1a(name));
    for (std::size_t i = 0; i < slot.size(); ++i) {
      T v = T(0);
      if (is_gain) {
        v = T(1);
      } else if (!is_bias) {
        double x;
        do x = normal(rng); while (std::abs(x) > 2.0);
        v = static_cast<T>(0.02 * x);
      }
      p.values[slot.offset + i] = v;
    }
  }
  return p;
}

// Copies every tensor whose name and shape match (external backbone adapter).
template <typename T>
std::size_t import_matching(Parameters<T>& dst, const Parameters<T>& src) {
  std::size_t copied = 0;
  for (const auto& name : dst.layout.names()) {
    if (!src.layout.contains(name)) continue;
    const auto& a = dst.layout[name];
    const auto& b = src.layout[name];
    if (a.rows != b.rows || a.cols != b.cols) continue;
    std::copy_n(src.values.begin() + static_cast<std::ptrdiff_t>(b.offset), a.size(),
                dst.values.begin() + static_cast<std::ptrdiff_t>(a.offset));
    ++copied;
  }
  return copied;
}

// ---------------------------------------------------------------------------
// Layer primitives.
// ---------------------------------------------------------------------------
namespace nn {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kNormalizeEps = 1e-12;

template <typename T>
struct LayerNormCache {
  MatT<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
MatT<T> layer_norm(const MatT<T>& x, const Eigen::Map<const RowT<T>>& g, const Eigen::Map<const RowT<T>>& b,
                   LayerNormCache<T>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  MatT<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    rstd(i) = T(1) / std::sqrt(var + T(kLayerNormEps));
    xhat.row(i) = (x.row(i).array() - mu) * rstd(i);
  }
  MatT<T> y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
MatT<T> layer_norm_backward(const MatT<T>& dy, const LayerNormCache<T>& c, const Eigen::Map<const RowT<T>>& g,
                            Eigen::Map<RowT<T>> dg, Eigen::Map<RowT<T>> db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  MatT<T> dxhat = dy.array().rowwise() * g.array();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  MatT<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() * inv_d;
    const T m2 = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

// Array forms (vectorised erf/exp); these dominate the MLP cost otherwise.
template <typename T>
MatT<T> gelu(const MatT<T>& x) {
  return (T(0.5) * x.array() * (T(1) + (x.array() * T(M_SQRT1_2)).erf())).matrix();
}

template <typename T>
MatT<T> gelu_grad(const MatT<T>& x) {
  const auto a = x.array();
  return (T(0.5) * (T(1) + (a * T(M_SQRT1_2)).erf()) + a * (T(-0.5) * a.square()).exp() * T(0.3989422804014327))
      .matrix();
}

// v / max(|v|, eps)
template <typename T>
RowT<T> l2_normalize(const RowT<T>& v) {
  const T n = v.norm();
  return v / std::max(n, T(kNormalizeEps));
}

// Backward of l2_normalize given the output z and its input norm.
template <typename T>
RowT<T> l2_normalize_backward(const RowT<T>& z, T input_norm, const RowT<T>& dz) {
  if (input_norm < T(kNormalizeEps)) return dz / T(kNormalizeEps);
  return (dz - z * z.dot(dz)) / input_norm;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Encoder.
// ---------------------------------------------------------------------------
enum class ProjectionHead { id, head };

// Affine projection followed by L2 normalisation.
template <typename T>
RowT<T> project_and_normalize(const Parameters<T>& p, const RowT<T>& token_state, ProjectionHead head) {
  if (!token_state.allFinite()) throw std::invalid_argument("project_and_normalize: non-finite input");
  const std::string prefix = head == ProjectionHead::id || !p.config.has_head_projection() ? "g_id" : "g_head";
  RowT<T> v = token_state * p.mat(prefix + ".w") + p.row(prefix + ".b");
  return nn::l2_normalize<T>(v);
}

template <typename T>
struct BlockCache {
  nn::LayerNormCache<T> ln1, ln2;
  MatT<T> a;          // ln1 output
  MatT<T> qkv;
  std::vector<MatT<T>> probs;  // per (sample, head), n x n
  MatT<T> att;        // concatenated head outputs
  MatT<T> b;          // ln2 output
  MatT<T> pre;        // fc1 pre-activation
  MatT<T> act;        // gelu output
};

template <typename T>
struct SampleCache {
  MatT<T> patches;
  std::vector<BlockCache<T>> blocks;
  nn::LayerNormCache<T> final_ln;
  MatT<T> cls_state;   // post final norm, num_cls x d
  RowT<T> v_id, v_head;
  T n_id = T(0), n_head = T(0);
};

template <typename T>
struct EncodeResult {
  MatT<T> z_id;    // batch x d
  MatT<T> z_head;  // batch x d (empty when not requested)
  std::vector<SampleCache<T>> caches;
};

// Counts forward passes that produced z_head, so callers can assert an
// inference path never touched it.
inline std::size_t& head_embedding_counter() {
  static thread_local std::size_t counter = 0;
  return counter;
}

struct EncodeOptions {
  bool keep_cache = false;
  bool compute_head = true;
};

namespace detail {

template <typename T>
MatT<T> patchify(const Image& img, int patch) {
  const int g = img.width / patch;
  MatT<T> out(g * g, patch * patch * 3);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const int r = gy * g + gx;
      int col = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < 3; ++c)
            out(r, col++) = static_cast<T>((img.at(gx * patch + px, gy * patch + py, c) - 0.5f) * 2.0f);
    }
  return out;
}

// x may stack several samples of `seq` tokens each; attention never crosses samples.
template <typename T>
MatT<T> block_forward(const Parameters<T>& p, const std::string& pre, const EncoderConfig& cfg, const MatT<T>& x,
                      Eigen::Index seq, BlockCache<T>* cache) {
  const int d = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const Eigen::Index n = x.rows();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  nn::LayerNormCache<T> ln1, ln2;
  MatT<T> a = nn::layer_norm<T>(x, p.row(pre + "ln1.g"), p.row(pre + "ln1.b"), cache ? &ln1 : nullptr);
  MatT<T> qkv = (a * p.mat(pre + "qkv.w")).rowwise() + p.row(pre + "qkv.b");
  MatT<T> att(n, d);
  std::vector<MatT<T>> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(n / seq) * H);
  for (Eigen::Index s0 = 0; s0 < n; s0 += seq)
    for (int h = 0; h < H; ++h) {
      const auto Q = qkv.block(s0, h * dh, seq, dh);
      const auto K = qkv.block(s0, d + h * dh, seq, dh);
      const auto V = qkv.block(s0, 2 * d + h * dh, seq, dh);
      MatT<T> S = (Q * K.transpose()) * scale;
      for (Eigen::Index i = 0; i < seq; ++i) {
        const T mx = S.row(i).maxCoeff();
        S.row(i) = (S.row(i).array() - mx).exp();
        S.row(i) /= S.row(i).sum();
      }
      att.block(s0, h * dh, seq, dh).noalias() = S * V;
      if (cache) probs.push_back(std::move(S));
    }
  MatT<T> h1 = x + ((att * p.mat(pre + "proj.w")).rowwise() + p.row(pre + "proj.b"));
  MatT<T> b = nn::layer_norm<T>(h1, p.row(pre + "ln2.g"), p.row(pre + "ln2.b"), cache ? &ln2 : nullptr);
  MatT<T> pre_act = (b * p.mat(pre + "fc1.w")).rowwise() + p.row(pre + "fc1.b");
  MatT<T> act = nn::gelu<T>(pre_act);
  MatT<T> out = h1 + ((act * p.mat(pre + "fc2.w")).rowwise() + p.row(pre + "fc2.b"));
  if (cache) {
    cache->ln1 = std::move(ln1);
    cache->ln2 = std::move(ln2);
    cache->a = std::move(a);
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->att = std::move(att);
    cache->b = std::move(b);
    cache->pre = std::move(pre_act);
    cache->act = std::move(act);
  }
  return out;
}

template <typename T>
MatT<T> block_backward(const Parameters<T>& p, Parameters<T>& g, const std::string& pre, const EncoderConfig& cfg,
                       Eigen::Index seq, const BlockCache<T>& c, const MatT<T>& dout) {
  const int d = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const Eigen::Index n = dout.rows();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // MLP branch.
  g.mat(pre + "fc2.w").noalias() += c.act.transpose() * dout;
  g.row(pre + "fc2.b") += dout.colwise().sum();
  MatT<T> dact = dout * p.mat(pre + "fc2.w").transpose();
  MatT<T> dpre = (dact.array() * nn::gelu_grad<T>(c.pre).array()).matrix();
  g.mat(pre + "fc1.w").noalias() += c.b.transpose() * dpre;
  g.row(pre + "fc1.b") += dpre.colwise().sum();
  MatT<T> db = dpre * p.mat(pre + "fc1.w").transpose();
  MatT<T> dh1 = dout + nn::layer_norm_backward<T>(db, c.ln2, p.row(pre + "ln2.g"), g.row(pre + "ln2.g"),
                                                  g.row(pre + "ln2.b"));

  // Attention branch.
  g.mat(pre + "proj.w").noalias() += c.att.transpose() * dh1;
  g.row(pre + "proj.b") += dh1.colwise().sum();
  MatT<T> datt = dh1 * p.mat(pre + "proj.w").transpose();
  MatT<T> dqkv(n, 3 * d);
  std::size_t k = 0;
  for (Eigen::Index s0 = 0; s0 < n; s0 += seq)
    for (int h = 0; h < H; ++h, ++k) {
      const auto Q = c.qkv.block(s0, h * dh, seq, dh);
      const auto K = c.qkv.block(s0, d + h * dh, seq, dh);
      const auto V = c.qkv.block(s0, 2 * d + h * dh, seq, dh);
      const MatT<T>& P = c.probs[k];
      const auto dO = datt.block(s0, h * dh, seq, dh);
      MatT<T> dP = dO * V.transpose();
      dqkv.block(s0, 2 * d + h * dh, seq, dh).noalias() = P.transpose() * dO;
      Eigen::Matrix<T, Eigen::Dynamic, 1> rs = (dP.array() * P.array()).rowwise().sum();
      MatT<T> dS = (P.array() * (dP.array().colwise() - rs.array())) * scale;
      dqkv.block(s0, h * dh, seq, dh).noalias() = dS * K;
      dqkv.block(s0, d + h * dh, seq, dh).noalias() = dS.transpose() * Q;
    }
  g.mat(pre + "qkv.w").noalias() += c.a.transpose() * dqkv;
  g.row(pre + "qkv.b") += dqkv.colwise().sum();
  MatT<T> da = dqkv * p.mat(pre + "qkv.w").transpose();
  return dh1 + nn::layer_norm_backward<T>(da, c.ln1, p.row(pre + "ln1.g"), g.row(pre + "ln1.g"), g.row(pre + "ln1.b"));
}

inline std::string block_prefix(int l) { return "block" + std::to_string(l) + "."; }

}  // namespace detail

template <typename T>
void check_finite(const Parameters<T>& p) {
  for (const T& v : p.values)
    if (!std::isfinite(static_cast<double>(v))) throw std::invalid_argument("encode: non-finite parameters");
}

// Forward pass over a batch of images. Samples are encoded one at a time so
// each output is bit-identical whatever else shares its batch.
template <typename T>
EncodeResult<T> encode(const Parameters<T>& p, std::span<const Image> images, EncodeOptions opt = {}) {
  const EncoderConfig& cfg = p.config;
  if (p.values.size() != p.layout.total()) throw std::invalid_argument("encode: parameter buffer has wrong size");
  check_finite(p);
  const int d = cfg.embed_dim, ncls = cfg.num_cls(), n = cfg.num_tokens();
  EncodeResult<T> r;
  const auto B = static_cast<Eigen::Index>(images.size());
  r.z_id.resize(B, d);
  if (opt.compute_head) {
    r.z_head.resize(B, d);
    ++head_embedding_counter();
  }
  if (opt.keep_cache) r.caches.resize(images.size());

  for (Eigen::Index i = 0; i < B; ++i) {
    const Image& img = images[static_cast<std::size_t>(i)];
    if (img.width != cfg.image_size || img.height != cfg.image_size)
      throw std::invalid_argument("encode: image size " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height) + " does not match config " +
                                  std::to_string(cfg.image_size));
    SampleCache<T>* cache = opt.keep_cache ? &r.caches[static_cast<std::size_t>(i)] : nullptr;
    MatT<T> patches = detail::patchify<T>(img, cfg.patch_size);
    MatT<T> x(n, d);
    x.topRows(ncls) = p.mat("cls");
    x.bottomRows(cfg.num_patches()) = (patches * p.mat("patch.w")).rowwise() + p.row("patch.b");
    x += p.mat("pos");
    if (cache) {
      cache->patches = std::move(patches);
      cache->blocks.resize(cfg.depth);
    }
    for (int l = 0; l < cfg.depth; ++l)
      x = detail::block_forward<T>(p, detail::block_prefix(l), cfg, x, n, cache ? &cache->blocks[l] : nullptr);

    nn::LayerNormCache<T> fln;
    MatT<T> cls_in = x.topRows(ncls);
    MatT<T> cls = nn::layer_norm<T>(cls_in, p.row("norm.g"), p.row("norm.b"), &fln);

    RowT<T> v_id = cls.row(0) * p.mat("g_id.w") + p.row("g_id.b");
    const T n_id = v_id.norm();
    r.z_id.row(i) = v_id / std::max(n_id, T(nn::kNormalizeEps));
    RowT<T> v_head;
    T n_head = T(0);
    if (opt.compute_head) {
      if (cfg.variant == Variant::shared) {
        r.z_head.row(i) = r.z_id.row(i);
      } else {
        const Eigen::Index tok = cfg.variant == Variant::dual_cls ? 1 : 0;
        v_head = cls.row(tok) * p.mat("g_head.w") + p.row("g_head.b");
        n_head = v_head.norm();
        r.z_head.row(i) = v_head / std::max(n_head, T(nn::kNormalizeEps));
      }
    }
    if (cache) {
      cache->final_ln = std::move(fln);
      cache->cls_state = std::move(cls);
      cache->v_id = std::move(v_id);
      cache->n_id = n_id;
      cache->v_head = std::move(v_head);
      cache->n_head = n_head;
    }
  }
  return r;
}

// Accumulates d(loss)/d(params) into grads given upstream gradients on the
// normalised outputs. dz_head may be empty (no head-path gradient).
template <typename T>
void encode_backward(const Parameters<T>& p, const EncodeResult<T>& fwd, const MatT<T>& dz_id,
                     const MatT<T>& dz_head, Parameters<T>& grads) {
  const EncoderConfig& cfg = p.config;
  if (fwd.caches.size() != static_cast<std::size_t>(fwd.z_id.rows()))
    throw std::logic_error("encode_backward: forward pass did not keep caches");
  const int d = cfg.embed_dim, ncls = cfg.num_cls(), n = cfg.num_tokens();
  const bool have_head = dz_head.size() != 0;
  for (Eigen::Index i = 0; i < fwd.z_id.rows(); ++i) {
    const SampleCache<T>& c = fwd.caches[static_cast<std::size_t>(i)];
    MatT<T> dcls = MatT<T>::Zero(ncls, d);

    RowT<T> g_id = dz_id.row(i);
    if (have_head && cfg.variant == Variant::shared) g_id += dz_head.row(i);
    const RowT<T> z_id = fwd.z_id.row(i);
    RowT<T> dv_id = nn::l2_normalize_backward<T>(z_id, c.n_id, g_id);
    grads.mat("g_id.w").noalias() += c.cls_state.row(0).transpose() * dv_id;
    grads.row("g_id.b") += dv_id;
    dcls.row(0) += dv_id * p.mat("g_id.w").transpose();

    if (have_head && cfg.variant != Variant::shared) {
      const Eigen::Index tok = cfg.variant == Variant::dual_cls ? 1 : 0;
      const RowT<T> z_head = fwd.z_head.row(i);
      RowT<T> dv_head = nn::l2_normalize_backward<T>(z_head, c.n_head, RowT<T>(dz_head.row(i)));
      grads.mat("g_head.w").noalias() += c.cls_state.row(tok).transpose() * dv_head;
      grads.row("g_head.b") += dv_head;
      dcls.row(tok) += dv_head * p.mat("g_head.w").transpose();
    }

    MatT<T> dx = MatT<T>::Zero(n, d);
    dx.topRows(ncls) = nn::layer_norm_backward<T>(dcls, c.final_ln, p.row("norm.g"), grads.row("norm.g"),
                                                  grads.row("norm.b"));
    for (int l = cfg.depth - 1; l >= 0; --l)
      dx = detail::block_backward<T>(p, grads, detail::block_prefix(l), cfg, n, c.blocks[l], dx);

    grads.mat("pos") += dx;
    grads.mat("cls") += dx.topRows(ncls);
    const auto dpatch = dx.bottomRows(cfg.num_patches());
    grads.mat("patch.w").noalias() += c.patches.transpose() * dpatch;
    grads.row("patch.b") += dpatch.colwise().sum();
  }
}

// Gradient of g_id weights produced by an upstream z_id gradient alone; used
// to audit loss routing without touching the accumulated gradients.
template <typename T>
MatT<T> id_projection_grad(const EncodeResult<T>& fwd, const MatT<T>& dz_id) {
  const Eigen::Index d = fwd.z_id.cols();
  MatT<T> gw = MatT<T>::Zero(d, d);
  for (Eigen::Index i = 0; i < fwd.z_id.rows(); ++i) {
    const auto& c = fwd.caches[static_cast<std::size_t>(i)];
    const RowT<T> z = fwd.z_id.row(i);
    RowT<T> dv = nn::l2_normalize_backward<T>(z, c.n_id, RowT<T>(dz_id.row(i)));
    gw.noalias() += c.cls_state.row(0).transpose() * dv;
  }
  return gw;
}

}  // namespace headsim
