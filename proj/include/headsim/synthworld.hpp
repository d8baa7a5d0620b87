#pragma once

// Procedural head-world: images controlled by identity, appearance state and
// nuisance factors, plus the frozen oracle teacher used as distillation target.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "headsim/core.hpp"

namespace headsim {

struct FactorSpec {
  int num_identities = 40;       // U
  int states_per_identity = 4;   // A
  int samples_per_state = 20;
  int image_size = 64;
  int nuisance_dims = 4;         // 0..4 active nuisance groups
  double face_visible_fraction = 0.6;
  std::uint64_t seed = 0;
  // Distillation-only face pool: extra identities rendered face-visible with one state.
  int face_identities = 0;
  int face_samples_per_identity = 4;
  int teacher_dim = 128;

  std::size_t head_sample_count() const {
    return static_cast<std::size_t>(num_identities) * states_per_identity * samples_per_state;
  }
  int total_identities() const { return num_identities + face_identities; }

  void validate() const {
    if (num_identities <= 0) throw std::invalid_argument("FactorSpec: num_identities must be positive");
    if (states_per_identity <= 0)
      throw std::invalid_argument("FactorSpec: states_per_identity must be positive");
    if (samples_per_state <= 0)
      throw std::invalid_argument("FactorSpec: samples_per_state must be positive");
    if (image_size < 16) throw std::invalid_argument("FactorSpec: image_size must be >= 16");
    if (nuisance_dims < 0) throw std::invalid_argument("FactorSpec: nuisance_dims must be >= 0");
    if (!(face_visible_fraction >= 0.0 && face_visible_fraction <= 1.0))
      throw std::invalid_argument("FactorSpec: face_visible_fraction must lie in [0,1]");
    if (face_identities < 0 || face_samples_per_identity <= 0)
      throw std::invalid_argument("FactorSpec: invalid face pool size");
    if (teacher_dim <= 0) throw std::invalid_argument("FactorSpec: teacher_dim must be positive");
  }
};

enum class Pool { head, face };

struct SynthSample {
  std::string sample_id;
  Image image;
  int identity = 0;
  int appearance = 0;
  std::uint64_t nuisance_seed = 0;
  Mask head_mask;
  bool face_visible = false;
  std::optional<Box> face_box;
  Pool pool = Pool::head;
};

// Number of continuous identity traits rendered into every head.
inline constexpr int kIdentityTraits = 14;
using IdentityTraits = std::array<double, kIdentityTraits>;

struct AppearanceStyle {
  double hair_hue = 0, hair_sat = 0, hair_val = 0;
  double hair_length = 0;  // [-1,1]
  int hair_style = 0;      // 0 short, 1 long, 2 bun, 3 fringe
  int accessory = 0;       // 0 none, 1 headband, 2 earrings, 3 hat
  double accessory_hue = 0;
};

struct Nuisance {
  double gain = 1.0;
  double shift_x = 0, shift_y = 0;
  double pose_dx = 0;
  double light_slope = 0;
  double noise_sigma = 0;
  bool textured_background = false;
  std::array<float, 3> background{0.5f, 0.5f, 0.5f};
  std::uint64_t texture_seed = 0;
};

inline IdentityTraits identity_traits(std::uint64_t world_seed, int identity) {
  Rng rng = make_rng(world_seed, "identity-traits", static_cast<std::uint64_t>(identity));
  IdentityTraits t{};
  for (double& v : t) v = uniform(rng, -1.0, 1.0);
  return t;
}

inline AppearanceStyle appearance_style(std::uint64_t world_seed, int identity, int state,
                                        int num_states) {
  Rng base = make_rng(world_seed, "identity-style", static_cast<std::uint64_t>(identity));
  const double hue0 = uniform(base, 0.0, 1.0);
  const int style0 = static_cast<int>(uniform_index(base, 4));
  const int acc0 = static_cast<int>(uniform_index(base, 4));
  const double sat0 = uniform(base, 0.0, 1.0);

  Rng rng = make_rng(world_seed, "state-style", static_cast<std::uint64_t>(identity),
                     static_cast<std::uint64_t>(state));
  AppearanceStyle s;
  // States of one identity are spread around the hue circle so they stay distinct.
  const double spread = 1.0 / std::max(num_states, 1);
  s.hair_hue = hue0 + state * spread + uniform(rng, -0.08, 0.08) * spread;
  s.hair_hue -= std::floor(s.hair_hue);
  s.hair_sat = 0.45 + 0.45 * std::fmod(sat0 + 0.618 * state, 1.0);
  s.hair_val = uniform(rng, 0.3, 0.85);
  s.hair_length = uniform(rng, -1.0, 1.0);
  s.hair_style = (style0 + state) % 4;
  s.accessory = (acc0 + state) % 4;
  s.accessory_hue = s.hair_hue + 0.5 + uniform(rng, -0.1, 0.1);
  return s;
}

inline Nuisance draw_nuisance(std::uint64_t nuisance_seed, int image_size, int nuisance_dims) {
  Rng rng(nuisance_seed);
  Nuisance n;
  const double scale = image_size / 64.0;
  // Draw everything unconditionally so enabling a group never reshuffles the others.
  const double gain = uniform(rng, 0.85, 1.15);
  const double sx = uniform(rng, -1.5, 1.5) * scale;
  const double sy = uniform(rng, -1.5, 1.5) * scale;
  const double pose = uniform(rng, -1.0, 1.0);
  const double bg_h = uniform(rng, 0.0, 1.0), bg_s = uniform(rng, 0.0, 0.5),
               bg_v = uniform(rng, 0.25, 0.9);
  const std::uint64_t tex = rng();
  const double slope = uniform(rng, -0.08, 0.08);
  if (nuisance_dims >= 1) n.gain = gain;
  if (nuisance_dims >= 2) {
    n.shift_x = sx;
    n.shift_y = sy;
    n.pose_dx = pose;
  }
  if (nuisance_dims >= 3) {
    n.textured_background = true;
    n.background = hsv_to_rgb(bg_h, bg_s, bg_v);
    n.texture_seed = tex;
  }
  if (nuisance_dims >= 4) {
    n.light_slope = slope;
    n.noise_sigma = 0.01;
  }
  return n;
}

// Smooth seeded RGB texture in [0,1]: two octaves of bilinear value noise.
inline Image value_noise(int width, int height, std::uint64_t seed) {
  Image out(width, height);
  const int cells[2] = {4, 12};
  const double amp[2] = {0.7, 0.3};
  for (int octave = 0; octave < 2; ++octave) {
    const int n = cells[octave] + 1;
    Rng rng = make_rng(seed, "value-noise", static_cast<std::uint64_t>(octave));
    std::vector<float> lattice(static_cast<std::size_t>(n) * n * 3);
    for (float& v : lattice) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    for (int y = 0; y < height; ++y) {
      const double fy = (y + 0.5) / height * cells[octave];
      const int iy = std::min(static_cast<int>(fy), cells[octave] - 1);
      const double ty = fy - iy;
      for (int x = 0; x < width; ++x) {
        const double fx = (x + 0.5) / width * cells[octave];
        const int ix = std::min(static_cast<int>(fx), cells[octave] - 1);
        const double tx = fx - ix;
        for (int c = 0; c < 3; ++c) {
          auto L = [&](int a, int b) { return lattice[(static_cast<std::size_t>(b) * n + a) * 3 + c]; };
          const double top = L(ix, iy) * (1 - tx) + L(ix + 1, iy) * tx;
          const double bot = L(ix, iy + 1) * (1 - tx) + L(ix + 1, iy + 1) * tx;
          out.at(x, y, c) += static_cast<float>(amp[octave] * (top * (1 - ty) + bot * ty));
        }
      }
    }
  }
  return out;
}

// Background texture: a base colour with low-contrast value noise on top, so
// the background varies without overpowering hair and skin colours.
inline constexpr double kTextureContrast = 0.25;

inline Image background_texture(int width, int height, const std::array<float, 3>& base, std::uint64_t seed) {
  Image tex = value_noise(width, height, seed);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        tex.at(x, y, c) = static_cast<float>((1.0 - kTextureContrast) * base[c] + kTextureContrast * tex.at(x, y, c));
  return tex;
}

struct RenderedHead {
  Image image;
  Mask mask;
  std::optional<Box> face_box;
};

namespace detail {

inline double sq(double v) { return v * v; }

struct Painter {
  Image& img;
  Mask& mask;
  void paint(int x, int y, const std::array<float, 3>& rgb, bool foreground = true) {
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
    if (foreground) mask.set(x, y, true);
  }
};

inline std::array<float, 3> scale_rgb(const std::array<float, 3>& c, double k) {
  return {static_cast<float>(c[0] * k), static_cast<float>(c[1] * k), static_cast<float>(c[2] * k)};
}

}  // namespace detail

// Renders one head. Pixel centers are sampled at (x+0.5, y+0.5).
inline RenderedHead render_head(int size, const IdentityTraits& t, const AppearanceStyle& style,
                                const Nuisance& nz, bool face_visible) {
  using detail::sq;
  const double S = size;
  RenderedHead out{Image(size, size), Mask(size, size), std::nullopt};
  detail::Painter painter{out.image, out.mask};

  const double cx = S * 0.5 + nz.shift_x;
  const double cy = S * 0.54 + nz.shift_y;
  const double rx = S * (0.21 + 0.05 * t[3]);
  const double ry = S * (0.26 + 0.05 * t[4]);
  const double jaw = 0.14 + 0.14 * t[13];
  const double ear = S * (0.05 + 0.025 * t[11]);

  const auto skin = hsv_to_rgb(0.02 + 0.06 * (t[0] + 1), 0.2 + 0.25 * (t[1] + 1), 0.5 + 0.22 * (t[2] + 1));
  const auto skin_dark = detail::scale_rgb(skin, 0.82);
  const auto hair = hsv_to_rgb(style.hair_hue, style.hair_sat, style.hair_val);
  const auto brow_col = hsv_to_rgb(0.06 + 0.05 * t[12], 0.6, 0.15 + 0.12 * (t[12] + 1));
  const auto iris = hsv_to_rgb(0.55 + 0.3 * t[7], 0.75, 0.5);
  const auto mouth_col = hsv_to_rgb(0.96 + 0.05 * t[9], 0.5 + 0.25 * t[9], 0.55 + 0.2 * t[9]);
  const auto acc_col = hsv_to_rgb(style.accessory_hue, 0.9, 0.95);
  const std::array<float, 3> gold{0.95f, 0.8f, 0.2f};
  const std::array<float, 3> white{0.96f, 0.96f, 0.96f};

  const double pose = nz.pose_dx * 0.08 * rx;
  const double eye_y = cy - 0.08 * ry;
  const double eye_dx = rx * (0.42 + 0.16 * t[5]);
  const double eye_r = S * (0.046 + 0.018 * t[6]);
  const double brow_h = S * (0.014 + 0.01 * (t[12] + 1));
  const double nose_len = ry * (0.24 + 0.14 * t[10]);
  const double mouth_y = cy + 0.5 * ry;
  const double mouth_w = rx * (0.34 + 0.18 * t[8]);
  const double mouth_h = S * 0.035;
  const double hair_h = ry * (0.38 + 0.12 * style.hair_length);

  // Background.
  Image bg;
  if (nz.textured_background) bg = background_texture(size, size, nz.background, nz.texture_seed);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = nz.textured_background ? bg.at(x, y, c) : nz.background[c];

  auto head_rx = [&](double py) {
    const double tt = std::max(0.0, (py - cy) / ry);
    return rx * (1.0 - jaw * tt * tt);
  };
  auto in_head = [&](double px, double py) {
    return sq((px - cx) / head_rx(py)) + sq((py - cy) / ry) <= 1.0;
  };
  auto in_cap = [&](double px, double py) {
    // Hair cap: slightly enlarged ellipse above the hairline.
    if (!(sq((px - cx) / (rx * 1.08)) + sq((py - cy) / (ry * 1.08)) <= 1.0)) return false;
    double line = cy - ry + hair_h;
    if (style.hair_style == 3) line += 0.35 * ry * (px - cx) / rx;
    return py <= line;
  };

  for (int y = 0; y < size; ++y) {
    const double py = y + 0.5;
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double dx = px - cx;
      // Neck.
      if (std::abs(dx) <= 0.42 * rx && py >= cy + 0.6 * ry) painter.paint(x, y, skin_dark);
      // Long hair behind the head.
      if (style.hair_style == 1 && std::abs(dx) <= 1.2 * rx && py >= cy - 0.5 * ry && py <= cy + 0.95 * ry)
        painter.paint(x, y, hair);
      // Ears.
      for (double side : {-1.0, 1.0}) {
        if (sq((px - (cx + side * rx)) / ear) + sq((py - (cy + 0.05 * ry)) / (1.5 * ear)) <= 1.0)
          painter.paint(x, y, skin);
      }
      if (in_head(px, py)) {
        if (face_visible)
          painter.paint(x, y, skin);
        else
          painter.paint(x, y, py > cy + 0.55 * ry ? skin_dark : hair);
      }
      if (face_visible && in_head(px, py)) {
        const double fx = px - pose;
        for (double side : {-1.0, 1.0}) {
          const double ex = cx + side * eye_dx;
          const double d2 = sq(fx - ex) + sq(py - eye_y);
          if (d2 <= sq(eye_r)) painter.paint(x, y, d2 <= sq(0.55 * eye_r) ? iris : white);
          if (std::abs(fx - ex) <= 1.1 * eye_r && py >= eye_y - 1.7 * eye_r - brow_h &&
              py <= eye_y - 1.7 * eye_r)
            painter.paint(x, y, brow_col);
        }
        if (std::abs(fx - cx) <= S * 0.018 && py >= eye_y + 0.8 * eye_r && py <= eye_y + 0.8 * eye_r + nose_len)
          painter.paint(x, y, skin_dark);
        if (sq((fx - cx) / mouth_w) + sq((py - mouth_y) / mouth_h) <= 1.0) painter.paint(x, y, mouth_col);
      }
      if (in_cap(px, py)) painter.paint(x, y, hair);
      if (style.hair_style == 2 && sq(dx) + sq(py - (cy - ry - 0.05 * ry)) <= sq(0.38 * rx))
        painter.paint(x, y, hair);
      // Accessories.
      switch (style.accessory) {
        case 1:
          if (in_cap(px, py) && py >= cy - 0.72 * ry && py <= cy - 0.6 * ry) painter.paint(x, y, acc_col);
          break;
        case 2:
          for (double side : {-1.0, 1.0})
            if (sq(px - (cx + side * rx)) + sq(py - (cy + 0.05 * ry + 1.6 * ear)) <= sq(S * 0.032))
              painter.paint(x, y, gold);
          break;
        case 3:
          if ((std::abs(dx) <= 1.3 * rx && py >= cy - 0.95 * ry && py <= cy - 0.8 * ry) ||
              (std::abs(dx) <= 0.8 * rx && py >= cy - 1.4 * ry && py < cy - 0.95 * ry))
            painter.paint(x, y, acc_col);
          break;
        default:
          break;
      }
    }
  }

  // Illumination and sensor noise act on the whole frame.
  Rng noise_rng(nz.texture_seed ^ 0x5eedULL);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double light = nz.gain * (1.0 + nz.light_slope * ((x + 0.5) / S - 0.5) * 2.0);
      for (int c = 0; c < 3; ++c) {
        double v = out.image.at(x, y, c) * light;
        if (nz.noise_sigma > 0) v += normal(noise_rng, 0.0, nz.noise_sigma);
        out.image.at(x, y, c) = quantize8(static_cast<float>(v));
      }
    }

  if (face_visible) {
    Box fb{cx + pose - 0.8 * rx, cy - 0.45 * ry, cx + pose + 0.8 * rx, cy + 0.72 * ry};
    fb.x0 = std::clamp(fb.x0, 0.0, S);
    fb.x1 = std::clamp(fb.x1, 0.0, S);
    fb.y0 = std::clamp(fb.y0, 0.0, S);
    fb.y1 = std::clamp(fb.y1, 0.0, S);
    out.face_box = fb;
  }
  return out;
}

// Tight bounding box of the set pixels; empty box when the mask is empty.
inline Box mask_bbox(const Mask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {};
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
          static_cast<double>(y1 + 1)};
}

// ---------------------------------------------------------------------------
// Oracle teacher.
//
// Identity u is embedded as normalize(W e_u) with W = P C: C stacks the
// identity trait vectors (the same traits the renderer draws), P is a fixed
// Gaussian projection to d_t dimensions. Appearance and nuisance never enter.
// ---------------------------------------------------------------------------
class OracleTeacher {
 public:
  OracleTeacher() = default;
  OracleTeacher(std::uint64_t world_seed, int num_identities, int dim = 128)
      : dim_(dim), num_identities_(num_identities) {
    if (dim <= 0 || num_identities <= 0) throw std::invalid_argument("OracleTeacher: bad shape");
    Rng rng = make_rng(world_seed, "teacher-projection");
    std::vector<double> proj(static_cast<std::size_t>(dim) * kIdentityTraits);
    for (double& v : proj) v = normal(rng) / std::sqrt(static_cast<double>(dim));
    weights_.assign(static_cast<std::size_t>(dim) * num_identities, 0.0);
    for (int u = 0; u < num_identities; ++u) {
      const IdentityTraits traits = identity_traits(world_seed, u);
      for (int r = 0; r < dim; ++r) {
        double acc = 0.0;
        for (int k = 0; k < kIdentityTraits; ++k) acc += proj[static_cast<std::size_t>(r) * kIdentityTraits + k] * traits[k];
        weights_[static_cast<std::size_t>(u) * dim + r] = acc;
      }
    }
  }

  int dim() const { return dim_; }
  int num_identities() const { return num_identities_; }
  // Column u of the d_t x U weight matrix.
  double weight(int row, int identity) const {
    return weights_[static_cast<std::size_t>(identity) * dim_ + row];
  }

  std::vector<float> embed(int identity) const {
    if (identity < 0 || identity >= num_identities_)
      throw std::out_of_range("teacher_embed: identity " + std::to_string(identity) + " out of range");
    double norm2 = 0.0;
    for (int r = 0; r < dim_; ++r) norm2 += weight(r, identity) * weight(r, identity);
    const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    std::vector<float> z(dim_);
    for (int r = 0; r < dim_; ++r) z[r] = static_cast<float>(weight(r, identity) * inv);
    return z;
  }

 private:
  int dim_ = 0;
  int num_identities_ = 0;
  std::vector<double> weights_;
};

inline std::vector<float> teacher_embed(const OracleTeacher& teacher, int identity) {
  return teacher.embed(identity);
}

// Adapter point for an external teacher (image -> unit vector).
using TeacherFn = std::function<std::vector<float>(const SynthSample&)>;

inline TeacherFn oracle_teacher_fn(const OracleTeacher& teacher) {
  return [&teacher](const SynthSample& s) { return teacher.embed(s.identity); };
}

// ---------------------------------------------------------------------------
// World generation.
// ---------------------------------------------------------------------------
struct ManifestRecord {
  std::string sample_id;
  std::string image_path;
  int identity = 0;
  int appearance = 0;
  std::string video_id;
  std::string segment_id;
  bool face_visible = false;
  std::optional<Box> face_box;
  Pool pool = Pool::head;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct World {
  FactorSpec spec;
  std::vector<SynthSample> samples;
  std::vector<ManifestRecord> manifest;
  OracleTeacher teacher;
};

inline std::string head_sample_id(int u, int a, int j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "h%04d_%02d_%03d", u, a, j);
  return buf;
}

inline std::string face_sample_id(int u, int j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "f%05d_%02d", u, j);
  return buf;
}

inline SynthSample make_sample(const FactorSpec& spec, int u, int a, int j, Pool pool) {
  SynthSample s;
  s.identity = u;
  s.appearance = a;
  s.pool = pool;
  s.sample_id = pool == Pool::head ? head_sample_id(u, a, j) : face_sample_id(u, j);
  s.nuisance_seed = derive_seed(spec.seed, "nuisance", static_cast<std::uint64_t>(u),
                                static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(j));
  if (pool == Pool::face) {
    s.face_visible = true;
  } else {
    Rng vis = make_rng(spec.seed, "face-visible", static_cast<std::uint64_t>(u),
                       static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(j));
    s.face_visible = uniform(vis) < spec.face_visible_fraction;
  }
  const int states = pool == Pool::head ? spec.states_per_identity : 1;
  RenderedHead r = render_head(spec.image_size, identity_traits(spec.seed, u),
                               appearance_style(spec.seed, u, a, states),
                               draw_nuisance(s.nuisance_seed, spec.image_size, spec.nuisance_dims),
                               s.face_visible);
  s.image = std::move(r.image);
  s.head_mask = std::move(r.mask);
  s.face_box = r.face_box;
  return s;
}

inline ManifestRecord manifest_record(const SynthSample& s) {
  ManifestRecord m;
  m.sample_id = s.sample_id;
  m.image_path = "images/" + s.sample_id + ".ppm";
  m.identity = s.identity;
  m.appearance = s.appearance;
  m.face_visible = s.face_visible;
  m.face_box = s.face_box;
  m.pool = s.pool;
  if (s.pool == Pool::head) {
    m.video_id = "v" + std::to_string(s.identity) + "_" + std::to_string(s.appearance);
    m.segment_id = m.video_id + "/s0";
  } else {
    m.video_id = "face" + std::to_string(s.identity);
    m.segment_id = m.video_id + "/s0";
  }
  return m;
}

// Head samples come first in (u, a, j) order, then the face pool.
inline World generate_world(const FactorSpec& spec) {
  spec.validate();
  World w;
  w.spec = spec;
  w.samples.reserve(spec.head_sample_count() +
                    static_cast<std::size_t>(spec.face_identities) * spec.face_samples_per_identity);
  for (int u = 0; u < spec.num_identities; ++u)
    for (int a = 0; a < spec.states_per_identity; ++a)
      for (int j = 0; j < spec.samples_per_state; ++j) w.samples.push_back(make_sample(spec, u, a, j, Pool::head));
  for (int f = 0; f < spec.face_identities; ++f)
    for (int j = 0; j < spec.face_samples_per_identity; ++j)
      w.samples.push_back(make_sample(spec, spec.num_identities + f, 0, j, Pool::face));
  w.manifest.reserve(w.samples.size());
  for (const auto& s : w.samples) w.manifest.push_back(manifest_record(s));
  w.teacher = OracleTeacher(spec.seed, spec.total_identities(), spec.teacher_dim);
  return w;
}

// Replaces everything outside the head mask with a seeded texture.
inline SynthSample randomize_background(const SynthSample& sample, std::uint64_t texture_seed) {
  SynthSample out = sample;
  Rng rng = make_rng(texture_seed, "background-base");
  const double h = uniform(rng), sat = uniform(rng, 0.0, 0.5), val = uniform(rng, 0.25, 0.9);
  const Image tex = background_texture(sample.image.width, sample.image.height, hsv_to_rgb(h, sat, val), texture_seed);
  for (int y = 0; y < out.image.height; ++y)
    for (int x = 0; x < out.image.width; ++x)
      if (!sample.head_mask.at(x, y))
        for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = quantize8(tex.at(x, y, c));
  return out;
}

// Mean per-pixel RGB distance restricted to the union of both head masks.
inline double masked_pixel_distance(const SynthSample& a, const SynthSample& b) {
  double acc = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.image.height; ++y)
    for (int x = 0; x < a.image.width; ++x) {
      if (!a.head_mask.at(x, y) && !b.head_mask.at(x, y)) continue;
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.image.at(x, y, c) - b.image.at(x, y, c);
        d2 += d * d;
      }
      acc += std::sqrt(d2);
      ++n;
    }
  return n ? acc / n : 0.0;
}

}  // namespace headsim
