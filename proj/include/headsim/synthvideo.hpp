#pragma once

// Synthetic frame/detection stream built from a head world. Every (identity,
// state) of the world becomes one track inside some shot; each frame of that
// track shows a distinct rendered sample, so ground truth is known exactly.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "headsim/pipeline.hpp"
#include "headsim/synthworld.hpp"

namespace headsim {

struct VideoSpec {
  int tracks_per_shot = 2;
  int shots_per_video = 3;
  int frame_width = 96;
  int frame_height = 64;
  int head_size = 26;
  double distractor_rate = 0.25;  // chance per shot of an extra short track
  double frontal_rate = 0.5;      // chance a face-visible frame is frontal
  std::uint64_t seed = 0;
};

namespace detail {

inline void paste(Image& frame, const Image& crop, int x0, int y0, int size) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int fx = x0 + x, fy = y0 + y;
      if (fx < 0 || fy < 0 || fx >= frame.width || fy >= frame.height) continue;
      const int sx = x * crop.width / size, sy = y * crop.height / size;
      for (int c = 0; c < 3; ++c) frame.at(fx, fy, c) = crop.at(sx, sy, c);
    }
}

}  // namespace detail

inline std::vector<FrameRecord> generate_video_frames(const World& world, const VideoSpec& vs) {
  const FactorSpec& spec = world.spec;
  Rng rng = make_rng(vs.seed ^ spec.seed, "video-layout");

  // Head samples of each (u, a), visible faces first (a head turning away).
  std::vector<std::pair<int, int>> states;
  for (int u = 0; u < spec.num_identities; ++u)
    for (int a = 0; a < spec.states_per_identity; ++a) states.emplace_back(u, a);
  auto samples_of = [&](int u, int a) {
    std::vector<const SynthSample*> v;
    const std::size_t base = (static_cast<std::size_t>(u) * spec.states_per_identity + a) * spec.samples_per_state;
    for (int j = 0; j < spec.samples_per_state; ++j) v.push_back(&world.samples[base + j]);
    std::stable_partition(v.begin(), v.end(), [](const SynthSample* s) { return s->face_visible; });
    return v;
  };
  shuffle(states, rng);

  const int lanes = std::max(vs.tracks_per_shot + 1, 1);
  const int lane_w = vs.frame_width / lanes;
  std::vector<FrameRecord> frames;
  double prev_hue = -1.0;
  int video = 0, shot_in_video = 0, frame_index = 0;
  for (std::size_t first = 0; first < states.size(); first += static_cast<std::size_t>(vs.tracks_per_shot)) {
    if (shot_in_video == vs.shots_per_video) {
      ++video;
      shot_in_video = 0;
      frame_index = 0;
      prev_hue = -1.0;
    }
    const std::string video_id = "video" + std::to_string(video);
    double hue;
    do hue = uniform(rng); while (prev_hue >= 0 && std::abs(std::remainder(hue - prev_hue, 1.0)) < 0.25);
    prev_hue = hue;
    const auto bg = hsv_to_rgb(hue, uniform(rng, 0.6, 1.0), uniform(rng, 0.6, 1.0));

    struct Track {
      std::vector<const SynthSample*> samples;
      int start;
      int lane;
      double drift;
    };
    std::vector<Track> tracks;
    int shot_len = 0;
    for (int t = 0; t < vs.tracks_per_shot && first + t < states.size(); ++t) {
      const auto [u, a] = states[first + static_cast<std::size_t>(t)];
      Track tr{samples_of(u, a), static_cast<int>(uniform_index(rng, 3)), t == 0 ? 0 : t + 1, uniform(rng, -0.5, 0.5)};
      shot_len = std::max(shot_len, tr.start + static_cast<int>(tr.samples.size()) + 1);
      tracks.push_back(std::move(tr));
    }
    if (uniform(rng) < vs.distractor_rate && !states.empty()) {
      const auto [u, a] = states[uniform_index(rng, states.size())];
      auto s = samples_of(u, a);
      s.resize(std::min<std::size_t>(s.size(), 3 + uniform_index(rng, 2)));
      tracks.push_back({std::move(s), static_cast<int>(uniform_index(rng, 4)), 1, 0.0});
    }

    for (int f = 0; f < shot_len; ++f) {
      Image frame(vs.frame_width, vs.frame_height);
      for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
          for (int c = 0; c < 3; ++c) frame.at(x, y, c) = bg[c];
      FrameRecord rec;
      rec.video_id = video_id;
      rec.frame_index = frame_index + f;
      for (const auto& tr : tracks) {
        const int k = f - tr.start;
        if (k < 0 || k >= static_cast<int>(tr.samples.size())) continue;
        const SynthSample& s = *tr.samples[static_cast<std::size_t>(k)];
        const int x0 = tr.lane * lane_w + (lane_w - vs.head_size) / 2 + static_cast<int>(std::lround(tr.drift * k));
        const int y0 = (vs.frame_height - vs.head_size) / 2;
        detail::paste(frame, s.image, x0, y0, vs.head_size);
        Detection det;
        det.head_box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + vs.head_size),
                        static_cast<double>(y0 + vs.head_size)};
        if (s.face_visible) {
          // Frontal frames show a face covering more than half the head box.
          Rng pose = make_rng(vs.seed ^ spec.seed, "pose", s.nuisance_seed);
          const double ratio = uniform(pose) < vs.frontal_rate ? uniform(pose, 0.52, 0.68) : uniform(pose, 0.25, 0.48);
          const double side = std::sqrt(ratio) * vs.head_size;
          const double cx = x0 + vs.head_size / 2.0, cy = y0 + vs.head_size * 0.55;
          det.face_box = Box{cx - side / 2, cy - side / 2, cx + side / 2, std::min(cy + side / 2, det.head_box.y1)};
          det.face_box->y0 = det.face_box->y1 - side;
        }
        det.sample_id = s.sample_id;
        det.truth_identity = s.identity;
        det.truth_appearance = s.appearance;
        rec.detections.push_back(std::move(det));
      }
      rec.histogram = hsv_histogram(frame);
      frames.push_back(std::move(rec));
    }
    frame_index += shot_len;
    ++shot_in_video;
  }
  return frames;
}

}  // namespace headsim
