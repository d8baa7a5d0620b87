#pragma once

// Weak-supervision dataset construction from frame/detection manifests:
// shot segmentation, IoU tracking, segment filtering, best-face selection,
// cross-video identity clustering and relation induction.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "headsim/core.hpp"
#include "headsim/relations.hpp"

namespace headsim {

struct Detection {
  Box head_box;
  std::optional<Box> face_box;
  std::string sample_id;  // crop reference carried through to the emitted samples
  // Ground truth when the source is synthetic; never read by the pipeline stages.
  std::optional<int> truth_identity;
  std::optional<int> truth_appearance;
};

struct FrameRecord {
  std::string video_id;
  int frame_index = 0;
  std::vector<double> histogram;  // HSV histogram
  std::vector<Detection> detections;
};

struct Shot {
  std::string video_id;
  int start_frame = 0;
  int end_frame = 0;  // inclusive

  friend bool operator==(const Shot&, const Shot&) = default;
};

struct TrackFrame {
  int frame_index = 0;
  Box head_box;
  std::optional<Box> face_box;
  std::string sample_id;
};

struct TrackSegment {
  std::string segment_id;
  std::string video_id;
  int shot_id = 0;
  std::vector<TrackFrame> frames;
  int face_visible_count = 0;

  std::size_t length() const { return frames.size(); }
};

// ---------------------------------------------------------------------------
// Shot segmentation.
// ---------------------------------------------------------------------------
inline constexpr int kHueBins = 8, kSatBins = 4, kValBins = 4;
inline constexpr int kHistogramBins = kHueBins * kSatBins * kValBins;

inline std::vector<double> hsv_histogram(const Image& img) {
  if (img.empty()) throw std::invalid_argument("hsv_histogram: empty image");
  std::vector<double> h(kHistogramBins, 0.0);
  auto bin = [](double v, int n) { return std::min(static_cast<int>(v * n), n - 1); };
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto hsv = rgb_to_hsv(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
      h[(bin(hsv[0], kHueBins) * kSatBins + bin(hsv[1], kSatBins)) * kValBins + bin(hsv[2], kValBins)] += 1.0;
    }
  const double inv = 1.0 / static_cast<double>(img.pixel_count());
  for (double& v : h) v *= inv;
  return h;
}

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("l1_distance: histogram size mismatch");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

struct ShotOptions {
  double k_sigma = 3.0;
  double floor = 0.2;
};

// Frames of one video in frame order. A cut is declared between consecutive
// frames whose histogram distance exceeds max(mean + k*std, floor).
inline std::vector<Shot> detect_shots_in_video(std::span<const FrameRecord> frames, ShotOptions opt = {}) {
  std::vector<Shot> shots;
  if (frames.empty()) return shots;
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].frame_index <= frames[i - 1].frame_index)
      throw std::invalid_argument("detect_shots: frame indices must increase within " + frames[0].video_id);
  std::vector<double> dist;
  for (std::size_t i = 1; i < frames.size(); ++i) dist.push_back(l1_distance(frames[i - 1].histogram, frames[i].histogram));
  double thr = opt.floor;
  if (!dist.empty()) {
    double mean = 0;
    for (double v : dist) mean += v;
    mean /= static_cast<double>(dist.size());
    double var = 0;
    for (double v : dist) var += (v - mean) * (v - mean);
    var /= static_cast<double>(dist.size());
    thr = std::max(mean + opt.k_sigma * std::sqrt(var), opt.floor);
  }
  Shot cur{frames[0].video_id, frames[0].frame_index, frames[0].frame_index};
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (dist[i - 1] > thr) {
      shots.push_back(cur);
      cur.start_frame = frames[i].frame_index;
    }
    cur.end_frame = frames[i].frame_index;
  }
  shots.push_back(cur);
  return shots;
}

// Groups frames by video (first-appearance order) and segments each.
inline std::vector<Shot> detect_shots(std::span<const FrameRecord> frames, ShotOptions opt = {}) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<FrameRecord>> by_video;
  for (const auto& f : frames) {
    auto [it, fresh] = by_video.try_emplace(f.video_id);
    if (fresh) order.push_back(f.video_id);
    it->second.push_back(f);
  }
  std::vector<Shot> out;
  for (const auto& v : order) {
    auto s = detect_shots_in_video(by_video[v], opt);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tracking.
// ---------------------------------------------------------------------------
inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: malformed box (min > max)");
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct TrackOptions {
  double iou_threshold = 0.5;
  int max_gap = 1;
};

// Greedy frame-to-frame association inside one shot. Candidate (track,
// detection) links with IoU >= threshold are taken in descending IoU order,
// ties by lower track id then lower detection index.
inline std::vector<TrackSegment> track_heads(std::span<const FrameRecord> shot_frames, int shot_id,
                                             TrackOptions opt = {}) {
  struct Open {
    TrackSegment seg;
    int last_frame;
    Box last_box;
    bool open;
  };
  std::vector<Open> tracks;
  for (const auto& f : shot_frames) {
    for (auto& t : tracks)
      if (t.open && f.frame_index - t.last_frame > opt.max_gap) t.open = false;
    struct Link {
      double iou;
      std::size_t track, det;
    };
    std::vector<Link> links;
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      if (!tracks[t].open) continue;
      for (std::size_t d = 0; d < f.detections.size(); ++d) {
        const double v = iou(tracks[t].last_box, f.detections[d].head_box);
        if (v >= opt.iou_threshold) links.push_back({v, t, d});
      }
    }
    std::stable_sort(links.begin(), links.end(), [](const Link& a, const Link& b) {
      if (a.iou != b.iou) return a.iou > b.iou;
      if (a.track != b.track) return a.track < b.track;
      return a.det < b.det;
    });
    std::vector<std::uint8_t> det_used(f.detections.size(), 0), track_used(tracks.size(), 0);
    auto extend = [&](Open& t, const Detection& d) {
      t.seg.frames.push_back({f.frame_index, d.head_box, d.face_box, d.sample_id});
      if (d.face_box) ++t.seg.face_visible_count;
      t.last_frame = f.frame_index;
      t.last_box = d.head_box;
    };
    for (const auto& l : links) {
      if (det_used[l.det] || track_used[l.track]) continue;
      det_used[l.det] = track_used[l.track] = 1;
      extend(tracks[l.track], f.detections[l.det]);
    }
    for (std::size_t d = 0; d < f.detections.size(); ++d) {
      if (det_used[d]) continue;
      Open t;
      t.seg.video_id = f.video_id;
      t.seg.shot_id = shot_id;
      t.seg.segment_id = f.video_id + "/shot" + std::to_string(shot_id) + "/t" + std::to_string(tracks.size());
      t.open = true;
      extend(t, f.detections[d]);
      tracks.push_back(std::move(t));
    }
  }
  std::vector<TrackSegment> out;
  out.reserve(tracks.size());
  for (auto& t : tracks) out.push_back(std::move(t.seg));
  return out;
}

// ---------------------------------------------------------------------------
// Filtering and representative selection.
// ---------------------------------------------------------------------------
struct FilterOptions {
  int min_frames = 5;
  double min_face_frac = 0.20;
  double min_nonface_frac = 0.10;
};

inline bool keep_segment(const TrackSegment& s, const FilterOptions& opt = {}) {
  const double n = static_cast<double>(s.length());
  if (s.length() < static_cast<std::size_t>(std::max(opt.min_frames, 1))) return false;
  const double face = s.face_visible_count;
  const double nonface = n - face;
  constexpr double tol = 1e-9;
  return face >= opt.min_face_frac * n - tol && nonface >= opt.min_nonface_frac * n - tol;
}

inline std::vector<TrackSegment> filter_segments(std::span<const TrackSegment> segments, FilterOptions opt = {}) {
  std::vector<TrackSegment> out;
  for (const auto& s : segments)
    if (keep_segment(s, opt)) out.push_back(s);
  return out;
}

// Frame with the largest face box among those whose face covers more than half the head box.
inline std::optional<int> select_best_face(const TrackSegment& seg, double min_ratio = 0.5) {
  std::optional<int> best;
  double best_area = -1.0;
  for (const auto& f : seg.frames) {
    if (!f.face_box) continue;
    const double head = f.head_box.area();
    if (head <= 0.0) continue;
    const double face = f.face_box->area();
    if (!(face / head > min_ratio)) continue;
    if (face > best_area || (face == best_area && best && f.frame_index < *best)) {
      best_area = face;
      best = f.frame_index;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Identity clustering: average linkage under cosine similarity.
// ---------------------------------------------------------------------------
inline std::vector<int> cluster_identities(std::span<const std::vector<float>> embeddings, double tau = 0.5) {
  const std::size_t n = embeddings.size();
  if (n == 0) return {};
  const std::size_t d = embeddings[0].size();
  for (const auto& e : embeddings)
    if (e.size() != d) throw std::invalid_argument("cluster_identities: embedding dimension mismatch");

  // Lance-Williams update for average linkage on a similarity matrix.
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(embeddings[i][k]) * embeddings[j][k];
      sim[i][j] = sim[j][i] = s;
    }
  std::vector<std::size_t> size(n, 1);
  std::vector<std::uint8_t> alive(n, 1);
  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[i] = i;

  while (true) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        if (sim[i][j] > best) {
          best = sim[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    if (!(best >= tau)) break;
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double s = (static_cast<double>(size[bi]) * sim[bi][k] + static_cast<double>(size[bj]) * sim[bj][k]) /
                       static_cast<double>(size[bi] + size[bj]);
      sim[bi][k] = sim[k][bi] = s;
    }
    size[bi] += size[bj];
    alive[bj] = 0;
    for (auto& o : owner)
      if (o == bj) o = bi;
  }
  std::map<std::size_t, int> dense;
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = dense.try_emplace(owner[i], static_cast<int>(dense.size()));
    ids[i] = it->second;
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Relation induction.
// ---------------------------------------------------------------------------
struct ClusteredSegment {
  TrackSegment segment;
  int cluster_id = 0;
};

// identity := cluster id, appearance := segment ordinal (unique across videos).
inline std::vector<SampleMeta> induce_relations(std::span<const ClusteredSegment> segments, int stride = 1) {
  if (stride <= 0) throw std::invalid_argument("induce_relations: stride must be positive");
  std::vector<SampleMeta> out;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s].segment;
    for (std::size_t f = 0; f < seg.frames.size(); f += static_cast<std::size_t>(stride)) {
      const auto& fr = seg.frames[f];
      SampleMeta m;
      m.sample_id = fr.sample_id.empty() ? seg.segment_id + "/f" + std::to_string(fr.frame_index) : fr.sample_id;
      m.identity = segments[s].cluster_id;
      m.appearance = static_cast<int>(s);
      m.video_id = seg.video_id;
      m.face_visible = fr.face_box.has_value();
      out.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end run.
// ---------------------------------------------------------------------------
struct PipelineOptions {
  ShotOptions shots;
  TrackOptions tracking;
  FilterOptions filter;
  double best_face_ratio = 0.5;
  double cluster_tau = 0.5;
  int stride = 1;
};

struct StageCounts {
  std::size_t frames = 0, videos = 0, shots = 0, tracks = 0, kept = 0, with_best_face = 0, clusters = 0,
              samples = 0;
};

struct SegmentReport {
  TrackSegment segment;
  std::optional<int> best_face_frame;
  std::optional<int> cluster_id;
};

struct PipelineResult {
  std::vector<Shot> shots;
  std::vector<TrackSegment> tracks;
  std::vector<SegmentReport> kept;
  std::vector<SampleMeta> samples;
  StageCounts counts;
  std::vector<std::string> warnings;
};

// Maps the best-face detection of a segment to a unit face embedding.
using FaceEmbedder = std::function<std::vector<float>(const TrackSegment&, const TrackFrame&)>;

inline PipelineResult run_pipeline(std::span<const FrameRecord> frames, const FaceEmbedder& embed,
                                   const PipelineOptions& opt = {}) {
  PipelineResult r;
  r.counts.frames = frames.size();
  std::vector<std::string> videos;
  std::map<std::string, std::vector<FrameRecord>> by_video;
  for (const auto& f : frames) {
    auto [it, fresh] = by_video.try_emplace(f.video_id);
    if (fresh) videos.push_back(f.video_id);
    it->second.push_back(f);
  }
  r.counts.videos = videos.size();
  for (const auto& v : videos) {
    const auto& vf = by_video[v];
    const auto shots = detect_shots_in_video(vf, opt.shots);
    for (std::size_t s = 0; s < shots.size(); ++s) {
      std::vector<FrameRecord> in_shot;
      for (const auto& f : vf)
        if (f.frame_index >= shots[s].start_frame && f.frame_index <= shots[s].end_frame) in_shot.push_back(f);
      auto tracks = track_heads(in_shot, static_cast<int>(s), opt.tracking);
      r.tracks.insert(r.tracks.end(), tracks.begin(), tracks.end());
    }
    r.shots.insert(r.shots.end(), shots.begin(), shots.end());
  }
  r.counts.shots = r.shots.size();
  r.counts.tracks = r.tracks.size();

  const auto kept = filter_segments(r.tracks, opt.filter);
  r.counts.kept = kept.size();
  std::vector<std::vector<float>> faces;
  std::vector<std::size_t> with_face;
  for (const auto& seg : kept) {
    SegmentReport rep{seg, select_best_face(seg, opt.best_face_ratio), std::nullopt};
    if (rep.best_face_frame) {
      const auto it = std::find_if(seg.frames.begin(), seg.frames.end(),
                                   [&](const TrackFrame& f) { return f.frame_index == *rep.best_face_frame; });
      faces.push_back(embed(seg, *it));
      with_face.push_back(r.kept.size());
    } else {
      r.warnings.push_back("segment " + seg.segment_id + " has no best-face frame; dropped");
    }
    r.kept.push_back(std::move(rep));
  }
  r.counts.with_best_face = with_face.size();
  const auto ids = cluster_identities(faces, opt.cluster_tau);
  std::vector<ClusteredSegment> clustered;
  int n_clusters = 0;
  for (std::size_t k = 0; k < with_face.size(); ++k) {
    r.kept[with_face[k]].cluster_id = ids[k];
    clustered.push_back({r.kept[with_face[k]].segment, ids[k]});
    n_clusters = std::max(n_clusters, ids[k] + 1);
  }
  r.counts.clusters = static_cast<std::size_t>(n_clusters);
  r.samples = induce_relations(clustered, opt.stride);
  r.counts.samples = r.samples.size();
  return r;
}

}  // namespace headsim
