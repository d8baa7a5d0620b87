#pragma once

// Experiment configuration: JSON schema, defaults, merging and hashing.
//
// Precedence is flags > file > defaults: callers load defaults, merge the file
// with config_from_json, then apply flag overrides.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "headsim/model.hpp"
#include "headsim/objectives.hpp"
#include "headsim/optim.hpp"
#include "headsim/pipeline.hpp"
#include "headsim/relations.hpp"
#include "headsim/synthvideo.hpp"
#include "headsim/synthworld.hpp"

namespace headsim {

struct TrainConfig {
  int batch_size = 64;
  int epochs = 10;
  double head_fraction = 0.5;
  MiningMode mining = MiningMode::hard;
  bool mine_on_head = false;  // mine with z_head similarities instead of z_id
  bool hardest_positive = true;
  bool background_randomization = true;
  int heldout_identities = 8;
  std::string labels_path;    // optional SampleMeta manifest replacing ground-truth labels
  long max_steps = -1;        // stop early after this many optimizer steps (<0: no cap)
};

struct EvalConfig {
  std::size_t max_positives = 20000;
  std::size_t max_negatives = 200000;
  std::size_t triples = 5000;
  std::size_t topk = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  FactorSpec world;
  VideoSpec video;
  EncoderConfig encoder;
  Margins margins;
  LossWeights weights;
  OptimizerConfig optimizer;
  TrainConfig train;
  EvalConfig eval;
  PipelineOptions pipeline;
  std::string output_dir;

  // Propagates shared fields (seed, image size) into the sub-configs.
  void resolve() {
    world.seed = seed;
    video.seed = seed;
    encoder.image_size = world.image_size;
    world.teacher_dim = encoder.embed_dim;  // alignment compares z_t and z_id directly
  }

  void validate() const {
    world.validate();
    encoder.validate();
    margins.validate();
    if (train.batch_size <= 0) throw std::invalid_argument("train.batch_size must be positive");
    if (train.epochs < 0) throw std::invalid_argument("train.epochs must be >= 0");
    if (train.heldout_identities < 0 || train.heldout_identities >= world.num_identities)
      throw std::invalid_argument("train.heldout_identities must leave at least one training identity");
    if (!(optimizer.lr > 0)) throw std::invalid_argument("optimizer.lr must be positive");
    if (encoder.image_size != world.image_size)
      throw std::invalid_argument("encoder image size must match world image size");
  }
};

// Desk-scale defaults.
inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.world.num_identities = 40;
  c.world.states_per_identity = 4;
  c.world.samples_per_state = 20;
  c.world.face_identities = 400;
  c.output_dir = "";
  c.resolve();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["seed"] = c.seed;
  j["world"] = {{"num_identities", c.world.num_identities},
                {"states_per_identity", c.world.states_per_identity},
                {"samples_per_state", c.world.samples_per_state},
                {"image_size", c.world.image_size},
                {"nuisance_dims", c.world.nuisance_dims},
                {"face_visible_fraction", c.world.face_visible_fraction},
                {"face_identities", c.world.face_identities},
                {"face_samples_per_identity", c.world.face_samples_per_identity}};
  j["video"] = {{"tracks_per_shot", c.video.tracks_per_shot}, {"shots_per_video", c.video.shots_per_video},
                {"frame_width", c.video.frame_width},         {"frame_height", c.video.frame_height},
                {"head_size", c.video.head_size},             {"distractor_rate", c.video.distractor_rate},
                {"frontal_rate", c.video.frontal_rate}};
  j["encoder"] = {{"patch_size", c.encoder.patch_size},  {"embed_dim", c.encoder.embed_dim},
                  {"depth", c.encoder.depth},            {"num_heads", c.encoder.num_heads},
                  {"variant", to_string(c.encoder.variant)}, {"mlp_ratio", c.encoder.mlp_ratio}};
  j["margins"] = json::array({c.margins.m1, c.margins.m2, c.margins.m3});
  j["loss_weights"] = {{"align", c.weights.align}, {"sim", c.weights.sim}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"schedule", c.optimizer.schedule},
                    {"warmup_steps", c.optimizer.warmup_steps},
                    {"min_lr_ratio", c.optimizer.min_lr_ratio}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"head_fraction", c.train.head_fraction},
                {"mining", c.train.mining == MiningMode::hard ? "hard" : "random"},
                {"mine_on_head", c.train.mine_on_head},
                {"hardest_positive", c.train.hardest_positive},
                {"background_randomization", c.train.background_randomization},
                {"heldout_identities", c.train.heldout_identities},
                {"labels_path", c.train.labels_path},
                {"max_steps", c.train.max_steps}};
  j["eval"] = {{"max_positives", c.eval.max_positives},
               {"max_negatives", c.eval.max_negatives},
               {"triples", c.eval.triples},
               {"topk", c.eval.topk}};
  const auto& p = c.pipeline;
  j["pipeline"] = {{"k_sigma", p.shots.k_sigma},
                   {"shot_floor", p.shots.floor},
                   {"iou_threshold", p.tracking.iou_threshold},
                   {"max_gap", p.tracking.max_gap},
                   {"min_frames", p.filter.min_frames},
                   {"min_face_frac", p.filter.min_face_frac},
                   {"min_nonface_frac", p.filter.min_nonface_frac},
                   {"best_face_ratio", p.best_face_ratio},
                   {"cluster_tau", p.cluster_tau},
                   {"stride", p.stride}};
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

// Overlays the keys present in `j` onto `base`. Unknown top-level keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = default_config()) {
  using detail::take;
  static const char* known[] = {"seed", "world", "video", "encoder", "margins", "loss_weights", "optimizer",
                                "train", "eval", "pipeline", "output_dir"};
  for (const auto& [k, _] : j.items())
    if (std::find(std::begin(known), std::end(known), k) == std::end(known))
      throw std::invalid_argument("config: unknown key '" + k + "'");
  ExperimentConfig c = std::move(base);
  take(j, "seed", c.seed);
  take(j, "output_dir", c.output_dir);
  if (j.contains("world")) {
    const auto& w = j["world"];
    take(w, "num_identities", c.world.num_identities);
    take(w, "states_per_identity", c.world.states_per_identity);
    take(w, "samples_per_state", c.world.samples_per_state);
    take(w, "image_size", c.world.image_size);
    take(w, "nuisance_dims", c.world.nuisance_dims);
    take(w, "face_visible_fraction", c.world.face_visible_fraction);
    take(w, "face_identities", c.world.face_identities);
    take(w, "face_samples_per_identity", c.world.face_samples_per_identity);
  }
  if (j.contains("video")) {
    const auto& v = j["video"];
    take(v, "tracks_per_shot", c.video.tracks_per_shot);
    take(v, "shots_per_video", c.video.shots_per_video);
    take(v, "frame_width", c.video.frame_width);
    take(v, "frame_height", c.video.frame_height);
    take(v, "head_size", c.video.head_size);
    take(v, "distractor_rate", c.video.distractor_rate);
    take(v, "frontal_rate", c.video.frontal_rate);
  }
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    take(e, "patch_size", c.encoder.patch_size);
    take(e, "embed_dim", c.encoder.embed_dim);
    take(e, "depth", c.encoder.depth);
    take(e, "num_heads", c.encoder.num_heads);
    take(e, "mlp_ratio", c.encoder.mlp_ratio);
    if (e.contains("variant")) c.encoder.variant = parse_variant(e["variant"].get<std::string>());
  }
  if (j.contains("margins")) {
    const auto& m = j["margins"];
    if (m.is_array()) {
      if (m.size() != 3) throw std::invalid_argument("config: margins must have three entries");
      c.margins = {m[0].get<double>(), m[1].get<double>(), m[2].get<double>()};
    } else {
      take(m, "m1", c.margins.m1);
      take(m, "m2", c.margins.m2);
      take(m, "m3", c.margins.m3);
    }
  }
  if (j.contains("loss_weights")) {
    take(j["loss_weights"], "align", c.weights.align);
    take(j["loss_weights"], "sim", c.weights.sim);
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    take(o, "lr", c.optimizer.lr);
    take(o, "weight_decay", c.optimizer.weight_decay);
    take(o, "beta1", c.optimizer.beta1);
    take(o, "beta2", c.optimizer.beta2);
    take(o, "eps", c.optimizer.eps);
    take(o, "schedule", c.optimizer.schedule);
    take(o, "warmup_steps", c.optimizer.warmup_steps);
    take(o, "min_lr_ratio", c.optimizer.min_lr_ratio);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    take(t, "batch_size", c.train.batch_size);
    take(t, "epochs", c.train.epochs);
    take(t, "head_fraction", c.train.head_fraction);
    if (t.contains("mining")) c.train.mining = parse_mining_mode(t["mining"].get<std::string>());
    take(t, "mine_on_head", c.train.mine_on_head);
    take(t, "hardest_positive", c.train.hardest_positive);
    take(t, "background_randomization", c.train.background_randomization);
    take(t, "heldout_identities", c.train.heldout_identities);
    take(t, "labels_path", c.train.labels_path);
    take(t, "max_steps", c.train.max_steps);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    take(e, "max_positives", c.eval.max_positives);
    take(e, "max_negatives", c.eval.max_negatives);
    take(e, "triples", c.eval.triples);
    take(e, "topk", c.eval.topk);
  }
  if (j.contains("pipeline")) {
    const auto& p = j["pipeline"];
    take(p, "k_sigma", c.pipeline.shots.k_sigma);
    take(p, "shot_floor", c.pipeline.shots.floor);
    take(p, "iou_threshold", c.pipeline.tracking.iou_threshold);
    take(p, "max_gap", c.pipeline.tracking.max_gap);
    take(p, "min_frames", c.pipeline.filter.min_frames);
    take(p, "min_face_frac", c.pipeline.filter.min_face_frac);
    take(p, "min_nonface_frac", c.pipeline.filter.min_nonface_frac);
    take(p, "best_face_ratio", c.pipeline.best_face_ratio);
    take(p, "cluster_tau", c.pipeline.cluster_tau);
    take(p, "stride", c.pipeline.stride);
  }
  c.resolve();
  return c;
}

// Hash of everything that influences results (the output location excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = config_to_json(c);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

}  // namespace headsim
