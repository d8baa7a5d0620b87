#pragma once

// Experiment runner: dataset loading, training loop, evaluation, ablation and
// the file-producing commands behind the CLI.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headsim/checkpoint.hpp"
#include "headsim/config.hpp"
#include "headsim/io.hpp"
#include "headsim/metrics.hpp"
#include "headsim/model.hpp"
#include "headsim/objectives.hpp"
#include "headsim/optim.hpp"
#include "headsim/pipeline.hpp"
#include "headsim/plot.hpp"
#include "headsim/relations.hpp"
#include "headsim/synthvideo.hpp"
#include "headsim/synthworld.hpp"

namespace headsim {

namespace fs = std::filesystem;

inline Provenance provenance(const ExperimentConfig& c, std::string kind) {
  return {std::move(kind), config_hash(c), c.seed};
}

inline std::string provenance_comment(const ExperimentConfig& c) {
  return "headsim config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed);
}

// Stable JSON text for reports (sorted keys, fixed indentation).
inline std::string report_text(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Frame stream serialisation.
// ---------------------------------------------------------------------------
inline json to_json(const FrameRecord& f) {
  json dets = json::array();
  for (const auto& d : f.detections) {
    json j = {{"head_box", box_to_json(d.head_box)},
              {"face_box", d.face_box ? box_to_json(*d.face_box) : json(nullptr)},
              {"sample_id", d.sample_id}};
    if (d.truth_identity) j["truth_identity"] = *d.truth_identity;
    if (d.truth_appearance) j["truth_appearance"] = *d.truth_appearance;
    dets.push_back(std::move(j));
  }
  return {{"video_id", f.video_id}, {"frame_index", f.frame_index}, {"histogram", f.histogram}, {"detections", dets}};
}

inline FrameRecord frame_from_json(const json& j) {
  FrameRecord f;
  f.video_id = j.at("video_id").get<std::string>();
  f.frame_index = j.at("frame_index").get<int>();
  f.histogram = j.at("histogram").get<std::vector<double>>();
  for (const auto& d : j.at("detections")) {
    Detection det;
    det.head_box = box_from_json(d.at("head_box"));
    if (d.contains("face_box") && !d["face_box"].is_null()) det.face_box = box_from_json(d["face_box"]);
    det.sample_id = d.value("sample_id", std::string());
    if (d.contains("truth_identity")) det.truth_identity = d["truth_identity"].get<int>();
    if (d.contains("truth_appearance")) det.truth_appearance = d["truth_appearance"].get<int>();
    f.detections.push_back(std::move(det));
  }
  return f;
}

inline json to_json(const SampleMeta& m) {
  return {{"sample_id", m.sample_id},
          {"identity", m.identity},
          {"appearance", m.appearance},
          {"video_id", m.video_id},
          {"face_visible", m.face_visible}};
}

inline SampleMeta sample_meta_from_json(const json& j) {
  SampleMeta m;
  m.sample_id = j.at("sample_id").get<std::string>();
  m.identity = j.at("identity").get<int>();
  m.appearance = j.at("appearance").get<int>();
  m.video_id = j.value("video_id", std::string());
  m.face_visible = j.value("face_visible", false);
  return m;
}

// ---------------------------------------------------------------------------
// Dataset.
// ---------------------------------------------------------------------------
struct Dataset {
  FactorSpec spec;
  std::vector<SynthSample> samples;  // head samples first, then the face pool
  OracleTeacher teacher;
  std::vector<std::size_t> train_head;  // indices into samples
  std::vector<std::size_t> eval_head;   // held-out identities
  std::vector<std::size_t> face;
  std::vector<SampleMeta> train_head_meta;  // training labels, parallel to train_head
  std::vector<SampleMeta> face_meta;        // parallel to face
};

inline bool is_heldout(const ExperimentConfig& c, int identity) {
  return identity >= c.world.num_identities - c.train.heldout_identities && identity < c.world.num_identities;
}

// Builds the train/eval split. Held-out identities are the last ones of the
// head world; they never enter training, whatever labels are used.
inline void split_dataset(const ExperimentConfig& c, Dataset& ds) {
  std::map<std::string, SampleMeta> labels;
  const bool induced = !c.train.labels_path.empty();
  if (induced)
    for (const auto& j : read_jsonl(c.train.labels_path)) {
      auto m = sample_meta_from_json(j);
      labels.emplace(m.sample_id, std::move(m));
    }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const SynthSample& s = ds.samples[i];
    SampleMeta truth{s.sample_id, s.identity, s.appearance, "", s.face_visible};
    if (s.pool == Pool::face) {
      ds.face.push_back(i);
      ds.face_meta.push_back(truth);
      continue;
    }
    if (is_heldout(c, s.identity)) {
      ds.eval_head.push_back(i);
      continue;
    }
    if (induced) {
      const auto it = labels.find(s.sample_id);
      if (it == labels.end()) continue;
      SampleMeta m = it->second;
      m.face_visible = s.face_visible;
      ds.train_head.push_back(i);
      ds.train_head_meta.push_back(m);
    } else {
      ds.train_head.push_back(i);
      ds.train_head_meta.push_back(truth);
    }
  }
  if (ds.train_head.empty()) throw std::runtime_error("dataset: no training head samples");
  if (ds.eval_head.empty() && c.train.heldout_identities > 0)
    throw std::runtime_error("dataset: no held-out samples");
}

inline Dataset dataset_from_world(const ExperimentConfig& c, World world) {
  Dataset ds;
  ds.spec = world.spec;
  ds.samples = std::move(world.samples);
  ds.teacher = std::move(world.teacher);
  split_dataset(c, ds);
  return ds;
}

// Loads a world written by cmd_synth (images and masks are read from disk).
inline Dataset load_dataset(const ExperimentConfig& c, const fs::path& world_dir) {
  Dataset ds;
  ds.spec = c.world;
  const auto manifest = read_manifest(world_dir / "manifest.jsonl");
  ds.samples.reserve(manifest.size());
  int max_identity = -1;
  for (const auto& m : manifest) {
    SynthSample s;
    s.sample_id = m.sample_id;
    s.identity = m.identity;
    s.appearance = m.appearance;
    s.face_visible = m.face_visible;
    s.face_box = m.face_box;
    s.pool = m.pool;
    s.image = read_ppm(world_dir / m.image_path);
    s.head_mask = read_pgm(world_dir / ("masks/" + m.sample_id + ".pgm"));
    if (s.image.width != c.world.image_size || s.image.height != c.world.image_size)
      throw std::runtime_error(m.image_path + ": image size does not match config");
    max_identity = std::max(max_identity, s.identity);
    ds.samples.push_back(std::move(s));
  }
  if (max_identity >= c.world.total_identities())
    throw std::runtime_error("manifest identities exceed the configured world; wrong config for this manifest?");
  ds.teacher = OracleTeacher(c.world.seed, c.world.total_identities(), c.world.teacher_dim);
  split_dataset(c, ds);
  return ds;
}

inline Dataset make_dataset(const ExperimentConfig& c, const std::optional<fs::path>& world_dir = {}) {
  if (world_dir) return load_dataset(c, *world_dir);
  return dataset_from_world(c, generate_world(c.world));
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------
struct PreparedBatch {
  BatchDescriptor desc;
  std::vector<Image> images;
  std::vector<SampleMeta> head_meta;  // first desc.head_count rows
  std::vector<std::optional<RowT<float>>> targets;
  std::vector<std::uint8_t> distill;
};

inline std::size_t steps_per_epoch(const ExperimentConfig& c, const Dataset& ds) {
  const std::size_t n_head = std::max<std::size_t>(1, head_count_for(c.train.batch_size, c.train.head_fraction));
  return std::max<std::size_t>(1, ds.train_head.size() / n_head);
}

inline std::uint64_t total_steps(const ExperimentConfig& c, const Dataset& ds) {
  std::uint64_t n = static_cast<std::uint64_t>(c.train.epochs) * steps_per_epoch(c, ds);
  if (c.train.max_steps >= 0) n = std::min<std::uint64_t>(n, static_cast<std::uint64_t>(c.train.max_steps));
  return n;
}

// The batch of a step depends only on (seed, step), so runs can resume anywhere.
inline PreparedBatch prepare_batch(const ExperimentConfig& c, const Dataset& ds, std::uint64_t step) {
  Rng rng = make_rng(c.seed, "batch", step);
  PreparedBatch b;
  b.desc = mixed_batch(ds.train_head_meta, ds.face_meta, c.train.batch_size, c.train.head_fraction, rng);
  b.images.reserve(b.desc.entries.size());
  for (std::size_t k = 0; k < b.desc.entries.size(); ++k) {
    const BatchEntry& e = b.desc.entries[k];
    const std::size_t idx = e.pool == Pool::head ? ds.train_head[e.index] : ds.face[e.index];
    const SynthSample& s = ds.samples[idx];
    if (c.train.background_randomization)
      b.images.push_back(randomize_background(s, derive_seed(c.seed, "background", step, k)).image);
    else
      b.images.push_back(s.image);
    if (e.pool == Pool::head) b.head_meta.push_back(ds.train_head_meta[e.index]);
    b.distill.push_back(e.distill ? 1 : 0);
    if (e.distill) {
      const auto t = ds.teacher.embed(s.identity);
      b.targets.emplace_back(Eigen::Map<const RowT<float>>(t.data(), static_cast<Eigen::Index>(t.size())));
    } else {
      b.targets.emplace_back(std::nullopt);
    }
  }
  return b;
}

struct StepOutput {
  LossBreakdown loss;
  std::vector<Quadruplet> quads;
  double id_sim_grad_norm = 0;  // |d L_sim / d g_id.w|, zero for the split variant
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Forward pass, mining and objective; accumulates gradients when `grads` is set.
// Passing `fixed_quads` skips mining (used to compare losses on the same tuples).
inline StepOutput forward_backward(const ExperimentConfig& c, const Parameters<float>& params,
                                   const PreparedBatch& b, std::uint64_t step, Parameters<float>* grads,
                                   const std::vector<Quadruplet>* fixed_quads = nullptr) {
  const Variant variant = params.config.variant;
  const LossRouting route = LossRouting::for_variant(variant);
  const bool need_head = route.sim_on_head || (c.train.mine_on_head && variant != Variant::shared);
  auto fwd = encode<float>(params, b.images, {grads != nullptr, need_head});
  if (fwd.z_id.size() && !fwd.z_id.allFinite()) throw NonFiniteLoss("non-finite embeddings");

  StepOutput out;
  const auto h = static_cast<Eigen::Index>(b.desc.head_count);
  if (fixed_quads) {
    out.quads = *fixed_quads;
  } else {
    const MatT<float>& z = (c.train.mine_on_head && fwd.z_head.size()) ? fwd.z_head : fwd.z_id;
    const Eigen::MatrixXd sim = (z.topRows(h) * z.topRows(h).transpose()).cast<double>();
    Rng rng = make_rng(c.seed, "mining", step);
    out.quads = build_quadruplets(b.head_meta, sim, {c.train.mining, c.train.hardest_positive}, &rng);
  }
  const auto obj = batch_objective<float>(fwd.z_id, fwd.z_head, out.quads, b.targets, b.distill, variant,
                                          c.margins, c.weights);
  out.loss = obj.loss;
  if (!std::isfinite(out.loss.total)) throw NonFiniteLoss("non-finite loss");
  if (grads) {
    out.id_sim_grad_norm = static_cast<double>(id_projection_grad<float>(fwd, obj.dz_id_sim).norm());
    encode_backward<float>(params, fwd, obj.dz_id, obj.dz_head, *grads);
  }
  return out;
}

struct TrainOptions {
  fs::path out_dir;                // empty: no files written
  std::optional<fs::path> resume;  // checkpoint to continue from
  bool verbose = false;
};

struct TrainOutcome {
  Parameters<float> params;
  std::vector<json> log;
  std::uint64_t steps = 0;
  double seconds = 0;
};

inline json step_record(std::uint64_t step, std::uint64_t epoch, double lr, const StepOutput& s,
                        const BatchDescriptor& d) {
  return {{"step", step},
          {"epoch", epoch},
          {"lr", lr},
          {"align", s.loss.align},
          {"sim_id", s.loss.sim_id},
          {"sim_head", s.loss.sim_head},
          {"total", s.loss.total},
          {"num_quadruplets", s.loss.num_quadruplets},
          {"num_align_pairs", s.loss.num_align_pairs},
          {"batch_hash", hex64(d.hash())},
          {"id_sim_grad_norm", s.id_sim_grad_norm}};
}

inline json batch_descriptor_json(const BatchDescriptor& d) {
  json e = json::array();
  for (const auto& x : d.entries)
    e.push_back({{"pool", x.pool == Pool::head ? "head" : "face"}, {"index", x.index}, {"distill", x.distill}});
  return {{"head_count", d.head_count}, {"hash", hex64(d.hash())}, {"entries", e}};
}

inline TrainOutcome train(const ExperimentConfig& c, const Dataset& ds, const TrainOptions& opt = {}) {
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t spe = steps_per_epoch(c, ds);
  const std::uint64_t total = total_steps(c, ds);

  TrainOutcome r;
  r.params = parameter_init<float>(c.encoder, derive_seed(c.seed, "init"));
  AdamW adam(c.optimizer, r.params.size());
  std::uint64_t step = 0;
  const std::string cfg_json = config_to_json(c).dump();
  if (opt.resume) {
    const Checkpoint ck = load_checkpoint(*opt.resume);
    if (ParamLayout(ck.encoder).total() != r.params.size() || ck.encoder.variant != c.encoder.variant)
      throw std::runtime_error("resume: checkpoint encoder does not match config");
    r.params.values.assign(ck.params.begin(), ck.params.end());
    adam.first_moment() = ck.adam_m;
    adam.second_moment() = ck.adam_v;
    adam.set_steps(ck.step);
    step = ck.step;
  }

  const bool files = !opt.out_dir.empty();
  const fs::path log_path = opt.out_dir / "train_log.jsonl";
  std::ofstream log;
  if (files) {
    fs::create_directories(opt.out_dir / "checkpoints");
    std::vector<json> kept;
    if (opt.resume && fs::exists(log_path))
      for (auto& row : read_jsonl(log_path))
        if (row.at("step").get<std::uint64_t>() < step) kept.push_back(std::move(row));
    write_jsonl(log_path, provenance(c, "train_log"), kept);
    r.log = kept;
    log.open(log_path, std::ios::app);
    write_text(opt.out_dir / "config.json", report_text(config_to_json(c)));
  }

  auto save = [&](std::uint64_t epoch) {
    if (!files) return;
    Checkpoint ck{cfg_json, c.encoder, step, epoch, {r.params.values.begin(), r.params.values.end()}, adam.first_moment(), adam.second_moment()};
    save_checkpoint(opt.out_dir / "checkpoints" / ("epoch_" + std::to_string(epoch) + ".ckpt"), ck);
    save_checkpoint(opt.out_dir / "checkpoints" / "latest.ckpt", ck);
  };

  Parameters<float> grads(c.encoder);
  while (step < total) {
    const std::uint64_t epoch = step / spe;
    const PreparedBatch batch = prepare_batch(c, ds, step);
    std::fill(grads.values.begin(), grads.values.end(), 0.0f);
    StepOutput out;
    try {
      out = forward_backward(c, r.params, batch, step, &grads);
    } catch (const NonFiniteLoss& e) {
      if (files) {
        json dump = {{"step", step}, {"error", e.what()}, {"batch", batch_descriptor_json(batch.desc)}};
        write_text(opt.out_dir / "nonfinite_batch.json", report_text(dump));
      }
      throw;
    }
    const double lr = learning_rate(c.optimizer, step, total);
    adam.step(r.params, grads, lr);
    json rec = step_record(step, epoch, lr, out, batch.desc);
    if (files) log << rec.dump() << "\n" << std::flush;
    if (opt.verbose && (step % 20 == 0 || step + 1 == total))
      std::fprintf(stderr, "step %llu epoch %llu total %.4f align %.4f sim_id %.4f sim_head %.4f quads %d\n",
                   static_cast<unsigned long long>(step), static_cast<unsigned long long>(epoch), out.loss.total,
                   out.loss.align, out.loss.sim_id, out.loss.sim_head, out.loss.num_quadruplets);
    r.log.push_back(std::move(rec));
    ++step;
    if (step % spe == 0 || step == total) save(step == total && step % spe ? step / spe + 1 : step / spe);
  }
  r.steps = step;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

// Inference embeddings (z_id only).
inline MatT<float> embed_identity(const Parameters<float>& p, std::span<const Image> images,
                                  std::size_t chunk = 64) {
  MatT<float> out(static_cast<Eigen::Index>(images.size()), p.config.embed_dim);
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    const std::size_t n = std::min(chunk, images.size() - s);
    const auto r = encode<float>(p, images.subspan(s, n), {false, false});
    out.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) = r.z_id;
  }
  return out;
}

struct RelationMeans {
  double r1 = 0, r2 = 0, r3 = 0;
  std::size_t n1 = 0, n2 = 0, n3 = 0;
};

// Exact means over every unordered pair.
inline RelationMeans relation_means(std::span<const SampleMeta> metas, const MatT<float>& emb) {
  RelationMeans m;
  double s1 = 0, s2 = 0, s3 = 0;
  const MatT<float> g = emb * emb.transpose();
  for (std::size_t i = 0; i < metas.size(); ++i)
    for (std::size_t j = i + 1; j < metas.size(); ++j) {
      const double s = g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      switch (relation_from_labels(metas[i].identity, metas[i].appearance, metas[j].identity, metas[j].appearance)) {
        case Relation::R1: s1 += s; ++m.n1; break;
        case Relation::R2: s2 += s; ++m.n2; break;
        case Relation::R3: s3 += s; ++m.n3; break;
      }
    }
  m.r1 = m.n1 ? s1 / m.n1 : 0;
  m.r2 = m.n2 ? s2 / m.n2 : 0;
  m.r3 = m.n3 ? s3 / m.n3 : 0;
  return m;
}

inline std::string roc_csv(const RocResult& r, const std::string& comment) {
  std::ostringstream s;
  s << "# " << comment << "\n";
  s << "threshold,far,tpr\n";
  char buf[96];
  for (std::size_t k = 0; k < r.far.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", r.thresholds[k], r.far[k], r.tpr[k]);
    s << buf;
  }
  return s.str();
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

struct EvalOptions {
  fs::path out_dir;  // empty: no files
  std::string label = "z_id";
};

// Evaluates an embedding matrix over the held-out samples `metas`.
inline json evaluate_embeddings(const ExperimentConfig& c, std::span<const SampleMeta> metas, const MatT<float>& emb,
                                const EvalOptions& opt = {}) {
  json rep;
  rep["config_hash"] = config_hash(c);
  rep["seed"] = c.seed;
  rep["embedding"] = opt.label;
  rep["num_samples"] = metas.size();
  std::set<int> ids;
  for (const auto& m : metas) ids.insert(m.identity);
  rep["num_identities"] = ids.size();

  for (Protocol proto : {Protocol::identity, Protocol::appearance}) {
    Rng rng = make_rng(c.seed, "eval-pairs", static_cast<std::uint64_t>(proto));
    const auto pairs = build_eval_pairs(metas, emb, proto, {c.eval.max_positives, c.eval.max_negatives}, rng);
    const RocResult roc_r = roc(pairs);
    json pj;
    pj["auc"] = roc_r.auc;
    pj["positives"] = roc_r.positives;
    pj["negatives"] = roc_r.negatives;
    for (double far : kReportedFars) {
      char key[32];
      std::snprintf(key, sizeof key, "vr@%.0e", far);
      pj[key] = optional_json(vr_at_far(roc_r, far));
    }
    rep["protocols"][std::string(to_string(proto))] = pj;
    if (!opt.out_dir.empty()) {
      const std::string base = "roc_" + std::string(to_string(proto));
      write_text(opt.out_dir / (base + ".csv"), roc_csv(roc_r, provenance_comment(c)));
      write_text(opt.out_dir / (base + ".svg"),
                 "<!-- " + provenance_comment(c) + " -->\n" +
                     roc_svg({{opt.label, roc_r.far, roc_r.tpr}}, std::string(to_string(proto)) + " protocol ROC"));
    }
  }

  Rng trng = make_rng(c.seed, "eval-triples");
  const auto triples = sample_ordering_triples(metas, emb, c.eval.triples, trng);
  rep["ordering_satisfaction"] = ordering_satisfaction(triples);
  rep["ordering_triples"] = triples.size();

  const RelationMeans rm = relation_means(metas, emb);
  rep["relation_means"] = {{"r1", rm.r1}, {"r2", rm.r2}, {"r3", rm.r3}, {"n_r1", rm.n1}, {"n_r2", rm.n2},
                           {"n_r3", rm.n3}, {"gap_r1_r2", rm.r1 - rm.r2}, {"gap_r2_r3", rm.r2 - rm.r3}};

  if (c.eval.topk > 0 && metas.size() > c.eval.topk) {
    std::vector<long> self(metas.size());
    for (std::size_t i = 0; i < self.size(); ++i) self[i] = static_cast<long>(i);
    const auto top = retrieval_topk(emb, emb, c.eval.topk, self);
    double same_id = 0, same_state = 0;
    for (std::size_t q = 0; q < top.size(); ++q)
      for (std::size_t g : top[q].indices) {
        same_id += metas[g].identity == metas[q].identity;
        same_state += metas[g].identity == metas[q].identity && metas[g].appearance == metas[q].appearance;
      }
    const double denom = static_cast<double>(top.size() * c.eval.topk);
    rep["retrieval"] = {{"k", c.eval.topk},
                        {"identity_precision", same_id / denom},
                        {"state_precision", same_state / denom}};
  }
  return rep;
}

inline std::vector<SampleMeta> eval_metas(const Dataset& ds) {
  std::vector<SampleMeta> metas;
  for (std::size_t i : ds.eval_head) {
    const auto& s = ds.samples[i];
    metas.push_back({s.sample_id, s.identity, s.appearance, "", s.face_visible});
  }
  return metas;
}

// Full evaluation of trained parameters on the held-out identities.
inline json evaluate_model(const ExperimentConfig& c, const Dataset& ds, const Parameters<float>& params,
                           const EvalOptions& opt = {}) {
  std::vector<Image> images;
  for (std::size_t i : ds.eval_head) images.push_back(ds.samples[i].image);
  const std::size_t head_calls = head_embedding_counter();
  const MatT<float> emb = embed_identity(params, images);
  if (head_embedding_counter() != head_calls) throw std::logic_error("evaluation touched the head embedding");
  const auto metas = eval_metas(ds);
  json rep = evaluate_embeddings(c, metas, emb, opt);
  rep["variant"] = std::string(to_string(params.config.variant));

  // Teacher agreement on face-visible held-out samples.
  double sum = 0, lo = 2;
  std::size_t n = 0;
  for (std::size_t k = 0; k < metas.size(); ++k) {
    if (!metas[k].face_visible) continue;
    const auto t = ds.teacher.embed(metas[k].identity);
    // Plain sequential sum: the teacher vector's alignment varies per call.
    double cs = 0;
    for (std::size_t d = 0; d < t.size(); ++d)
      cs += static_cast<double>(emb(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d))) * t[d];
    sum += cs;
    lo = std::min(lo, cs);
    ++n;
  }
  rep["teacher_alignment"] = {{"mean_cos", n ? sum / n : 0.0}, {"min_cos", n ? lo : 0.0}, {"samples", n}};
  if (!opt.out_dir.empty()) write_text(opt.out_dir / "eval_report.json", report_text(rep));
  return rep;
}

// Reference scores of the teacher itself on the held-out samples (identity-pure).
inline json evaluate_teacher(const ExperimentConfig& c, const Dataset& ds) {
  const auto metas = eval_metas(ds);
  MatT<float> emb(static_cast<Eigen::Index>(metas.size()), ds.teacher.dim());
  for (std::size_t k = 0; k < metas.size(); ++k) {
    const auto t = ds.teacher.embed(metas[k].identity);
    for (int d = 0; d < ds.teacher.dim(); ++d) emb(static_cast<Eigen::Index>(k), d) = t[static_cast<std::size_t>(d)];
  }
  return evaluate_embeddings(c, metas, emb, {{}, "teacher"});
}

// ---------------------------------------------------------------------------
// Ablation.
// ---------------------------------------------------------------------------
struct AblationRow {
  Variant variant;
  json report;
  std::vector<std::string> batch_hashes;
  double max_id_sim_grad = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  bool identical_batches = true;
  bool split_routing_ok = true;
  std::string table_markdown;
  std::string table_csv;
};

inline std::string fmt(const json& v, const char* f = "%.4f") {
  if (v.is_null()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, f, v.get<double>());
  return buf;
}

inline AblationResult run_ablation(const ExperimentConfig& base, const Dataset& ds, const fs::path& out_dir = {},
                                   bool verbose = false) {
  AblationResult res;
  for (Variant v : kAllVariants) {
    ExperimentConfig c = base;
    c.encoder.variant = v;
    const fs::path dir = out_dir.empty() ? fs::path() : out_dir / std::string(to_string(v));
    if (!dir.empty()) fs::create_directories(dir);
    if (verbose) std::fprintf(stderr, "ablation: training %s\n", std::string(to_string(v)).c_str());
    const TrainOutcome t = train(c, ds, {dir, std::nullopt, verbose});
    AblationRow row{v, evaluate_model(c, ds, t.params, {dir, std::string(to_string(v))}), {}, 0.0};
    for (const auto& rec : t.log) {
      row.batch_hashes.push_back(rec.at("batch_hash").get<std::string>());
      row.max_id_sim_grad = std::max(row.max_id_sim_grad, rec.at("id_sim_grad_norm").get<double>());
    }
    res.rows.push_back(std::move(row));
  }
  for (const auto& r : res.rows) {
    if (r.batch_hashes != res.rows.front().batch_hashes) res.identical_batches = false;
    if (r.variant == Variant::dual_head_split && r.max_id_sim_grad != 0.0) res.split_routing_ok = false;
  }

  auto cls_count = [](Variant v) { return v == Variant::dual_cls ? 2 : 1; };
  auto loss_on_id = [](Variant v) {
    switch (v) {
      case Variant::shared: return "align+sim";
      case Variant::dual_head_split: return "align";
      default: return "align+sim";
    }
  };
  std::ostringstream md, csv;
  md << "| Model | #CLS | Loss on ID | VR@1e-2 | VR@1e-3 | VR@1e-4 | AUC | Ordering | Teacher cos |\n";
  md << "|---|---|---|---|---|---|---|---|---|\n";
  csv << "# " << provenance_comment(base) << "\n";
  csv << "model,num_cls,loss_on_id,vr_1e-2,vr_1e-3,vr_1e-4,auc,ordering_satisfaction,teacher_cos\n";
  for (const auto& r : res.rows) {
    const json& p = r.report["protocols"]["appearance"];
    const std::string name(to_string(r.variant));
    const std::string cells[] = {fmt(p["vr@1e-02"]), fmt(p["vr@1e-03"]), fmt(p["vr@1e-04"]), fmt(p["auc"]),
                                 fmt(r.report["ordering_satisfaction"]),
                                 fmt(r.report["teacher_alignment"]["mean_cos"])};
    md << "| " << name << " | " << cls_count(r.variant) << " | " << loss_on_id(r.variant);
    csv << name << "," << cls_count(r.variant) << "," << loss_on_id(r.variant);
    for (const auto& cell : cells) {
      md << " | " << cell;
      csv << "," << cell;
    }
    md << " |\n";
    csv << "\n";
  }
  res.table_markdown = md.str();
  res.table_csv = csv.str();
  if (!out_dir.empty()) {
    write_text(out_dir / "ablation.md", "<!-- " + provenance_comment(base) + " -->\n" + res.table_markdown);
    write_text(out_dir / "ablation.csv", res.table_csv);
    json summary = {{"config_hash", config_hash(base)},
                    {"seed", base.seed},
                    {"identical_batches", res.identical_batches},
                    {"split_routing_ok", res.split_routing_ok}};
    for (const auto& r : res.rows) summary["variants"][std::string(to_string(r.variant))] = r.report;
    write_text(out_dir / "ablation.json", report_text(summary));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

// Writes the world (PPM images, PGM masks, manifest) and its frame stream.
inline json cmd_synth(const ExperimentConfig& c, const fs::path& out) {
  c.validate();
  const World world = generate_world(c.world);
  fs::create_directories(out / "images");
  fs::create_directories(out / "masks");
  const std::string comment = provenance_comment(c);
  for (const auto& s : world.samples) {
    write_ppm(out / "images" / (s.sample_id + ".ppm"), s.image, comment);
    write_pgm(out / "masks" / (s.sample_id + ".pgm"), s.head_mask, comment);
  }
  write_manifest(out / "manifest.jsonl", provenance(c, "manifest"), world.manifest);
  const auto frames = generate_video_frames(world, c.video);
  std::vector<json> rows;
  rows.reserve(frames.size());
  for (const auto& f : frames) rows.push_back(to_json(f));
  write_jsonl(out / "frames.jsonl", provenance(c, "frames"), rows);
  write_text(out / "config.json", report_text(config_to_json(c)));

  std::size_t visible = 0;
  for (const auto& s : world.samples) visible += s.face_visible;
  json summary = {{"config_hash", config_hash(c)},
                  {"seed", c.seed},
                  {"samples", world.samples.size()},
                  {"head_samples", c.world.head_sample_count()},
                  {"face_pool_samples", world.samples.size() - c.world.head_sample_count()},
                  {"face_visible", visible},
                  {"frames", frames.size()}};
  write_text(out / "world_summary.json", report_text(summary));
  return summary;
}

struct PipelineRun {
  PipelineResult result;
  std::optional<double> pair_agreement;  // induced vs. true relations over emitted samples
};

// Fraction of sample pairs whose induced relation equals the true one.
inline std::optional<double> relation_agreement(std::span<const SampleMeta> induced,
                                                const std::map<std::string, std::pair<int, int>>& truth) {
  std::vector<std::pair<int, int>> t;
  for (const auto& m : induced) {
    const auto it = truth.find(m.sample_id);
    if (it == truth.end()) return std::nullopt;
    t.push_back(it->second);
  }
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < induced.size(); ++i)
    for (std::size_t j = i + 1; j < induced.size(); ++j) {
      const Relation a = relation_of(induced[i], induced[j]);
      const Relation b = relation_from_labels(t[i].first, t[i].second, t[j].first, t[j].second);
      agree += a == b;
      ++total;
    }
  if (total == 0) return std::nullopt;
  return static_cast<double>(agree) / static_cast<double>(total);
}

// Runs the weak-labeling pipeline over a frame stream; best faces are embedded
// with the teacher (the face-recognition model stand-in).
inline PipelineRun run_pipeline_on_frames(const ExperimentConfig& c, std::span<const FrameRecord> frames) {
  const OracleTeacher teacher(c.world.seed, c.world.total_identities(), c.world.teacher_dim);
  std::map<std::string, int> identity_of;
  std::map<std::string, std::pair<int, int>> truth;
  for (const auto& f : frames)
    for (const auto& d : f.detections) {
      if (d.truth_identity) identity_of[d.sample_id] = *d.truth_identity;
      if (d.truth_identity && d.truth_appearance) truth[d.sample_id] = {*d.truth_identity, *d.truth_appearance};
    }
  FaceEmbedder embed = [&](const TrackSegment&, const TrackFrame& f) {
    const auto it = identity_of.find(f.sample_id);
    if (it == identity_of.end()) throw std::runtime_error("pipeline: no face crop available for " + f.sample_id);
    return teacher.embed(it->second);
  };
  PipelineRun run;
  run.result = run_pipeline(frames, embed, c.pipeline);
  run.pair_agreement = relation_agreement(run.result.samples, truth);
  return run;
}

inline const char* kPipelineStages[] = {"shots", "tracks", "filter", "cluster", "relations"};

inline json cmd_pipeline(const ExperimentConfig& c, const fs::path& frames_path, const fs::path& out,
                         const std::string& stage = "relations") {
  if (std::find(std::begin(kPipelineStages), std::end(kPipelineStages), stage) == std::end(kPipelineStages))
    throw std::invalid_argument("unknown pipeline stage '" + stage + "'");
  std::vector<FrameRecord> frames;
  for (const auto& j : read_jsonl(frames_path)) frames.push_back(frame_from_json(j));
  const PipelineRun run = run_pipeline_on_frames(c, frames);
  const PipelineResult& r = run.result;
  fs::create_directories(out);

  std::vector<json> shots;
  for (const auto& s : r.shots)
    shots.push_back({{"video_id", s.video_id}, {"start_frame", s.start_frame}, {"end_frame", s.end_frame}});
  write_jsonl(out / "shots.jsonl", provenance(c, "shots"), shots);
  auto seg_json = [](const TrackSegment& s) {
    json frames_j = json::array();
    for (const auto& f : s.frames)
      frames_j.push_back({{"frame_index", f.frame_index},
                          {"head_box", box_to_json(f.head_box)},
                          {"face_box", f.face_box ? box_to_json(*f.face_box) : json(nullptr)},
                          {"sample_id", f.sample_id}});
    return json{{"segment_id", s.segment_id}, {"video_id", s.video_id}, {"shot_id", s.shot_id},
                {"length", s.length()}, {"face_visible_count", s.face_visible_count}, {"frames", frames_j}};
  };
  const auto stage_at = [&](const char* s) {
    return std::find(std::begin(kPipelineStages), std::end(kPipelineStages), stage) >=
           std::find(std::begin(kPipelineStages), std::end(kPipelineStages), std::string(s));
  };
  if (stage_at("tracks")) {
    std::vector<json> tracks;
    for (const auto& t : r.tracks) tracks.push_back(seg_json(t));
    write_jsonl(out / "tracks.jsonl", provenance(c, "tracks"), tracks);
  }
  if (stage_at("filter")) {
    std::vector<json> segs;
    for (const auto& k : r.kept) {
      json j = seg_json(k.segment);
      j["best_face_frame"] = k.best_face_frame ? json(*k.best_face_frame) : json(nullptr);
      if (stage_at("cluster")) j["cluster_id"] = k.cluster_id ? json(*k.cluster_id) : json(nullptr);
      segs.push_back(std::move(j));
    }
    write_jsonl(out / "segments.jsonl", provenance(c, "segments"), segs);
  }
  if (stage_at("relations")) {
    std::vector<json> samples;
    for (const auto& m : r.samples) samples.push_back(to_json(m));
    write_jsonl(out / "samples.jsonl", provenance(c, "samples"), samples);
  }
  const auto& n = r.counts;
  json rep = {{"config_hash", config_hash(c)},
              {"seed", c.seed},
              {"stage", stage},
              {"counts",
               {{"frames", n.frames}, {"videos", n.videos}, {"shots", n.shots}, {"tracks", n.tracks},
                {"kept", n.kept}, {"with_best_face", n.with_best_face}, {"clusters", n.clusters},
                {"samples", n.samples}}},
              {"warnings", r.warnings},
              {"pair_agreement", optional_json(run.pair_agreement)}};
  write_text(out / "pipeline_report.json", report_text(rep));
  return rep;
}

inline json cmd_eval(const ExperimentConfig& c, const fs::path& checkpoint, const fs::path& out,
                     const std::optional<fs::path>& world_dir = {}) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  ExperimentConfig cc = c;
  cc.encoder = ck.encoder;
  const Dataset ds = make_dataset(cc, world_dir);
  fs::create_directories(out);
  json rep = evaluate_model(cc, ds, checkpoint_parameters(ck), {out, std::string(to_string(ck.encoder.variant))});
  rep["teacher_reference"] = evaluate_teacher(cc, ds);
  write_text(out / "eval_report.json", report_text(rep));
  return rep;
}

// Overlays several ROC CSVs written by cmd_eval into one SVG.
inline void cmd_plot_roc(const std::vector<fs::path>& csvs, const fs::path& out_svg, const std::string& title) {
  std::vector<RocCurve> curves;
  for (const auto& p : csvs) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    RocCurve c;
    c.label = p.parent_path().filename().string() + "/" + p.stem().string();
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("threshold", 0) == 0) continue;
      std::istringstream ls(line);
      std::string thr, far, tpr;
      std::getline(ls, thr, ',');
      std::getline(ls, far, ',');
      std::getline(ls, tpr, ',');
      c.far.push_back(std::stod(far));
      c.tpr.push_back(std::stod(tpr));
    }
    curves.push_back(std::move(c));
  }
  write_text(out_svg, roc_svg(curves, title));
}

}  // namespace headsim
