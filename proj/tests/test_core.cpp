// Shared primitives, file formats, configuration, checkpoints and optimizer.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "headsim/headsim.hpp"

using namespace headsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("headsim_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Seeds, DeriveSeedIsDeterministicAndTagSensitive) {
  EXPECT_EQ(derive_seed(7, "a", 1, 2, 3), derive_seed(7, "a", 1, 2, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t root : {0ULL, 1ULL})
    for (const char* tag : {"a", "b"})
      for (std::uint64_t i = 0; i < 4; ++i)
        for (std::uint64_t j = 0; j < 4; ++j) seen.insert(derive_seed(root, tag, i, j));
  EXPECT_EQ(seen.size(), 2u * 2u * 16u);
}

TEST(Seeds, SampleWithoutReplacementIsSortedAndDistinct) {
  Rng rng = make_rng(3, "swr");
  for (std::size_t k : {0u, 1u, 5u, 10u, 12u}) {
    const auto v = sample_without_replacement(10, k, rng);
    EXPECT_EQ(v.size(), std::min<std::size_t>(k, 10));
    EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
    EXPECT_EQ(std::set<std::size_t>(v.begin(), v.end()).size(), v.size());
    for (auto x : v) EXPECT_LT(x, 10u);
  }
}

TEST(Color, HsvRoundTrip) {
  Rng rng = make_rng(1, "hsv");
  for (int i = 0; i < 500; ++i) {
    const double h = uniform(rng), s = uniform(rng, 0.05, 1.0), v = uniform(rng, 0.05, 1.0);
    const auto rgb = hsv_to_rgb(h, s, v);
    const auto back = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
    EXPECT_NEAR(std::remainder(back[0] - h, 1.0), 0.0, 1e-5);
    EXPECT_NEAR(back[1], s, 1e-5);
    EXPECT_NEAR(back[2], v, 1e-5);
  }
}

TEST(Color, Quantize8IsIdempotent) {
  for (float v : {-0.3f, 0.0f, 0.1234f, 0.5f, 0.99f, 1.7f}) {
    const float q = quantize8(v);
    EXPECT_EQ(quantize8(q), q);
    EXPECT_GE(q, 0.0f);
    EXPECT_LE(q, 1.0f);
  }
}

TEST(Hash, Hex64Formatting) {
  EXPECT_EQ(hex64(0), "0000000000000000");
  EXPECT_EQ(hex64(0xdeadbeefULL), "00000000deadbeef");
  EXPECT_NE(fnv1a("a"), fnv1a("b"));
}

TEST(Io, PpmAndPgmRoundTrip) {
  const fs::path dir = scratch("img");
  Image img(7, 5);
  Mask m(7, 5);
  Rng rng = make_rng(2, "img");
  for (auto& v : img.data) v = quantize8(static_cast<float>(uniform(rng)));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) m.set(x, y, (x + y) % 3 == 0);
  write_ppm(dir / "a.ppm", img, "comment line");
  write_pgm(dir / "a.pgm", m, "comment line");
  EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
  EXPECT_EQ(read_pgm(dir / "a.pgm"), m);
}

TEST(Io, JsonlSkipsProvenanceHeader) {
  const fs::path dir = scratch("jsonl");
  write_jsonl(dir / "x.jsonl", {"test", "abc", 9}, {json{{"a", 1}}, json{{"a", 2}}});
  const auto rows = read_jsonl(dir / "x.jsonl");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1]["a"], 2);
  const std::string text = read_text(dir / "x.jsonl");
  EXPECT_NE(text.find("\"config_hash\":\"abc\""), std::string::npos);
}

TEST(Io, ManifestRecordRoundTrip) {
  ManifestRecord r;
  r.sample_id = "h0001_02_003";
  r.image_path = "images/h0001_02_003.ppm";
  r.identity = 1;
  r.appearance = 2;
  r.video_id = "v1_2";
  r.segment_id = "v1_2/s0";
  r.face_visible = true;
  r.face_box = Box{1.5, 2.0, 10.25, 12.0};
  EXPECT_EQ(manifest_record_from_json(to_json(r)), r);
  r.face_visible = false;
  r.face_box.reset();
  r.pool = Pool::face;
  EXPECT_EQ(manifest_record_from_json(to_json(r)), r);
}

TEST(Config, JsonRoundTripPreservesHash) {
  ExperimentConfig c = default_config();
  c.seed = 42;
  c.margins = {0.15, 0.35, 0.25};
  c.encoder.variant = Variant::dual_head_both;
  c.train.mining = MiningMode::random;
  c.optimizer.schedule = "cosine";
  c.resolve();
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, OverlayKeepsUnmentionedFields) {
  const ExperimentConfig c = config_from_json(json::parse(R"({"seed": 5, "train": {"epochs": 3}})"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.batch_size, default_config().train.batch_size);
  EXPECT_EQ(c.world.seed, 5u);
  EXPECT_EQ(c.world.teacher_dim, c.encoder.embed_dim);
}

TEST(Config, RejectsUnknownTopLevelKey) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sede": 1})")), std::invalid_argument);
}

TEST(Config, MarginsMustBePositive) {
  ExperimentConfig c = default_config();
  c.margins.m2 = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"margins": [0.1, 0.3]})")), std::invalid_argument);
}

TEST(Config, HashIgnoresOutputDirOnly) {
  ExperimentConfig a = default_config(), b = default_config();
  b.output_dir = "/elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  b.resolve();
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Optimizer, WarmupThenCosine) {
  OptimizerConfig o;
  o.lr = 1e-3;
  o.warmup_steps = 10;
  o.schedule = "cosine";
  o.min_lr_ratio = 0.1;
  EXPECT_NEAR(learning_rate(o, 0, 110), 1e-4, 1e-15);
  EXPECT_NEAR(learning_rate(o, 9, 110), 1e-3, 1e-15);
  EXPECT_NEAR(learning_rate(o, 10, 110), 1e-3, 1e-12);
  EXPECT_NEAR(learning_rate(o, 60, 110), 1e-3 * (0.1 + 0.9 * 0.5), 1e-12);
  EXPECT_NEAR(learning_rate(o, 110, 110), 1e-4, 1e-12);
  o.schedule = "constant";
  EXPECT_EQ(learning_rate(o, 50, 110), 1e-3);
  o.schedule = "bogus";
  EXPECT_THROW(learning_rate(o, 50, 110), std::invalid_argument);
}

TEST(Optimizer, AdamWFirstStepMovesBySignTimesLr) {
  EncoderConfig e;
  e.image_size = 16;
  e.embed_dim = 8;
  e.depth = 1;
  e.num_heads = 2;
  Parameters<float> p(e), g(e);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = (i % 2 ? 1.0f : -2.0f);
  OptimizerConfig o;
  o.weight_decay = 0.0;
  AdamW adam(o, p.size());
  adam.step(p, g, 0.01);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p.values[i], i % 2 ? -0.01f : 0.01f, 1e-6f);
}

TEST(Optimizer, WeightDecayOnlyOnFlaggedTensors) {
  EncoderConfig e;
  e.image_size = 16;
  e.embed_dim = 8;
  e.depth = 1;
  e.num_heads = 2;
  Parameters<float> p(e), g(e);
  std::fill(p.values.begin(), p.values.end(), 1.0f);
  OptimizerConfig o;
  o.weight_decay = 0.5;
  AdamW adam(o, p.size());
  adam.step(p, g, 0.1);
  EXPECT_NEAR(p.mat("block0.qkv.w")(0, 0), 0.95f, 1e-6f);
  EXPECT_EQ(p.row("block0.qkv.b")(0), 1.0f);
  EXPECT_EQ(p.row("norm.g")(0), 1.0f);
}

TEST(Checkpoint, RoundTrip) {
  const fs::path dir = scratch("ckpt");
  EncoderConfig e;
  e.image_size = 16;
  e.embed_dim = 8;
  e.depth = 1;
  e.num_heads = 2;
  e.variant = Variant::dual_head_split;
  const auto p = parameter_init<float>(e, 4);
  Checkpoint c{"{\"seed\":1}", e, 17, 2, {p.values.begin(), p.values.end()}, std::vector<float>(p.size(), 0.5f),
               std::vector<float>(p.size(), 0.25f)};
  save_checkpoint(dir / "x.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.config_json, c.config_json);
  EXPECT_EQ(back.encoder.variant, Variant::dual_head_split);
  EXPECT_EQ(back.encoder.embed_dim, 8);
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.epoch, 2u);
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.adam_m, c.adam_m);
  EXPECT_EQ(back.adam_v, c.adam_v);
}

TEST(Checkpoint, RejectsForeignFile) {
  const fs::path dir = scratch("ckpt_bad");
  write_text(dir / "x.ckpt", "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt"), std::runtime_error);
}

TEST(Plot, SvgHasOneCurvePerInput) {
  const std::string svg = roc_svg({{"a", {0.0, 0.5, 1.0}, {0.0, 0.9, 1.0}}, {"b", {0.0, 1.0}, {0.0, 1.0}}}, "t");
  std::size_t n = 0;
  for (std::size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos) ++n;
  EXPECT_EQ(n, 2u);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
}
