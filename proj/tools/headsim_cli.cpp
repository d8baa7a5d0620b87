// headsim command-line entry point.
//
//   headsim synth     --config c.json --out runs/world
//   headsim pipeline  --frames runs/world/frames.jsonl --out runs/pipeline
//   headsim train     --world runs/world --out runs/train
//   headsim eval      --checkpoint runs/train/checkpoints/latest.ckpt --out runs/eval
//   headsim ablate    --out runs/ablate
//   headsim plot-roc  a/roc_appearance.csv b/roc_appearance.csv --out roc.svg
//
// Settings resolve as flags > config file > built-in defaults. The default
// output root comes from HEADSIM_OUT (falling back to ./runs).

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "headsim/headsim.hpp"

namespace {

using namespace headsim;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
  std::string protocol;
  std::string margins;
  std::string checkpoint;
  std::string stage = "relations";
  std::string world;
  std::string frames;
  std::string resume;
  std::string labels;
  std::optional<int> epochs;
  std::optional<long> max_steps;
  std::vector<std::string> inputs;
  bool verbose = false;
};

Margins parse_margins(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (v.size() != 3) throw std::invalid_argument("--margins expects m1,m2,m3");
  Margins m{v[0], v[1], v[2]};
  m.validate();
  return m;
}

ExperimentConfig resolve_config(const Flags& f) {
  ExperimentConfig c = default_config();
  if (!f.config.empty()) c = config_from_json(json::parse(read_text(f.config)), c);
  if (f.seed) c.seed = *f.seed;
  if (!f.variant.empty()) c.encoder.variant = parse_variant(f.variant);
  if (!f.margins.empty()) c.margins = parse_margins(f.margins);
  if (!f.labels.empty()) c.train.labels_path = f.labels;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.max_steps) c.train.max_steps = *f.max_steps;
  c.resolve();
  c.validate();
  return c;
}

fs::path output_dir(const Flags& f, const ExperimentConfig& c, const std::string& verb) {
  if (!f.out.empty()) return f.out;
  if (!c.output_dir.empty()) return fs::path(c.output_dir) / verb;
  const char* env = std::getenv("HEADSIM_OUT");
  return fs::path(env && *env ? env : "runs") / verb;
}

std::optional<fs::path> world_dir(const Flags& f) {
  if (f.world.empty()) return std::nullopt;
  return fs::path(f.world);
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

int run(const std::string& verb, const Flags& f) {
  if (verb == "plot-roc") {
    if (f.inputs.empty()) throw std::invalid_argument("plot-roc needs at least one ROC CSV");
    const fs::path out = f.out.empty() ? fs::path("roc.svg") : fs::path(f.out);
    cmd_plot_roc({f.inputs.begin(), f.inputs.end()}, out, f.protocol.empty() ? "ROC" : f.protocol + " protocol ROC");
    std::cout << out.string() << "\n";
    return 0;
  }
  const ExperimentConfig c = resolve_config(f);
  const fs::path out = output_dir(f, c, verb);
  if (verb == "synth") {
    print(cmd_synth(c, out));
  } else if (verb == "pipeline") {
    fs::path frames = f.frames;
    if (frames.empty()) {
      if (f.world.empty()) throw std::invalid_argument("pipeline needs --frames or --world");
      frames = fs::path(f.world) / "frames.jsonl";
    }
    print(cmd_pipeline(c, frames, out, f.stage));
  } else if (verb == "train") {
    const Dataset ds = make_dataset(c, world_dir(f));
    std::optional<fs::path> resume;
    if (!f.resume.empty()) resume = f.resume;
    const TrainOutcome t = train(c, ds, {out, resume, f.verbose});
    json rep = evaluate_model(c, ds, t.params, {out, std::string(to_string(c.encoder.variant))});
    rep["train_steps"] = t.steps;
    print(rep);
  } else if (verb == "eval") {
    if (f.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint");
    json rep = cmd_eval(c, f.checkpoint, out, world_dir(f));
    if (!f.protocol.empty()) {
      const std::string p(to_string(parse_protocol(f.protocol)));
      print(rep["protocols"][p]);
    } else {
      print(rep);
    }
  } else if (verb == "ablate") {
    fs::create_directories(out);
    const Dataset ds = make_dataset(c, world_dir(f));
    const AblationResult r = run_ablation(c, ds, out, f.verbose);
    std::cout << r.table_markdown;
    std::cout << "identical_batches=" << (r.identical_batches ? "true" : "false")
              << " split_routing_ok=" << (r.split_routing_ok ? "true" : "false") << "\n";
    return r.identical_batches && r.split_routing_ok ? 0 : 3;
  } else {
    throw std::invalid_argument("unknown command '" + verb + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"headsim: hierarchical head-similarity experiments"};
  app.require_subcommand(1);
  Flags f;
  const char* verbs[][2] = {{"synth", "render a synthetic world and its frame stream"},
                            {"pipeline", "induce relation labels from a frame stream"},
                            {"train", "train an encoder and evaluate it on held-out identities"},
                            {"eval", "evaluate a checkpoint"},
                            {"ablate", "train and evaluate all four encoder variants"},
                            {"plot-roc", "overlay ROC CSV files into one SVG"}};
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v[0], v[1]);
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--out", f.out, "output directory (plot-roc: SVG path)");
    sub->add_option("--variant", f.variant, "shared | dual_head_split | dual_head_both | dual_cls");
    sub->add_option("--protocol", f.protocol, "identity | appearance");
    sub->add_option("--margins", f.margins, "m1,m2,m3");
    sub->add_option("--checkpoint", f.checkpoint, "checkpoint file");
    sub->add_option("--stage", f.stage, "pipeline stage to stop at: shots | tracks | filter | cluster | relations");
    sub->add_option("--world", f.world, "world directory written by synth");
    sub->add_option("--frames", f.frames, "frames.jsonl for pipeline");
    sub->add_option("--resume", f.resume, "checkpoint to resume training from");
    sub->add_option("--labels", f.labels, "samples.jsonl with induced labels for training");
    sub->add_option("--epochs", f.epochs, "override train.epochs");
    sub->add_option("--max-steps", f.max_steps, "cap on optimizer steps");
    sub->add_flag("-v,--verbose", f.verbose, "progress on stderr");
    if (std::string(v[0]) == "plot-roc") sub->add_option("inputs", f.inputs, "ROC CSV files");
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return run(app.get_subcommands().front()->get_name(), f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
