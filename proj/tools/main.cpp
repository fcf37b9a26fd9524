#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bevprompt/errors.hpp"
#include "bevprompt/fusion.hpp"
#include "bevprompt/grouping.hpp"
#include "bevprompt/io.hpp"
#include "bevprompt/metrics.hpp"
#include "bevprompt/numerics/serialize.hpp"
#include "bevprompt/prompt.hpp"
#include "bevprompt/synth.hpp"
#include "bevprompt/toytrain.hpp"
#include "bevprompt/yawtune.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bevprompt;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  int threads = 1;
};

std::string fnv1a(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::optional<std::uint64_t> seed_override() {
  const char* env = std::getenv("BEVPROMPT_SEED");
  if (!env || !*env) return std::nullopt;
  char* end = nullptr;
  const auto v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError("BEVPROMPT_SEED must be an unsigned integer");
  return v;
}

class Manifest {
 public:
  Manifest(std::string subcommand, const Globals& g) : subcommand_(std::move(subcommand)), threads_(g.threads) {}

  void input(const std::string& role, const fs::path& path) {
    inputs_[role] = {{"path", path.string()}, {"fnv1a64", fnv1a(path)}};
  }
  void config(json c) { config_ = std::move(c); }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const fs::path& path) const {
    json j{{"tool", "bevprompt"},
           {"version", kVersion},
           {"subcommand", subcommand_},
           {"config", config_},
           {"inputs", inputs_},
           {"seed", seed_ ? json(*seed_) : json(nullptr)},
           {"threads", threads_},
           {"timestamp", timestamp()}};
    write_json(path, j);
  }

 private:
  std::string subcommand_;
  int threads_;
  json config_ = json::object();
  json inputs_ = json::object();
  std::optional<std::uint64_t> seed_;
};

fs::path manifest_beside(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

json read_config(const std::string& path, Manifest& m) {
  if (path.empty()) return json::object();
  m.input("config", path);
  return read_json(path);
}

std::map<int, std::vector<std::size_t>> by_frame(const auto& objects) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < objects.size(); ++i) out[objects[i].frame].push_back(i);
  return out;
}

grouping::ClassGrouping load_grouping(const json& cfg, const std::string& grouping_file) {
  if (!grouping_file.empty()) return grouping::ClassGrouping::from_json(read_json(grouping_file));
  return grouping::builtin_grouping(cfg.value("grouping", std::string("functionality")));
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
};

void run_synth(const SynthArgs& a, const Globals& g) {
  Manifest m("synth-gen", g);
  json cfg = read_config(a.config, m);
  synth::SceneConfig scene = synth::SceneConfig::from_json(cfg.value("scene", json::object()));
  synth::DetectorNoise noise = synth::DetectorNoise::from_json(cfg.value("detector", json::object()));
  std::uint64_t detector_seed = cfg.value("detector_seed", std::uint64_t{101});
  if (const auto s = seed_override()) {
    scene.seed = *s;
    detector_seed = derive_seed(*s, 0xde7);
  }
  m.config({{"scene", scene.to_json()}, {"detector", noise.to_json()}, {"detector_seed", detector_seed}});
  m.seed(scene.seed);

  const auto scenes = synth::gen_dataset(scene, g.threads);
  std::vector<Object3D> gt, det3d;
  std::vector<Object2D> det2d;
  for (const auto& s : scenes) {
    gt.insert(gt.end(), s.objects.begin(), s.objects.end());
    const auto d3 = synth::simulate_3d_detector(s, noise, detector_seed);
    det3d.insert(det3d.end(), d3.begin(), d3.end());
    const auto d2 = synth::simulate_2d_detector(s, noise, detector_seed);
    det2d.insert(det2d.end(), d2.begin(), d2.end());
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(out / "calib.json", to_json(scenes.front().calib));
  write_objects3d(out / "gt.jsonl", gt);
  write_objects3d(out / "det3d.jsonl", det3d);
  write_objects2d(out / "det2d.jsonl", det2d);
  m.write(out / "manifest.json");
}

struct Derive2dArgs {
  std::string gt, calib, out;
};

void run_derive_2d(const Derive2dArgs& a, const Globals& g) {
  Manifest m("derive-2d", g);
  m.input("gt", a.gt);
  m.input("calib", a.calib);
  const auto calib = calib_from_json(read_json(a.calib));
  write_objects2d(a.out, synth::derive_2d(read_objects3d(a.gt), calib));
  m.write(manifest_beside(a.out));
}

struct TuneArgs {
  std::string det3d, det2d, calib, config, grouping, out, report;
};

void run_tune_yaw(const TuneArgs& a, const Globals& g) {
  Manifest m("tune-yaw", g);
  m.input("det3d", a.det3d);
  m.input("det2d", a.det2d);
  m.input("calib", a.calib);
  const json raw = read_config(a.config, m);
  const auto cfg = yawtune::YawTuneConfig::from_json(raw);
  if (!a.grouping.empty()) m.input("grouping", a.grouping);
  const auto groups = load_grouping(raw, a.grouping);
  m.config({{"yaw_tune", cfg.to_json()}, {"grouping", groups.to_json()}});

  const auto calib = calib_from_json(read_json(a.calib));
  std::vector<Object3D> det3d = read_objects3d(a.det3d);
  const std::vector<Object2D> det2d = read_objects2d(a.det2d);
  const auto boxes_by_frame = by_frame(det2d);
  json pairs = json::array();
  for (const auto& [frame, idx] : by_frame(det3d)) {
    std::vector<geom::Cuboid3D> cuboids;
    for (std::size_t i : idx) cuboids.push_back(det3d[i].box);
    std::vector<geom::Box2D> boxes;
    if (const auto it = boxes_by_frame.find(frame); it != boxes_by_frame.end()) {
      for (std::size_t i : it->second) boxes.push_back(det2d[i].box);
    }
    const auto result = yawtune::tune_frame(cuboids, boxes, calib, cfg, groups);
    for (std::size_t k = 0; k < idx.size(); ++k) det3d[idx[k]].box = result.cuboids[k];
    for (const auto& p : result.pairs) {
      pairs.push_back({{"frame", frame},
                       {"det3d_line", idx[p.cuboid] + 1},
                       {"det2d_line", boxes_by_frame.at(frame)[p.box] + 1},
                       {"yaw_before", p.yaw_before},
                       {"yaw_after", p.yaw_after},
                       {"iou_before", p.iou_before},
                       {"iou_after", p.iou_after}});
    }
  }
  write_objects3d(a.out, det3d);
  if (!a.report.empty()) write_json(a.report, {{"pairs", pairs}});
  m.write(manifest_beside(a.out));
}

struct TrainArgs {
  std::string config, data, out;
};

toytrain::TrainConfig train_config(const json& raw) {
  toytrain::TrainConfig cfg = toytrain::TrainConfig::from_json(raw);
  if (const auto s = seed_override()) {
    cfg.reseed(*s);
  }
  return cfg;
}

void run_train(const TrainArgs& a, const Globals& g) {
  Manifest m("train", g);
  const toytrain::TrainConfig cfg = train_config(read_config(a.config, m));
  m.config(cfg.to_json());
  m.seed(cfg.seed);
  toytrain::Dataset data;
  if (!a.data.empty()) {
    const fs::path dir(a.data);
    m.input("gt", dir / "gt.jsonl");
    m.input("det2d", dir / "det2d.jsonl");
    m.input("calib", dir / "calib.json");
    const auto calib = calib_from_json(read_json(dir / "calib.json"));
    std::map<int, synth::Scene> scenes;
    for (Object3D& o : read_objects3d(dir / "gt.jsonl")) {
      auto& s = scenes[o.frame];
      s.frame = o.frame;
      s.calib = calib;
      s.objects.push_back(std::move(o));
    }
    std::map<int, std::vector<Object2D>> predicted;
    for (Object2D& d : read_objects2d(dir / "det2d.jsonl")) predicted[d.frame].push_back(std::move(d));
    std::vector<synth::Scene> list;
    for (auto& [f, s] : scenes) list.push_back(std::move(s));
    data = toytrain::assemble_dataset(list, predicted, cfg);
  } else {
    data = toytrain::build_dataset(cfg, g.threads);
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  const auto report = toytrain::train_toy(data, cfg, out / "checkpoint");
  json j = report.to_json();
  j["checkpoint"] = "checkpoint";
  write_json(out / "report.json", j);
  m.write(out / "manifest.json");
}

struct EvalArgs {
  std::string gt, det3d, det2d, gt2d, calib, config, grouping, report, pr_csv;
};

void run_eval(const EvalArgs& a, const Globals& g) {
  Manifest m("eval", g);
  m.input("gt", a.gt);
  const json raw = read_config(a.config, m);
  const auto cfg = metrics::EvalConfig::from_json(raw);
  if (!a.grouping.empty()) m.input("grouping", a.grouping);
  const auto groups = a.grouping.empty() ? grouping::builtin_grouping(cfg.grouping)
                                         : grouping::ClassGrouping::from_json(read_json(a.grouping));
  m.config({{"eval", cfg.to_json()}, {"grouping", groups.to_json()}});

  const std::vector<Object3D> gt = read_objects3d(a.gt);
  std::vector<Object3D> det3d;
  if (!a.det3d.empty()) {
    m.input("det3d", a.det3d);
    det3d = read_objects3d(a.det3d);
  }
  std::optional<geom::CameraCalib> calib;
  if (!a.calib.empty()) {
    m.input("calib", a.calib);
    calib = calib_from_json(read_json(a.calib));
  }
  std::vector<Object2D> det2d, gt2d;
  if (!a.det2d.empty()) {
    m.input("det2d", a.det2d);
    det2d = read_objects2d(a.det2d);
    if (!a.gt2d.empty()) {
      m.input("gt2d", a.gt2d);
      gt2d = read_objects2d(a.gt2d);
    } else {
      if (!calib) throw ConfigError("eval: --det2d needs --gt2d or --calib to derive 2D ground truth");
      gt2d = synth::derive_2d(gt, *calib);
    }
  }
  const metrics::EvalInputs inputs{gt, det3d, gt2d, det2d, calib ? &*calib : nullptr};
  const auto report = metrics::evaluate(inputs, cfg, groups);
  write_json(a.report, report.to_json());
  if (!a.pr_csv.empty()) report.write_pr_csv(a.pr_csv, cfg.bev_points);
  m.write(manifest_beside(a.report));
}

struct SweepArgs {
  std::string config, out;
  std::vector<double> levels;
  std::vector<std::uint64_t> seeds;
};

void run_sweep(const SweepArgs& a, const Globals& g) {
  Manifest m("sweep", g);
  json raw = read_config(a.config, m);
  std::vector<double> levels = a.levels;
  if (levels.empty()) levels = raw.value("levels", std::vector<double>{0.0, 4.0, 8.0, 16.0, 32.0});
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds = raw.value("seeds", std::vector<std::uint64_t>{1, 2, 3});
  if (const auto s = seed_override()) seeds = {*s};
  raw.erase("levels");
  raw.erase("seeds");
  const auto cfg = train_config(raw);
  json resolved = cfg.to_json();
  resolved["levels"] = levels;
  resolved["seeds"] = seeds;
  m.config(resolved);
  const auto report = toytrain::sweep_prompt_quality(levels, cfg, seeds, g.threads);
  write_json(a.out, report.to_json());
  m.write(manifest_beside(a.out));
}

struct FuseArgs {
  std::string weights, input, out;
};

void run_fuse_trace(const FuseArgs& a, const Globals& g) {
  Manifest m("fuse-trace", g);
  const fs::path dir(a.weights);
  m.input("manifest", dir / "manifest.json");
  m.input("input", a.input);
  const auto weights = fusion::FusionWeights::load(dir);
  for (const auto& [name, t] : weights.tensors()) m.input(name, dir / (name + ".bptn"));
  m.config(weights.config.to_json());

  const json in = read_json(a.input);
  fusion::ImageFeature image;
  nn::Tensor e;
  try {
    image.features = nn::tensor_from_json(in.at("image").at("features"));
    image.grid_h = in.at("image").at("grid_h").get<int>();
    image.grid_w = in.at("image").at("grid_w").get<int>();
    if (in.contains("e")) {
      e = nn::tensor_from_json(in.at("e"));
    } else {
      const auto pw = prompt::PromptWeights::load(dir);
      const int width = in.at("image_width").get<int>(), height = in.at("image_height").get<int>();
      std::vector<nn::Tensor> rows;
      for (const auto& p : in.at("prompts")) {
        const geom::Box2D box{p.at("x_min").get<double>(), p.at("y_min").get<double>(), p.at("x_max").get<double>(),
                              p.at("y_max").get<double>(), {}, 1.0};
        rows.push_back(prompt::encode_prompt(box, p.at("label").get<std::size_t>(), pw, width, height).e);
      }
      if (rows.empty()) throw EmptyPromptError("fuse-trace: no prompts");
      e = nn::Tensor(static_cast<Eigen::Index>(rows.size() * rows.front().rows()), rows.front().cols());
      for (std::size_t i = 0; i < rows.size(); ++i) e.middleRows(static_cast<Eigen::Index>(i) * rows[i].rows(), rows[i].rows()) = rows[i];
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("fuse-trace input: ") + ex.what());
  }
  const auto trace = fusion::fuse_trace(e, image, weights);
  write_json(a.out, {{"i", nn::tensor_to_json(trace.i)},
                     {"f", nn::tensor_to_json(trace.f)},
                     {"g", nn::tensor_to_json(trace.g)},
                     {"h", nn::tensor_to_json(trace.h)},
                     {"j", nn::tensor_to_json(trace.j)}});
  m.write(manifest_beside(a.out));
}

struct BenchArgs {
  std::string config, out;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

void run_bench_prompts(const BenchArgs& a, const Globals& g) {
  Manifest m("bench prompts", g);
  const auto base = train_config(read_config(a.config, m));
  json resolved = base.to_json();
  resolved["seeds"] = a.seeds;
  m.config(resolved);

  std::ostringstream table;
  table << "| seed | prompted (pred) depth MAE | prompted (grnd) depth MAE | baseline depth MAE | gain vs baseline |\n";
  table << "|---:|---:|---:|---:|---:|\n";
  json rows = json::array();
  for (std::uint64_t seed : a.seeds) {
    toytrain::TrainConfig cfg = base;
    cfg.reseed(seed);
    cfg.prompt_source = toytrain::PromptSource::Predicted;
    const auto pred = toytrain::train_toy(cfg, {}, g.threads);
    cfg.prompt_source = toytrain::PromptSource::GroundTruth;
    const auto grnd = toytrain::train_toy(cfg, {}, g.threads);
    const double p = pred.prompted.final_val.depth_mae, gt = grnd.prompted.final_val.depth_mae;
    const double b = pred.baseline.final_val.depth_mae;
    char line[256];
    std::snprintf(line, sizeof(line), "| %llu | %.4f | %.4f | %.4f | %.1f%% |\n", static_cast<unsigned long long>(seed), p,
                  gt, b, 100.0 * (b - p) / b);
    table << line;
    rows.push_back({{"seed", seed}, {"prompted_pred", p}, {"prompted_grnd", gt}, {"baseline", b}});
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    write_json(a.out, {{"rows", rows}});
    m.write(manifest_beside(a.out));
  }
}

int error_exit(const char* kind, int code, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompted roadside monocular 3D detection toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads for per-frame work")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", kVersion);

  SynthArgs synth_args;
  auto add_synth = [&](CLI::App* cmd) {
    cmd->add_option("--config", synth_args.config, "Scene and detector config JSON");
    cmd->add_option("--out", synth_args.out, "Output directory")->required();
  };
  auto* synth_gen = app.add_subcommand("synth-gen", "Generate synthetic scenes and simulated detections");
  add_synth(synth_gen);
  auto* synth_group = app.add_subcommand("synth", "Synthetic data");
  auto* synth_gen_alias = synth_group->add_subcommand("gen", "Same as synth-gen");
  synth_group->require_subcommand(1);
  add_synth(synth_gen_alias);

  Derive2dArgs derive_args;
  auto* derive = app.add_subcommand("derive-2d", "Project 3D ground truth to 2D boxes");
  derive->add_option("--gt", derive_args.gt, "3D objects JSON-lines")->required();
  derive->add_option("--calib", derive_args.calib, "Calibration JSON")->required();
  derive->add_option("--out", derive_args.out, "Output 2D JSON-lines")->required();

  TuneArgs tune_args;
  auto* tune = app.add_subcommand("tune-yaw", "Refine 3D yaw against matched 2D boxes");
  tune->add_option("--det3d", tune_args.det3d, "3D detections JSON-lines")->required();
  tune->add_option("--det2d", tune_args.det2d, "2D detections JSON-lines")->required();
  tune->add_option("--calib", tune_args.calib, "Calibration JSON")->required();
  tune->add_option("--config", tune_args.config, "Yaw tuning config JSON");
  tune->add_option("--grouping", tune_args.grouping, "Grouping definition JSON");
  tune->add_option("--out", tune_args.out, "Refined 3D detections JSON-lines")->required();
  tune->add_option("--report", tune_args.report, "Per-pair report JSON");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the toy prompted model and its baseline");
  train->add_option("--config", train_args.config, "Training config JSON");
  train->add_option("--data", train_args.data, "synth-gen output directory (default: generate from config)");
  train->add_option("--out", train_args.out, "Output directory")->required();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate detections");
  eval->add_option("--gt", eval_args.gt, "3D ground truth JSON-lines")->required();
  eval->add_option("--det3d", eval_args.det3d, "3D detections JSON-lines");
  eval->add_option("--det2d", eval_args.det2d, "2D detections JSON-lines");
  eval->add_option("--gt2d", eval_args.gt2d, "2D ground truth JSON-lines (default: projected 3D ground truth)");
  eval->add_option("--calib", eval_args.calib, "Calibration JSON");
  eval->add_option("--config", eval_args.config, "Evaluation config JSON");
  eval->add_option("--grouping", eval_args.grouping, "Grouping definition JSON");
  eval->add_option("--report", eval_args.report, "Report JSON")->required();
  eval->add_option("--pr-csv", eval_args.pr_csv, "Directory for PR-curve CSVs");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Prompt-quality sweep");
  sweep->add_option("--config", sweep_args.config, "Training config JSON (optional \"levels\")");
  sweep->add_option("--levels", sweep_args.levels, "2D jitter levels in pixels");
  sweep->add_option("--seeds", sweep_args.seeds, "Seeds averaged per level");
  sweep->add_option("--out", sweep_args.out, "Sweep report JSON")->required();

  FuseArgs fuse_args;
  auto* fuse = app.add_subcommand("fuse-trace", "Dump the per-step fusion tensors");
  fuse->add_option("--weights", fuse_args.weights, "Fusion weights directory")->required();
  fuse->add_option("--input", fuse_args.input, "Input JSON")->required();
  fuse->add_option("--out", fuse_args.out, "Trace JSON")->required();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* bench_prompts = bench->add_subcommand("prompts", "Prompted vs baseline comparison as a markdown table");
  bench_prompts->add_option("--config", bench_args.config, "Training config JSON");
  bench_prompts->add_option("--seeds", bench_args.seeds, "Seeds");
  bench_prompts->add_option("--out", bench_args.out, "Results JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("schema", 2, e.what());
  }

  try {
    if (*synth_gen || *synth_gen_alias) run_synth(synth_args, g);
    if (*derive) run_derive_2d(derive_args, g);
    if (*tune) run_tune_yaw(tune_args, g);
    if (*train) run_train(train_args, g);
    if (*eval) run_eval(eval_args, g);
    if (*sweep) run_sweep(sweep_args, g);
    if (*fuse) run_fuse_trace(fuse_args, g);
    if (*bench_prompts) run_bench_prompts(bench_args, g);
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Schema:
        return error_exit("schema", 2, e.what());
      case ErrorKind::Numeric:
        return error_exit("numeric", 3, e.what());
      case ErrorKind::Io:
        return error_exit("io", 4, e.what());
    }
  } catch (const json::exception& e) {
    return error_exit("schema", 2, e.what());
  } catch (const fs::filesystem_error& e) {
    return error_exit("io", 4, e.what());
  } catch (const std::exception& e) {
    return error_exit("internal", 1, e.what());
  }
  return 0;
}
