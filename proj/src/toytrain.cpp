#include "bevprompt/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "bevprompt/errors.hpp"
#include "bevprompt/grouping.hpp"
#include "bevprompt/metrics.hpp"
#include "bevprompt/numerics/serialize.hpp"
#include "bevprompt/rng.hpp"

namespace bevprompt::toytrain {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamShuffle = 0x5f1e;
constexpr std::uint64_t kStreamInit = 0x1417;
constexpr std::uint64_t kStreamPrompts = 0x9207;
constexpr std::uint64_t kStreamScene = 0x5ce;
constexpr double kYawReference = std::numbers::pi / 4;
constexpr double kDepthScale = 10.0;

double fold_pi(double a) {
  double r = std::fmod(a + std::numbers::pi / 2, std::numbers::pi);
  if (r < 0) r += std::numbers::pi;
  return r - std::numbers::pi / 2;
}

std::size_t label_index(const std::string& label) {
  const auto& vocab = grouping::dair_vocabulary();
  const auto it = std::find(vocab.begin(), vocab.end(), label);
  if (it == vocab.end()) throw LabelError("unknown label '" + label + "'");
  return static_cast<std::size_t>(it - vocab.begin());
}

const char* source_name(PromptSource s) { return s == PromptSource::Predicted ? "predicted" : "ground_truth"; }

json val_json(const ValMetrics& v) {
  return {{"depth_mae", v.depth_mae}, {"yaw_mae", v.yaw_mae}, {"size_mae", v.size_mae}, {"samples", v.samples}};
}

}  // namespace

void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamWState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adamw_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.push_back(Tensor::Zero(p->rows(), p->cols()));
      state.v.push_back(Tensor::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adamw_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols() ||
        state.m[i].rows() != params[i]->rows() || state.m[i].cols() != params[i]->cols()) {
      throw DimensionError("adamw_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                           nn::shape_string(*params[i]) + " vs gradient " + nn::shape_string(grads[i]));
    }
    if (!nn::all_finite(grads[i])) {
      throw EvaluationError("adamw_step: non-finite gradient for parameter " + std::to_string(i) + " at step " +
                            std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    Tensor& theta = *params[i];
    for (Eigen::Index r = 0; r < theta.rows(); ++r) {
      for (Eigen::Index c = 0; c < theta.cols(); ++c) {
        const double m_hat = m(r, c) / bc1;
        const double v_hat = v(r, c) / bc2;
        theta(r, c) -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta(r, c));
      }
    }
  }
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::standard() {
  TrainConfig c;
  c.scene.frames = 60;
  c.val_frames = 12;
  c.prompt_noise.center_sigma_px = 3.0;
  c.prompt_noise.size_sigma_px = 3.0;
  c.prompt_noise.fn_rate = 0.05;
  c.prompt_noise.fp_rate = 0.05;
  c.prompt_noise.label_confusion = 0.02;
  return c;
}

void TrainConfig::reseed(std::uint64_t new_seed) {
  seed = new_seed;
  scene.seed = derive_seed(new_seed, kStreamScene);
}

void TrainConfig::validate() const {
  if (!(optimizer.lr > 0.0)) throw ConfigError("train config: lr must be positive");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("train config: betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0) || optimizer.weight_decay < 0.0) {
    throw ConfigError("train config: eps must be positive and weight_decay non-negative");
  }
  if (model.d_model < 2 || model.heads < 1 || model.d_model % model.heads != 0) {
    throw ConfigError("train config: d_model must be >= 2 and divisible by heads");
  }
  if (model.fusion_hidden < 1 || model.head_hidden < 1) throw ConfigError("train config: hidden sizes must be >= 1");
  scene.validate();
  prompt_noise.validate();
  if (val_frames < 1 || val_frames >= scene.frames) {
    throw ConfigError("train config: val_frames must leave at least one training frame");
  }
  grouping::builtin_grouping(model.grouping);
}

json TrainConfig::to_json() const {
  return {{"lr", optimizer.lr},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.eps},
          {"weight_decay", optimizer.weight_decay},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"cosine_decay", cosine_decay},
          {"seed", seed},
          {"prompt_source", source_name(prompt_source)},
          {"model",
           {{"d_model", model.d_model},
            {"heads", model.heads},
            {"fusion_hidden", model.fusion_hidden},
            {"head_hidden", model.head_hidden},
            {"residuals", model.residuals},
            {"grouping", model.grouping},
            {"grid", {model.grid_h, model.grid_w}},
            {"positional", model.positional}}},
          {"scene", scene.to_json()},
          {"val_frames", val_frames},
          {"prompt_noise", prompt_noise.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c = standard();
  try {
    c.optimizer.lr = j.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = j.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
    c.seed = j.value("seed", c.seed);
    if (j.contains("prompt_source")) {
      const auto s = j.at("prompt_source").get<std::string>();
      if (s == "predicted") {
        c.prompt_source = PromptSource::Predicted;
      } else if (s == "ground_truth") {
        c.prompt_source = PromptSource::GroundTruth;
      } else {
        throw ConfigError("train config: prompt_source must be 'predicted' or 'ground_truth'");
      }
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      c.model.d_model = m.value("d_model", c.model.d_model);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.fusion_hidden = m.value("fusion_hidden", c.model.fusion_hidden);
      c.model.head_hidden = m.value("head_hidden", c.model.head_hidden);
      c.model.residuals = m.value("residuals", c.model.residuals);
      c.model.grouping = m.value("grouping", c.model.grouping);
      if (m.contains("grid")) {
        c.model.grid_h = m.at("grid").at(0).get<int>();
        c.model.grid_w = m.at("grid").at(1).get<int>();
      }
      c.model.positional = m.value("positional", c.model.positional);
    }
    if (j.contains("scene")) {
      json merged = c.scene.to_json();
      merged.update(j.at("scene"));
      c.scene = synth::SceneConfig::from_json(merged);
    }
    c.val_frames = j.value("val_frames", c.val_frames);
    if (j.contains("prompt_noise")) {
      json merged = c.prompt_noise.to_json();
      merged.update(j.at("prompt_noise"));
      c.prompt_noise = synth::DetectorNoise::from_json(merged);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Tensor make_target(const geom::Cuboid3D& truth, const geom::CameraCalib& calib, const synth::SceneConfig& scene) {
  const auto it = scene.sizes.find(truth.label);
  if (it == scene.sizes.end()) throw LabelError("no size model for '" + truth.label + "'");
  const synth::SizeModel& s = it->second;
  Tensor t(1, 5);
  t << calib.to_camera(truth.center()).z() / kDepthScale, fold_pi(truth.yaw - kYawReference),
      std::log(truth.w / s.w), std::log(truth.h / s.h), std::log(truth.l / s.l);
  return t;
}

namespace {

std::vector<Sample> match_prompts(const std::vector<Object2D>& prompts, const synth::Scene& scene,
                                  const synth::SceneConfig& cfg) {
  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return prompts[a].box.score > prompts[b].box.score; });
  std::vector<std::optional<geom::Box2D>> gt_boxes;
  for (const Object3D& o : scene.objects) {
    try {
      gt_boxes.emplace_back(geom::project_cuboid(scene.calib, o.box, true));
    } catch (const Error&) {
      gt_boxes.emplace_back();
    }
  }
  std::vector<bool> taken(scene.objects.size(), false);
  std::vector<std::pair<std::size_t, Sample>> matched;
  for (std::size_t d : order) {
    long best = -1;
    double best_iou = 0.5;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      if (taken[g] || !gt_boxes[g]) continue;
      const double iou = geom::iou_aabb(prompts[d].box, *gt_boxes[g]);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<long>(g);
        best_iou = iou;
      }
    }
    if (best < 0) continue;
    taken[static_cast<std::size_t>(best)] = true;
    const geom::Cuboid3D& truth = scene.objects[static_cast<std::size_t>(best)].box;
    matched.emplace_back(d, Sample{prompts[d].box, label_index(prompts[d].box.label), truth,
                                   make_target(truth, scene.calib, cfg)});
  }
  // Keep the detector's original order so token layout does not depend on scores.
  std::sort(matched.begin(), matched.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Sample> out;
  for (auto& [d, s] : matched) out.push_back(std::move(s));
  return out;
}

}  // namespace

Dataset assemble_dataset(std::span<const synth::Scene> scenes, const std::map<int, std::vector<Object2D>>& predicted,
                         const TrainConfig& cfg) {
  if (scenes.size() <= static_cast<std::size_t>(cfg.val_frames)) {
    throw DataError("assemble_dataset: " + std::to_string(scenes.size()) + " frames leave none for training");
  }
  std::vector<const synth::Scene*> ordered;
  for (const synth::Scene& s : scenes) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const synth::Scene* a, const synth::Scene* b) { return a->frame < b->frame; });
  const std::size_t first_val = ordered.size() - static_cast<std::size_t>(cfg.val_frames);

  Dataset data;
  data.calib = ordered.front()->calib;
  static const std::vector<Object2D> kNone;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const synth::Scene& scene = *ordered[i];
    FrameData fd;
    fd.frame = scene.frame;
    fd.features =
        synth::render_toy_features(scene.objects, scene.calib, cfg.model.grid_h, cfg.model.grid_w, cfg.model.positional)
            .features;
    const bool val = i >= first_val;
    std::vector<Object2D> prompts;
    if (val || cfg.prompt_source == PromptSource::Predicted) {
      const auto it = predicted.find(scene.frame);
      prompts = it == predicted.end() ? kNone : it->second;
    } else {
      prompts = synth::derive_2d(scene.objects, scene.calib);
    }
    fd.samples = match_prompts(prompts, scene, cfg.scene);
    if (fd.samples.empty()) continue;
    (val ? data.val : data.train).push_back(std::move(fd));
  }
  if (data.train.empty() || data.val.empty()) throw DataError("assemble_dataset: no usable training or validation frame");
  return data;
}

Dataset build_dataset(const TrainConfig& cfg, int threads) {
  cfg.validate();
  const std::vector<synth::Scene> scenes = synth::gen_dataset(cfg.scene, threads);
  const std::uint64_t prompt_seed = derive_seed(cfg.seed, kStreamPrompts);
  std::map<int, std::vector<Object2D>> predicted;
  for (const synth::Scene& scene : scenes) predicted[scene.frame] = synth::simulate_2d_detector(scene, cfg.prompt_noise, prompt_seed);
  return assemble_dataset(scenes, predicted, cfg);
}

// ---------------------------------------------------------------------------

namespace {

fusion::FusionConfig fusion_config(const ModelConfig& cfg, int input_channels) {
  fusion::FusionConfig f;
  f.d_model = cfg.d_model;
  f.input_channels = input_channels;
  f.heads = cfg.heads;
  f.hidden = cfg.fusion_hidden;
  f.residuals = cfg.residuals;
  return f;
}

prompt::PromptConfig prompt_config(const ModelConfig& cfg, std::uint64_t seed) {
  prompt::PromptConfig p;
  p.d_model = cfg.d_model;
  p.seed = derive_seed(seed, kStreamInit, 0);
  p.num_classes = static_cast<int>(grouping::dair_vocabulary().size());
  return p;
}

fusion::HeadConfig head_config(const ModelConfig& cfg) { return {cfg.d_model, cfg.head_hidden, 5}; }

void save_head(const std::filesystem::path& dir, const fusion::HeadWeights& head) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : head.tensors()) nn::save_tensor(dir / (name + ".bptn"), *t);
}

}  // namespace

PromptedModel::PromptedModel(const ModelConfig& cfg, int input_channels, std::uint64_t seed)
    : prompt(prompt_config(cfg, seed)),
      fusion(fusion::FusionWeights::random(fusion_config(cfg, input_channels), derive_seed(seed, kStreamInit, 1))),
      head(fusion::HeadWeights::random(head_config(cfg), derive_seed(seed, kStreamInit, 2))) {}

std::vector<std::pair<std::string, Tensor*>> PromptedModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out{{"prompt.c", &prompt.c_mut()}};
  for (auto& p : fusion.tensors()) out.push_back(p);
  for (auto& p : head.tensors()) out.push_back(p);
  return out;
}

Var PromptedModel::forward(nn::Tape& tape, std::span<const Var> p, const FrameData& frame,
                           const geom::CameraCalib& calib) const {
  std::size_t k = 0;
  const Var c = p[k++];
  const Var b = tape.constant(prompt.b());

  fusion::FusionVars fv;
  fv.config = &fusion.config;
  fv.input_proj = p[k++];
  auto attention = [&] { nn::AttentionVars a{p[k], p[k + 1], p[k + 2], p[k + 3]}; k += 4; return a; };
  fv.self_attn = attention();
  fv.prompt_to_image = attention();
  fv.mlp = {p[k], p[k + 1], p[k + 2], p[k + 3]};
  k += 4;
  fv.final_attn = attention();
  for (auto& norm : fv.norms) {
    norm = {p[k], p[k + 1]};
    k += 2;
  }
  const fusion::HeadVars hv{p[k], p[k + 1], p[k + 2], p[k + 3], p[k + 4]};

  std::vector<Var> tokens;
  for (const Sample& s : frame.samples) {
    tokens.push_back(prompt::encode_prompt(b, c, prompt::normalize_box(s.prompt, calib.image_width, calib.image_height),
                                           prompt::label_value(s.label, prompt.config()), prompt::PromptForm::BoxLabel));
  }
  const Var e = nn::concat_rows(tokens);
  const fusion::FusionTraceVars fused = fusion::fuse(fv, e, tape.constant(frame.features));
  const auto groups = fusion::uniform_groups(frame.samples.size(), prompt::tokens_per_prompt(prompt::PromptForm::BoxLabel));
  return fusion::decode_head(fused.j, fused.h, groups, hv);
}

void PromptedModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  prompt.save(dir);
  fusion.save(dir / "fusion");
  save_head(dir / "head", head);
}

BaselineModel::BaselineModel(const ModelConfig& cfg, int input_channels, std::uint64_t seed)
    : head(fusion::HeadWeights::random(head_config(cfg), derive_seed(seed, kStreamInit, 2))) {
  // Same draw as the prompted model's input projection.
  input_proj =
      fusion::FusionWeights::random(fusion_config(cfg, input_channels), derive_seed(seed, kStreamInit, 1)).input_proj;
}

std::vector<std::pair<std::string, Tensor*>> BaselineModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out{{"input_proj", &input_proj}};
  for (auto& p : head.tensors()) out.push_back(p);
  return out;
}

Var BaselineModel::forward(nn::Tape& tape, std::span<const Var> p, const FrameData& frame,
                           const geom::CameraCalib&) const {
  const fusion::HeadVars hv{p[1], p[2], p[3], p[4], p[5]};
  const Var image = nn::matmul(tape.constant(frame.features), p[0]);
  const auto n = static_cast<Eigen::Index>(frame.samples.size());
  const Var pooled = nn::matmul(tape.constant(Tensor::Ones(n, 1)), nn::mean_rows(image));
  return fusion::decode_pooled(image, pooled, hv);
}

void BaselineModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_tensor(dir / "input_proj.bptn", input_proj);
  save_head(dir / "head", head);
}

// ---------------------------------------------------------------------------

namespace {

Tensor stacked_targets(const FrameData& frame) {
  Tensor t(static_cast<Eigen::Index>(frame.samples.size()), 5);
  for (std::size_t i = 0; i < frame.samples.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = frame.samples[i].target;
  return t;
}

}  // namespace

Var frame_loss(const Regressor& model, nn::Tape& tape, std::span<const Var> params, const FrameData& frame,
               const geom::CameraCalib& calib) {
  const Var pred = model.forward(tape, params, frame, calib);
  const Tensor target = stacked_targets(frame);
  return nn::smooth_l1(pred, target, Tensor::Ones(target.rows(), target.cols()));
}

ValMetrics validate_model(const Regressor& model, std::span<const FrameData> frames, const geom::CameraCalib& calib) {
  auto& mutable_model = const_cast<Regressor&>(model);
  ValMetrics m;
  for (const FrameData& frame : frames) {
    nn::Tape tape;
    std::vector<Var> params;
    for (auto& [name, t] : mutable_model.parameters()) params.push_back(tape.constant(*t));
    const Tensor pred = model.forward(tape, params, frame, calib).value();
    for (std::size_t i = 0; i < frame.samples.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const Tensor& t = frame.samples[i].target;
      m.depth_mae += std::abs(pred(r, 0) - t(0, 0)) * kDepthScale;
      m.yaw_mae += std::abs(fold_pi(pred(r, 1) - t(0, 1)));
      m.size_mae += (std::abs(pred(r, 2) - t(0, 2)) + std::abs(pred(r, 3) - t(0, 3)) + std::abs(pred(r, 4) - t(0, 4))) / 3;
      ++m.samples;
    }
  }
  if (m.samples > 0) {
    const auto n = static_cast<double>(m.samples);
    m.depth_mae /= n;
    m.yaw_mae /= n;
    m.size_mae /= n;
  }
  return m;
}

RunReport train_model(Regressor& model, const Dataset& data, const TrainConfig& cfg) {
  RunReport report;
  report.model = model.name();
  auto named = model.parameters();
  std::vector<Tensor*> params;
  for (auto& [name, t] : named) params.push_back(t);
  AdamWState state;
  const auto n_frames = data.train.size();
  const auto batches_per_epoch = (n_frames + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(batches_per_epoch) * cfg.epochs;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n_frames);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, kStreamShuffle, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n_frames; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(i) - 1))]);
    }
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_frames; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n_frames, start + static_cast<std::size_t>(cfg.batch_size));
      nn::Tape tape;
      std::vector<Var> vars;
      for (Tensor* t : params) vars.push_back(tape.variable(*t));
      std::vector<Var> losses;
      for (std::size_t i = start; i < end; ++i) {
        losses.push_back(frame_loss(model, tape, vars, data.train[order[i]], data.calib));
      }
      const Var loss = nn::scale(nn::sum(nn::concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw EvaluationError("train: non-finite loss at epoch " + std::to_string(epoch) + " (" + model.name() + ")");
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const Var& v : vars) grads.push_back(tape.grad(v));
      AdamWConfig opt = cfg.optimizer;
      if (cfg.cosine_decay) {
        opt.lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(state.step) / total_steps));
      }
      adamw_step(params, grads, state, opt);
      report.batch_losses.push_back(value);
      epoch_loss += value;
      ++batches;
    }
    report.epochs.push_back({epoch, epoch_loss / static_cast<double>(batches), validate_model(model, data.val, data.calib)});
  }
  report.final_val = report.epochs.back().val;
  return report;
}

TrainReport train_toy(const Dataset& data, const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir) {
  const auto channels = static_cast<int>(data.train.front().features.cols());
  PromptedModel prompted(cfg.model, channels, cfg.seed);
  BaselineModel baseline(cfg.model, channels, cfg.seed);
  TrainReport report;
  report.prompted = train_model(prompted, data, cfg);
  report.baseline = train_model(baseline, data, cfg);
  if (!checkpoint_dir.empty()) {
    prompted.save(checkpoint_dir / "prompted");
    baseline.save(checkpoint_dir / "baseline");
    report.checkpoint = checkpoint_dir.string();
  }
  return report;
}

TrainReport train_toy(const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir, int threads) {
  return train_toy(build_dataset(cfg, threads), cfg, checkpoint_dir);
}

namespace {

json run_json(const RunReport& r) {
  json epochs = json::array();
  for (const EpochStats& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", val_json(e.val)}});
  }
  return {{"model", r.model}, {"epochs", epochs}, {"batch_losses", r.batch_losses}, {"final_val", val_json(r.final_val)}};
}

}  // namespace

json TrainReport::to_json() const {
  return {{"prompted", run_json(prompted)}, {"baseline", run_json(baseline)}, {"checkpoint", checkpoint}};
}

// ---------------------------------------------------------------------------

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("spearman: sample sizes differ");
  if (a.size() < 3) return std::nullopt;
  auto ranks = [](std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

SweepReport sweep_prompt_quality(std::span<const double> noise_px, const TrainConfig& base,
                                 std::span<const std::uint64_t> seeds, int threads) {
  if (seeds.empty()) throw ConfigError("sweep: at least one seed is required");
  SweepReport report;
  for (double sigma : noise_px) {
    SweepPoint point{sigma, 0.0, 0.0};
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.reseed(seed);
      cfg.prompt_noise.center_sigma_px = sigma;
      cfg.prompt_noise.size_sigma_px = sigma;
      cfg.prompt_source = PromptSource::Predicted;
      cfg.validate();

      const auto scenes = synth::gen_dataset(cfg.scene, threads);
      const std::uint64_t prompt_seed = derive_seed(cfg.seed, kStreamPrompts);
      std::vector<Object2D> dets, gts;
      for (const synth::Scene& s : scenes) {
        if (s.frame < cfg.scene.frames - cfg.val_frames) continue;
        for (auto& d : synth::simulate_2d_detector(s, cfg.prompt_noise, prompt_seed)) dets.push_back(d);
        for (auto& g : synth::derive_2d(s.objects, s.calib)) gts.push_back(g);
      }
      point.map_2d += metrics::map_coco_2d(dets, gts, nullptr, 101).map.value_or(0.0);

      const Dataset data = build_dataset(cfg, threads);
      PromptedModel model(cfg.model, static_cast<int>(data.train.front().features.cols()), cfg.seed);
      point.depth_mae += train_model(model, data, cfg).final_val.depth_mae;
    }
    point.map_2d /= static_cast<double>(seeds.size());
    point.depth_mae /= static_cast<double>(seeds.size());
    report.points.push_back(point);
  }
  std::vector<double> maps, neg_err;
  for (const SweepPoint& p : report.points) {
    maps.push_back(p.map_2d);
    neg_err.push_back(-p.depth_mae);
  }
  report.spearman = spearman(maps, neg_err);
  return report;
}

json SweepReport::to_json() const {
  json pts = json::array();
  for (const SweepPoint& p : points) {
    pts.push_back({{"noise_px", p.noise_px}, {"map_2d", p.map_2d}, {"depth_mae", p.depth_mae}});
  }
  return {{"points", pts}, {"spearman", spearman ? json(*spearman) : json(nullptr)}};
}

}  // namespace bevprompt::toytrain
