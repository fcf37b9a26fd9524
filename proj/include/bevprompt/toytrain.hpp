#ifndef BEVPROMPT_TOYTRAIN_HPP
#define BEVPROMPT_TOYTRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/fusion.hpp"
#include "bevprompt/prompt.hpp"
#include "bevprompt/synth.hpp"

namespace bevprompt::toytrain {

using nn::Tensor;
using nn::Var;

struct AdamWConfig {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta).
/// The state is sized on first use. Throws EvaluationError on a non-finite
/// gradient and DimensionError on shape mismatches.
void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamWState& state,
                const AdamWConfig& cfg);

enum class PromptSource { Predicted, GroundTruth };

struct ModelConfig {
  int d_model = 16;
  int heads = 1;
  int fusion_hidden = 32;
  int head_hidden = 32;
  bool residuals = true;
  std::string grouping = "functionality";
  int grid_h = 12;
  int grid_w = 16;
  int positional = 8;
};

struct TrainConfig {
  AdamWConfig optimizer;
  int epochs = 50;
  int batch_size = 1;  // frames per step
  bool cosine_decay = false;
  std::uint64_t seed = 1;
  PromptSource prompt_source = PromptSource::Predicted;
  ModelConfig model;
  synth::SceneConfig scene = synth::SceneConfig::standard();
  int val_frames = 10;  // the last frames of the scene set
  synth::DetectorNoise prompt_noise;

  /// Benchmark defaults: 60 frames of the standard scene, moderately noisy
  /// 2D detector.
  static TrainConfig standard();

  /// Sets the training seed and derives the scene seed from it.
  void reseed(std::uint64_t new_seed);

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One regression sample: a prompt box and its matched ground truth.
struct Sample {
  geom::Box2D prompt;
  std::size_t label = 0;  // index of prompt.label in the fine vocabulary
  geom::Cuboid3D truth;
  Tensor target;  // 1 x 5
};

struct FrameData {
  int frame = 0;
  Tensor features;  // S x C_in
  std::vector<Sample> samples;
};

struct Dataset {
  geom::CameraCalib calib;
  std::vector<FrameData> train;
  std::vector<FrameData> val;  // prompts always from the simulated detector
};

/// Targets: [depth / 10, folded yaw offset, log(w/w0), log(h/h0), log(l/l0)]
/// where the yaw offset is (yaw - pi/4) folded into [-pi/2, pi/2) and
/// (w0, h0, l0) is the class mean size.
Tensor make_target(const geom::Cuboid3D& truth, const geom::CameraCalib& calib, const synth::SceneConfig& scene);

/// Predicted prompts are matched to ground truth greedily by score at 2D
/// IoU >= 0.5; unmatched detections are dropped.
Dataset build_dataset(const TrainConfig& cfg, int threads = 1);

/// Same assembly from given scenes and per-frame 2D detections. Scenes are
/// ordered by frame; the last `cfg.val_frames` of them validate.
Dataset assemble_dataset(std::span<const synth::Scene> scenes, const std::map<int, std::vector<Object2D>>& predicted,
                         const TrainConfig& cfg);

/// A trainable regressor over one frame.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual std::vector<std::pair<std::string, Tensor*>> parameters() = 0;
  /// N x 5 predictions given the parameters as bound variables, in
  /// parameters() order.
  virtual Var forward(nn::Tape& tape, std::span<const Var> params, const FrameData& frame,
                      const geom::CameraCalib& calib) const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
  virtual std::string name() const = 0;
};

/// Prompt encoder + fusion + decode head.
class PromptedModel : public Regressor {
 public:
  PromptedModel(const ModelConfig& cfg, int input_channels, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor*>> parameters() override;
  Var forward(nn::Tape& tape, std::span<const Var> params, const FrameData& frame,
              const geom::CameraCalib& calib) const override;
  void save(const std::filesystem::path& dir) const override;
  std::string name() const override { return "prompted"; }

  prompt::PromptWeights prompt;
  fusion::FusionWeights fusion;
  fusion::HeadWeights head;
};

/// Same decode head over the projected image features alone: every
/// detection in a frame receives the mean-pooled image vector.
class BaselineModel : public Regressor {
 public:
  BaselineModel(const ModelConfig& cfg, int input_channels, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor*>> parameters() override;
  Var forward(nn::Tape& tape, std::span<const Var> params, const FrameData& frame,
              const geom::CameraCalib& calib) const override;
  void save(const std::filesystem::path& dir) const override;
  std::string name() const override { return "baseline"; }

  Tensor input_proj;
  fusion::HeadWeights head;
};

/// Mean smooth-L1 loss of one frame.
Var frame_loss(const Regressor& model, nn::Tape& tape, std::span<const Var> params, const FrameData& frame,
               const geom::CameraCalib& calib);

struct ValMetrics {
  double depth_mae = 0.0;  // meters
  double yaw_mae = 0.0;    // radians, mod pi
  double size_mae = 0.0;   // log-ratio units
  std::size_t samples = 0;
};

ValMetrics validate_model(const Regressor& model, std::span<const FrameData> frames, const geom::CameraCalib& calib);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  ValMetrics val;
};

struct RunReport {
  std::string model;
  std::vector<EpochStats> epochs;
  std::vector<double> batch_losses;
  ValMetrics final_val;
};

struct TrainReport {
  RunReport prompted;
  RunReport baseline;
  std::string checkpoint;

  nlohmann::json to_json() const;
};

RunReport train_model(Regressor& model, const Dataset& data, const TrainConfig& cfg);

/// Trains the prompted model and the baseline on the same data and budget.
/// With a non-empty `checkpoint_dir` both models are saved under it.
TrainReport train_toy(const Dataset& data, const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir = {});
TrainReport train_toy(const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir = {}, int threads = 1);

struct SweepPoint {
  double noise_px = 0.0;
  double map_2d = 0.0;
  double depth_mae = 0.0;
};

struct SweepReport {
  std::vector<SweepPoint> points;
  /// Spearman correlation of 2D mAP against negative depth error; absent
  /// with fewer than three levels or constant ranks.
  std::optional<double> spearman;

  nlohmann::json to_json() const;
};

/// Each level sets the 2D detector's center and size jitter (pixels) for
/// both training and validation prompts. Per level, mAP and depth error are
/// averaged over `seeds` (each seed drives both the scenes and training).
SweepReport sweep_prompt_quality(std::span<const double> noise_px, const TrainConfig& cfg,
                                 std::span<const std::uint64_t> seeds, int threads = 1);

/// Average ranks for ties.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

}  // namespace bevprompt::toytrain

#endif  // BEVPROMPT_TOYTRAIN_HPP
