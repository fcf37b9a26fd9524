#ifndef BEVPROMPT_SYNTH_HPP
#define BEVPROMPT_SYNTH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/fusion.hpp"
#include "bevprompt/io.hpp"

namespace bevprompt::synth {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Mean and standard deviation of (w, h, l) in meters.
struct SizeModel {
  double w = 1.0, h = 1.0, l = 1.0;
  double sigma_w = 0.0, sigma_h = 0.0, sigma_l = 0.0;
};

/// A straight road on the ground plane. Lanes run along `heading` at the
/// given signed lateral offsets from the road axis; the axis passes through
/// (axis_x, axis_y). Objects are drawn along the road within `extent`
/// (meters along the road direction, measured from the axis point).
struct Road {
  double axis_x = 0.0;
  double axis_y = 0.0;
  double heading = 0.0;
  std::vector<double> lane_offsets;
  Interval extent;
};

struct SceneConfig {
  std::uint64_t seed = 7;
  int frames = 20;
  int min_objects = 4;
  int max_objects = 12;
  std::map<std::string, SizeModel> sizes;
  std::map<std::string, double> class_weights;

  int image_width = 1536;
  int image_height = 864;
  double focal = 1000.0;
  Interval camera_height{6.0, 7.0};
  Interval camera_pitch{0.18, 0.24};  // radians, downward

  std::vector<Road> roads;
  double lateral_jitter = 0.3;   // meters
  double heading_jitter = 0.05;  // radians
  double min_visible_area = 100.0;  // pixels, after clipping

  /// Defaults: DAIR-style class mix, a four-lane road along +x and a
  /// crossing road.
  static SceneConfig standard();

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

struct DetectorNoise {
  // 2D
  double center_sigma_px = 0.0;
  double size_sigma_px = 0.0;
  double fn_rate = 0.0;
  double fp_rate = 0.0;  // expected false positives per ground-truth object
  double label_confusion = 0.0;
  double score_scale_px = 10.0;  // score = 1 / (1 + jitter / score_scale_px)
  Interval fp_score{0.3, 0.8};
  // 3D
  double position_sigma = 0.0;  // meters, on the ground plane
  double yaw_sigma = 0.0;
  double size_sigma = 0.0;  // relative, log-normal
  double depth_bias = 0.0;  // meters, along the horizontal viewing ray

  void validate() const;
  nlohmann::json to_json() const;
  static DetectorNoise from_json(const nlohmann::json& j);
};

struct Scene {
  int frame = 0;
  geom::CameraCalib calib;
  std::vector<Object3D> objects;  // ground truth with occlusion and truncation
};

/// Fixed roadside camera of a configuration; depends only on the seed.
geom::CameraCalib scene_camera(const SceneConfig& cfg);

/// Throws ConfigError when no object can be placed after 1000 attempts or
/// when fewer than `min_objects` fit.
Scene gen_scene(const SceneConfig& cfg, int frame);
/// Frames [0, cfg.frames), generated on up to `threads` workers.
std::vector<Scene> gen_dataset(const SceneConfig& cfg, int threads = 1);

struct Visibility {
  double occlusion = 0.0;
  double truncation = 0.0;
};

/// Occlusion: fraction of the clipped projected box covered by the union of
/// the boxes of nearer objects. Truncation: fraction of the unclipped box
/// area outside the image.
std::vector<Visibility> visibility(const geom::CameraCalib& calib, const std::vector<geom::Cuboid3D>& cuboids);

/// Projected boxes of the ground truth (clipped, score 1). Objects that do
/// not project into the image are skipped.
std::vector<Object2D> derive_2d(const std::vector<Object3D>& objects, const geom::CameraCalib& calib);

std::vector<Object2D> simulate_2d_detector(const Scene& scene, const DetectorNoise& noise, std::uint64_t seed);
std::vector<Object3D> simulate_3d_detector(const Scene& scene, const DetectorNoise& noise, std::uint64_t seed);

/// Number of channels produced for `positional` sinusoidal channels.
int feature_channels(int positional);

/// Per grid cell: coverage fraction, mean inverse camera depth of covering
/// objects (area-weighted), vehicle/cyclist/pedestrian mix, then
/// `positional` fixed sinusoidal channels. Throws ConfigError when the grid
/// does not divide the image.
fusion::ImageFeature render_toy_features(const std::vector<Object3D>& objects, const geom::CameraCalib& calib,
                                         int grid_h, int grid_w, int positional = 8);

/// Area of the union of `boxes` intersected with `window`.
double union_area_within(const std::vector<geom::Box2D>& boxes, const geom::Box2D& window);

}  // namespace bevprompt::synth

#endif  // BEVPROMPT_SYNTH_HPP
