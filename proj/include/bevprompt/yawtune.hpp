#ifndef BEVPROMPT_YAWTUNE_HPP
#define BEVPROMPT_YAWTUNE_HPP

#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/geometry.hpp"
#include "bevprompt/grouping.hpp"

namespace bevprompt::yawtune {

using geom::Box2D;
using geom::CameraCalib;
using geom::Cuboid3D;

struct YawTuneConfig {
  double search_half_range = std::numbers::pi / 2;
  double coarse_step = std::numbers::pi / 180;
  int refine_iterations = 20;
  double min_match_iou = 0.3;
  /// Detections (2D and 3D) scoring below this are left untouched.
  double score_filter = 0.3;
  /// Empty means every superclass is tuned.
  std::string tune_superclass = "vehicle";

  void validate() const;
  nlohmann::json to_json() const;
  static YawTuneConfig from_json(const nlohmann::json& j);
};

struct Match {
  std::size_t cuboid = 0;
  std::size_t box = 0;
  double iou = 0.0;
};

/// Greedy one-to-one pairing by descending IoU between each cuboid's clipped
/// projection and the 2D boxes, only within the same superclass. Ties go to
/// the lower cuboid index, then the lower box index. Cuboids that cannot be
/// projected stay unmatched.
std::vector<Match> match_3d_to_2d(std::span<const Cuboid3D> cuboids, std::span<const Box2D> boxes,
                                  const CameraCalib& calib, const grouping::ClassGrouping& grouping,
                                  double min_iou);

/// IoU between the clipped projection of `c` rotated to `yaw` and `box`;
/// zero when the projection leaves the image. BehindCameraError propagates.
double yaw_objective(const Cuboid3D& c, double yaw, const Box2D& box, const CameraCalib& calib);

struct YawSample {
  double yaw;
  double iou;
};

struct YawTuneResult {
  double yaw = 0.0;
  double iou = 0.0;
  double initial_iou = 0.0;
  /// Every objective evaluation, in evaluation order.
  std::vector<YawSample> samples;
};

/// Coarse grid over yaw +- search_half_range (the initial yaw is always a
/// grid point), then golden-section refinement inside the best grid cell.
/// Grid ties go to the candidate nearest the initial yaw; refinement only
/// replaces the grid optimum on strict improvement, so the returned IoU is
/// never below the initial one.
YawTuneResult tune_yaw(const Cuboid3D& c, const Box2D& box, const CameraCalib& calib, const YawTuneConfig& cfg);

struct PairReport {
  std::size_t cuboid = 0;
  std::size_t box = 0;
  double yaw_before = 0.0;
  double yaw_after = 0.0;
  double iou_before = 0.0;
  double iou_after = 0.0;
};

struct FrameTuneResult {
  std::vector<Cuboid3D> cuboids;
  std::vector<PairReport> pairs;
};

/// Match, then tune each eligible matched pair. Unmatched or filtered
/// cuboids are returned unchanged and in their original order.
FrameTuneResult tune_frame(std::span<const Cuboid3D> cuboids, std::span<const Box2D> boxes, const CameraCalib& calib,
                           const YawTuneConfig& cfg, const grouping::ClassGrouping& grouping);

}  // namespace bevprompt::yawtune

#endif  // BEVPROMPT_YAWTUNE_HPP
