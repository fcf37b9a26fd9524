#ifndef BEVPROMPT_METRICS_HPP
#define BEVPROMPT_METRICS_HPP

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevprompt/grouping.hpp"
#include "bevprompt/io.hpp"

namespace bevprompt::metrics {

/// Where the equally spaced recall samples sit: (0, 1] as in KITTI R40, or
/// [0, 1] as in COCO's 101-point interpolation.
enum class RecallGrid { ExcludeZero, IncludeZero };

/// A ground-truth object counts for a difficulty level when its projected
/// box is at least `min_height_px` tall and its occlusion / truncation do
/// not exceed the limits. Missing tags count as 0.
struct DifficultyRule {
  std::string name;
  double min_height_px = 0.0;
  double max_occlusion = 1.0;
  double max_truncation = 1.0;
};

/// [lo, hi), or [lo, hi] when hi >= 1.
struct Range {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double v) const { return v >= lo && (v < hi || (hi >= 1.0 && v <= hi)); }
  std::string name() const;
};

/// Composite = ap_weight * AP + (1 - ap_weight) * mean(center, orientation,
/// area similarity) over true positives. center = 1 - min(1, d / center_norm)
/// with d the BEV center distance in meters; orientation = (1 + cos dyaw) / 2;
/// area = min / max of the footprint areas. Not the Rope3D reference formula.
struct RopeConfig {
  double ap_weight = 0.5;
  double center_norm = 2.0;
};

struct EvalConfig {
  std::map<std::string, double> thresholds = {{"vehicle", 0.5}, {"cyclist", 0.25}, {"pedestrian", 0.25}};
  int bev_points = 40;
  int coco_points = 101;
  double score_filter = 0.3;
  std::vector<DifficultyRule> difficulties = default_difficulties();
  std::vector<Range> occlusion_ranges = {{0.0, 0.5}, {0.5, 1.0}};
  std::vector<Range> truncation_ranges = {{0.0, 0.5}, {0.5, 1.0}};
  RopeConfig rope;
  std::string grouping = "functionality";

  static std::vector<DifficultyRule> default_difficulties();
  /// Vehicle 0.5, cyclist 0.25, pedestrian 0.25.
  static EvalConfig benchmark();
  /// Vehicle 0.7, cyclist 0.5, pedestrian 0.5.
  static EvalConfig ablation();

  void validate() const;
  double threshold_for(const std::string& superclass) const;
  nlohmann::json to_json() const;
  /// Missing fields keep their defaults. `preset` may be "benchmark" or
  /// "ablation" to select the threshold set.
  static EvalConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Matching and curves

enum class DetState { FalsePositive = 0, TruePositive = 1, Ignored = -1 };

struct MatchResult {
  std::vector<DetState> state;     // per detection
  std::vector<long> matched_gt;    // per detection, -1 when none
  std::vector<bool> gt_matched;    // per ground truth
};

/// `iou(d, g)` for detection index d (detections already in descending score
/// order) and ground-truth index g. Each detection takes the unmatched
/// cared-for ground truth of highest IoU >= threshold (ties: lowest index);
/// failing that, an unmatched ignored one makes it Ignored; otherwise FP.
MatchResult match_greedy(std::size_t detections, std::span<const bool> gt_care,
                         const std::function<double(std::size_t, std::size_t)>& iou, double threshold);

/// Detections of one evaluation cell in global rank order.
struct PRCurve {
  std::vector<double> scores;
  std::vector<bool> true_positive;
  std::vector<double> similarity;  // orientation similarity of each TP, 0 for FP
  std::size_t num_gt = 0;

  std::vector<double> precision() const;
  std::vector<double> recall() const;
  std::vector<double> orientation_precision() const;
};

std::vector<double> recall_points(int n_points, RecallGrid grid);

/// Max-interpolated precision sampled on the recall grid.
std::vector<double> interpolated_precision(const PRCurve& curve, int n_points, RecallGrid grid);
std::vector<double> interpolated_orientation(const PRCurve& curve, int n_points, RecallGrid grid);

/// Mean interpolated precision; nullopt when the cell has no ground truth.
std::optional<double> average_precision(const PRCurve& curve, int n_points, RecallGrid grid = RecallGrid::ExcludeZero);
std::optional<double> average_orientation_similarity(const PRCurve& curve, int n_points,
                                                     RecallGrid grid = RecallGrid::ExcludeZero);

// ---------------------------------------------------------------------------
// Evaluations

/// Decides which ground-truth objects count; the rest are ignored.
using CarePredicate = std::function<bool(const Object3D&)>;

struct CellResult {
  std::string superclass;
  std::string slice = "overall";
  double threshold = 0.0;
  std::optional<double> ap;
  std::optional<double> aos;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t num_gt = 0;
  PRCurve curve;
  // Matched (detection, ground truth) pairs of the true positives.
  std::vector<std::pair<const Object3D*, const Object3D*>> matches;
};

/// Core BEV evaluation of one superclass at one IoU threshold.
CellResult evaluate_bev_cell(std::span<const Object3D> dets, std::span<const Object3D> gts,
                             const std::string& superclass, double threshold, const EvalConfig& cfg,
                             const grouping::ClassGrouping& grouping, const CarePredicate& care = {});

std::map<std::string, std::optional<double>> ap_bev(std::span<const Object3D> dets, std::span<const Object3D> gts,
                                                    const EvalConfig& cfg, const grouping::ClassGrouping& grouping);
std::map<std::string, std::optional<double>> aos(std::span<const Object3D> dets, std::span<const Object3D> gts,
                                                 const EvalConfig& cfg, const grouping::ClassGrouping& grouping);

struct CocoResult {
  std::optional<double> map;                            // mean over classes present in the ground truth
  std::map<std::string, double> per_class;              // mean over the ten IoU thresholds
  std::map<std::string, std::vector<double>> per_threshold;
};

/// COCO-style 2D mAP: IoU thresholds 0.50:0.05:0.95, 101-point recall grid
/// including 0. Classes are labels, or superclasses when `grouping` is given.
CocoResult map_coco_2d(std::span<const Object2D> dets, std::span<const Object2D> gts,
                       const grouping::ClassGrouping* grouping = nullptr, int n_points = 101);

struct RopeResult {
  std::optional<double> ap;
  std::optional<double> center_similarity;
  std::optional<double> orientation_similarity;
  std::optional<double> area_similarity;
  std::optional<double> composite;
};

std::map<std::string, RopeResult> rope_score(std::span<const Object3D> dets, std::span<const Object3D> gts,
                                             const EvalConfig& cfg, const grouping::ClassGrouping& grouping);

enum class BreakdownAxis { Occlusion, Truncation, Difficulty };

/// Cells for every superclass and slice of `axis`. Ground truth outside a
/// slice is ignored. Difficulty needs `calib` for projected heights; the
/// occlusion and truncation axes throw DataError on untagged ground truth.
std::vector<CellResult> breakdown(std::span<const Object3D> dets, std::span<const Object3D> gts, BreakdownAxis axis,
                                  const EvalConfig& cfg, const grouping::ClassGrouping& grouping,
                                  const geom::CameraCalib* calib = nullptr);

struct EvalReport {
  std::vector<CellResult> cells;
  std::map<std::string, RopeResult> rope;
  std::optional<CocoResult> coco;

  /// Cell lookup; nullptr when absent.
  const CellResult* find(const std::string& superclass, const std::string& slice = "overall") const;
  nlohmann::json to_json() const;
  /// One CSV per cell: recall, precision, orientation similarity.
  void write_pr_csv(const std::filesystem::path& dir, int n_points) const;
};

struct EvalInputs {
  std::span<const Object3D> gt3d;
  std::span<const Object3D> det3d;
  std::span<const Object2D> gt2d;
  std::span<const Object2D> det2d;
  const geom::CameraCalib* calib = nullptr;
};

/// Overall, difficulty (with calib), occlusion and truncation (when every GT
/// carries the tag) cells, Rope scores, and COCO mAP when 2D inputs exist.
EvalReport evaluate(const EvalInputs& inputs, const EvalConfig& cfg, const grouping::ClassGrouping& grouping);

}  // namespace bevprompt::metrics

#endif  // BEVPROMPT_METRICS_HPP
