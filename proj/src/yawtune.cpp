#include "bevprompt/yawtune.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace bevprompt::yawtune {

void YawTuneConfig::validate() const {
  if (!(search_half_range > 0 && search_half_range <= std::numbers::pi)) {
    throw ConfigError("yaw tuning: search_half_range must lie in (0, pi]");
  }
  if (!(coarse_step > 0)) throw ConfigError("yaw tuning: coarse_step must be positive");
  if (refine_iterations < 0) throw ConfigError("yaw tuning: refine_iterations must be >= 0");
  if (!(min_match_iou >= 0 && min_match_iou <= 1)) throw ConfigError("yaw tuning: min_match_iou outside [0, 1]");
}

nlohmann::json YawTuneConfig::to_json() const {
  return {{"search_half_range", search_half_range}, {"coarse_step", coarse_step},
          {"refine_iterations", refine_iterations}, {"min_match_iou", min_match_iou},
          {"score_filter", score_filter},           {"tune_superclass", tune_superclass}};
}

YawTuneConfig YawTuneConfig::from_json(const nlohmann::json& j) {
  YawTuneConfig c;
  try {
    c.search_half_range = j.value("search_half_range", c.search_half_range);
    c.coarse_step = j.value("coarse_step", c.coarse_step);
    c.refine_iterations = j.value("refine_iterations", c.refine_iterations);
    c.min_match_iou = j.value("min_match_iou", c.min_match_iou);
    c.score_filter = j.value("score_filter", c.score_filter);
    c.tune_superclass = j.value("tune_superclass", c.tune_superclass);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("yaw tuning config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Match> match_3d_to_2d(std::span<const Cuboid3D> cuboids, std::span<const Box2D> boxes,
                                  const CameraCalib& calib, const grouping::ClassGrouping& grouping, double min_iou) {
  std::vector<Match> candidates;
  for (std::size_t i = 0; i < cuboids.size(); ++i) {
    std::optional<Box2D> proj;
    try {
      proj = geom::project_cuboid(calib, cuboids[i], true);
    } catch (const BehindCameraError&) {
      continue;
    } catch (const OffImageError&) {
      continue;
    }
    const std::string& sc = grouping.superclass_of(cuboids[i].label);
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (grouping.superclass_of(boxes[j].label) != sc) continue;
      const double iou = geom::iou_aabb(*proj, boxes[j]);
      if (iou > 0 && iou >= min_iou) candidates.push_back({i, j, iou});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Match& a, const Match& b) { return a.iou > b.iou; });
  std::vector<bool> cuboid_used(cuboids.size(), false), box_used(boxes.size(), false);
  std::vector<Match> out;
  for (const Match& m : candidates) {
    if (cuboid_used[m.cuboid] || box_used[m.box]) continue;
    cuboid_used[m.cuboid] = box_used[m.box] = true;
    out.push_back(m);
  }
  return out;
}

double yaw_objective(const Cuboid3D& c, double yaw, const Box2D& box, const CameraCalib& calib) {
  try {
    return geom::iou_aabb(geom::project_cuboid(calib, c.with_yaw(yaw), true), box);
  } catch (const OffImageError&) {
    return 0.0;
  }
}

YawTuneResult tune_yaw(const Cuboid3D& c, const Box2D& box, const CameraCalib& calib, const YawTuneConfig& cfg) {
  cfg.validate();
  YawTuneResult result;
  auto eval = [&](double theta) {
    const double yaw = geom::normalize_angle(theta);
    const double iou = yaw_objective(c, yaw, box, calib);
    result.samples.push_back({yaw, iou});
    return YawSample{yaw, iou};
  };

  const double yaw0 = geom::normalize_angle(c.yaw);
  const YawSample initial = eval(yaw0);
  result.initial_iou = initial.iou;

  const int k_max = static_cast<int>(std::floor(cfg.search_half_range / cfg.coarse_step + 1e-9));
  int best_k = 0;
  YawSample best = initial;
  // Visit candidates by increasing distance from the initial yaw so that the
  // strict comparison implements the nearest-wins tie-break.
  for (int dist = 1; dist <= k_max; ++dist) {
    for (int k : {-dist, dist}) {
      const YawSample s = eval(yaw0 + k * cfg.coarse_step);
      if (s.iou > best.iou) {
        best = s;
        best_k = k;
      }
    }
  }

  if (best.iou > 0 && cfg.refine_iterations > 0) {
    double lo = yaw0 + std::max(best_k - 1, -k_max) * cfg.coarse_step;
    double hi = yaw0 + std::min(best_k + 1, k_max) * cfg.coarse_step;
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    YawSample f1 = eval(x1), f2 = eval(x2);
    auto consider = [&](const YawSample& s) {
      if (s.iou > best.iou) best = s;
    };
    consider(f1);
    consider(f2);
    for (int it = 1; it < cfg.refine_iterations; ++it) {
      if (f1.iou >= f2.iou) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - inv_phi * (hi - lo);
        f1 = eval(x1);
        consider(f1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + inv_phi * (hi - lo);
        f2 = eval(x2);
        consider(f2);
      }
    }
  }

  result.yaw = best.yaw;
  result.iou = best.iou;
  return result;
}

FrameTuneResult tune_frame(std::span<const Cuboid3D> cuboids, std::span<const Box2D> boxes, const CameraCalib& calib,
                           const YawTuneConfig& cfg, const grouping::ClassGrouping& grouping) {
  cfg.validate();
  FrameTuneResult out;
  out.cuboids.assign(cuboids.begin(), cuboids.end());

  std::vector<std::size_t> cuboid_ids, box_ids;
  std::vector<Cuboid3D> eligible;
  std::vector<Box2D> kept_boxes;
  for (std::size_t i = 0; i < cuboids.size(); ++i) {
    const Cuboid3D& c = cuboids[i];
    if (c.score < cfg.score_filter) continue;
    if (!cfg.tune_superclass.empty() && grouping.superclass_of(c.label) != cfg.tune_superclass) continue;
    cuboid_ids.push_back(i);
    eligible.push_back(c);
  }
  for (std::size_t j = 0; j < boxes.size(); ++j) {
    if (boxes[j].score < cfg.score_filter) continue;
    box_ids.push_back(j);
    kept_boxes.push_back(boxes[j]);
  }

  for (const Match& m : match_3d_to_2d(eligible, kept_boxes, calib, grouping, cfg.min_match_iou)) {
    const Cuboid3D& c = eligible[m.cuboid];
    const YawTuneResult r = tune_yaw(c, kept_boxes[m.box], calib, cfg);
    const std::size_t idx = cuboid_ids[m.cuboid];
    out.cuboids[idx].yaw = r.yaw;
    out.pairs.push_back({idx, box_ids[m.box], c.yaw, r.yaw, r.initial_iou, r.iou});
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const PairReport& a, const PairReport& b) { return a.cuboid < b.cuboid; });
  return out;
}

}  // namespace bevprompt::yawtune
