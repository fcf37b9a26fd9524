#include "bevprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>

namespace bevprompt::metrics {

using nlohmann::json;

std::string Range::name() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f-%.2f", lo, hi);
  return buf;
}

std::vector<DifficultyRule> EvalConfig::default_difficulties() {
  return {{"easy", 40.0, 0.1, 0.15}, {"moderate", 25.0, 0.5, 0.3}, {"hard", 25.0, 0.8, 0.5}};
}

EvalConfig EvalConfig::benchmark() { return EvalConfig{}; }

EvalConfig EvalConfig::ablation() {
  EvalConfig c;
  c.thresholds = {{"vehicle", 0.7}, {"cyclist", 0.5}, {"pedestrian", 0.5}};
  return c;
}

void EvalConfig::validate() const {
  for (const auto& [name, t] : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("eval config: threshold for " + name + " outside (0, 1]");
  }
  if (bev_points < 2 || coco_points < 2) throw ConfigError("eval config: interpolation needs >= 2 points");
  if (score_filter < 0.0 || score_filter > 1.0) throw ConfigError("eval config: score_filter outside [0, 1]");
  for (const auto* ranges : {&occlusion_ranges, &truncation_ranges}) {
    for (const Range& r : *ranges) {
      if (!(r.lo < r.hi)) throw ConfigError("eval config: empty range " + r.name());
    }
  }
  if (!(rope.ap_weight >= 0.0 && rope.ap_weight <= 1.0) || !(rope.center_norm > 0.0)) {
    throw ConfigError("eval config: invalid rope weights");
  }
}

double EvalConfig::threshold_for(const std::string& superclass) const {
  const auto it = thresholds.find(superclass);
  if (it == thresholds.end()) throw ConfigError("eval config: no IoU threshold for superclass '" + superclass + "'");
  return it->second;
}

json EvalConfig::to_json() const {
  json diffs = json::array();
  for (const auto& d : difficulties) {
    diffs.push_back({{"name", d.name},
                     {"min_height_px", d.min_height_px},
                     {"max_occlusion", d.max_occlusion},
                     {"max_truncation", d.max_truncation}});
  }
  auto ranges = [](const std::vector<Range>& rs) {
    json out = json::array();
    for (const Range& r : rs) out.push_back({r.lo, r.hi});
    return out;
  };
  return {{"thresholds", thresholds},
          {"bev_points", bev_points},
          {"coco_points", coco_points},
          {"score_filter", score_filter},
          {"difficulties", diffs},
          {"occlusion_ranges", ranges(occlusion_ranges)},
          {"truncation_ranges", ranges(truncation_ranges)},
          {"rope", {{"ap_weight", rope.ap_weight}, {"center_norm", rope.center_norm}}},
          {"grouping", grouping}};
}

EvalConfig EvalConfig::from_json(const json& j) {
  EvalConfig c;
  try {
    if (j.contains("preset")) {
      const auto p = j.at("preset").get<std::string>();
      if (p == "ablation") {
        c = ablation();
      } else if (p != "benchmark") {
        throw ConfigError("eval config: unknown preset '" + p + "'");
      }
    }
    if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::map<std::string, double>>();
    c.bev_points = j.value("bev_points", c.bev_points);
    c.coco_points = j.value("coco_points", c.coco_points);
    c.score_filter = j.value("score_filter", c.score_filter);
    if (j.contains("difficulties")) {
      c.difficulties.clear();
      for (const auto& d : j.at("difficulties")) {
        c.difficulties.push_back({d.at("name").get<std::string>(), d.value("min_height_px", 0.0),
                                  d.value("max_occlusion", 1.0), d.value("max_truncation", 1.0)});
      }
    }
    auto ranges = [&](const char* key, std::vector<Range>& out) {
      if (!j.contains(key)) return;
      out.clear();
      for (const auto& r : j.at(key)) out.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    };
    ranges("occlusion_ranges", c.occlusion_ranges);
    ranges("truncation_ranges", c.truncation_ranges);
    if (j.contains("rope")) {
      c.rope.ap_weight = j.at("rope").value("ap_weight", c.rope.ap_weight);
      c.rope.center_norm = j.at("rope").value("center_norm", c.rope.center_norm);
    }
    c.grouping = j.value("grouping", c.grouping);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

MatchResult match_greedy(std::size_t detections, std::span<const bool> gt_care,
                         const std::function<double(std::size_t, std::size_t)>& iou, double threshold) {
  MatchResult r;
  r.state.assign(detections, DetState::FalsePositive);
  r.matched_gt.assign(detections, -1);
  r.gt_matched.assign(gt_care.size(), false);
  for (std::size_t d = 0; d < detections; ++d) {
    long best_care = -1, best_ignored = -1;
    double best_care_iou = 0.0, best_ignored_iou = 0.0;
    for (std::size_t g = 0; g < gt_care.size(); ++g) {
      if (r.gt_matched[g]) continue;
      const double v = iou(d, g);
      if (v < threshold) continue;
      if (gt_care[g]) {
        if (best_care < 0 || v > best_care_iou) {
          best_care = static_cast<long>(g);
          best_care_iou = v;
        }
      } else if (best_ignored < 0 || v > best_ignored_iou) {
        best_ignored = static_cast<long>(g);
        best_ignored_iou = v;
      }
    }
    if (best_care >= 0) {
      r.state[d] = DetState::TruePositive;
      r.matched_gt[d] = best_care;
      r.gt_matched[static_cast<std::size_t>(best_care)] = true;
    } else if (best_ignored >= 0) {
      r.state[d] = DetState::Ignored;
      r.matched_gt[d] = best_ignored;
      r.gt_matched[static_cast<std::size_t>(best_ignored)] = true;
    }
  }
  return r;
}

std::vector<double> PRCurve::precision() const {
  std::vector<double> p(true_positive.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    tp += true_positive[k] ? 1 : 0;
    p[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  return p;
}

std::vector<double> PRCurve::recall() const {
  std::vector<double> r(true_positive.size(), 0.0);
  if (num_gt == 0) return r;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    tp += true_positive[k] ? 1 : 0;
    r[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  return r;
}

std::vector<double> PRCurve::orientation_precision() const {
  std::vector<double> p(similarity.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    acc += similarity[k];
    p[k] = acc / static_cast<double>(k + 1);
  }
  return p;
}

std::vector<double> recall_points(int n_points, RecallGrid grid) {
  std::vector<double> pts(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    pts[i] = grid == RecallGrid::IncludeZero ? static_cast<double>(i) / (n_points - 1)
                                             : static_cast<double>(i + 1) / n_points;
  }
  return pts;
}

namespace {

std::vector<double> interpolate(const std::vector<double>& values, const std::vector<double>& recall, int n_points,
                                RecallGrid grid) {
  std::vector<double> suffix_max(values.size() + 1, 0.0);
  for (std::size_t k = values.size(); k-- > 0;) suffix_max[k] = std::max(suffix_max[k + 1], values[k]);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n_points));
  std::size_t k = 0;
  for (double r : recall_points(n_points, grid)) {
    while (k < recall.size() && recall[k] < r) ++k;
    out.push_back(suffix_max[k]);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double orientation_similarity(double yaw_a, double yaw_b) { return (1.0 + std::cos(yaw_a - yaw_b)) / 2.0; }

}  // namespace

std::vector<double> interpolated_precision(const PRCurve& curve, int n_points, RecallGrid grid) {
  return interpolate(curve.precision(), curve.recall(), n_points, grid);
}

std::vector<double> interpolated_orientation(const PRCurve& curve, int n_points, RecallGrid grid) {
  return interpolate(curve.orientation_precision(), curve.recall(), n_points, grid);
}

std::optional<double> average_precision(const PRCurve& curve, int n_points, RecallGrid grid) {
  if (curve.num_gt == 0) return std::nullopt;
  return mean(interpolated_precision(curve, n_points, grid));
}

std::optional<double> average_orientation_similarity(const PRCurve& curve, int n_points, RecallGrid grid) {
  if (curve.num_gt == 0) return std::nullopt;
  return mean(interpolated_orientation(curve, n_points, grid));
}

// ---------------------------------------------------------------------------

CellResult evaluate_bev_cell(std::span<const Object3D> dets, std::span<const Object3D> gts,
                             const std::string& superclass, double threshold, const EvalConfig& cfg,
                             const grouping::ClassGrouping& grouping, const CarePredicate& care) {
  std::map<int, std::vector<const Object3D*>> dets_by_frame, gts_by_frame;
  for (const Object3D& d : dets) {
    if (d.box.score >= cfg.score_filter && grouping.superclass_of(d.box.label) == superclass) {
      dets_by_frame[d.frame].push_back(&d);
    }
  }
  for (const Object3D& g : gts) {
    if (grouping.superclass_of(g.box.label) == superclass) gts_by_frame[g.frame].push_back(&g);
  }

  CellResult cell;
  cell.superclass = superclass;
  cell.threshold = threshold;

  struct Entry {
    double score;
    bool tp;
    double sim;
  };
  std::vector<Entry> entries;

  for (const auto& [frame, gt_list] : gts_by_frame) {
    std::vector<bool> care_flags(gt_list.size());
    for (std::size_t g = 0; g < gt_list.size(); ++g) {
      care_flags[g] = !care || care(*gt_list[g]);
      cell.num_gt += care_flags[g] ? 1 : 0;
    }
    (void)frame;
  }
  for (auto& [frame, det_list] : dets_by_frame) {
    std::stable_sort(det_list.begin(), det_list.end(),
                     [](const Object3D* a, const Object3D* b) { return a->box.score > b->box.score; });
    static const std::vector<const Object3D*> kNone;
    const auto git = gts_by_frame.find(frame);
    const auto& gt_list = git == gts_by_frame.end() ? kNone : git->second;
    std::vector<geom::RotatedBoxBEV> gt_fp(gt_list.size());
    auto care_flags = std::make_unique<bool[]>(gt_list.size());
    for (std::size_t g = 0; g < gt_list.size(); ++g) {
      gt_fp[g] = geom::bev_footprint(gt_list[g]->box);
      care_flags[g] = !care || care(*gt_list[g]);
    }
    std::vector<geom::RotatedBoxBEV> det_fp(det_list.size());
    for (std::size_t d = 0; d < det_list.size(); ++d) det_fp[d] = geom::bev_footprint(det_list[d]->box);
    const MatchResult m =
        match_greedy(det_list.size(), std::span<const bool>(care_flags.get(), gt_list.size()),
                     [&](std::size_t d, std::size_t g) { return geom::iou_rotated(det_fp[d], gt_fp[g]); }, threshold);
    for (std::size_t d = 0; d < det_list.size(); ++d) {
      if (m.state[d] == DetState::Ignored) continue;
      const bool tp = m.state[d] == DetState::TruePositive;
      double sim = 0.0;
      if (tp) {
        const Object3D* gt = gt_list[static_cast<std::size_t>(m.matched_gt[d])];
        sim = orientation_similarity(det_list[d]->box.yaw, gt->box.yaw);
        cell.matches.emplace_back(det_list[d], gt);
      }
      entries.push_back({det_list[d]->box.score, tp, sim});
    }
  }

  // Frames were visited in ascending order and detections by in-frame rank,
  // so a stable sort breaks score ties by (frame, rank).
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
  for (const Entry& e : entries) {
    cell.curve.scores.push_back(e.score);
    cell.curve.true_positive.push_back(e.tp);
    cell.curve.similarity.push_back(e.sim);
    cell.tp += e.tp ? 1 : 0;
    cell.fp += e.tp ? 0 : 1;
  }
  cell.curve.num_gt = cell.num_gt;
  cell.ap = average_precision(cell.curve, cfg.bev_points, RecallGrid::ExcludeZero);
  cell.aos = average_orientation_similarity(cell.curve, cfg.bev_points, RecallGrid::ExcludeZero);
  return cell;
}

std::map<std::string, std::optional<double>> ap_bev(std::span<const Object3D> dets, std::span<const Object3D> gts,
                                                    const EvalConfig& cfg, const grouping::ClassGrouping& grouping) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& sc : grouping.superclasses()) {
    out[sc.name] = evaluate_bev_cell(dets, gts, sc.name, cfg.threshold_for(sc.name), cfg, grouping).ap;
  }
  return out;
}

std::map<std::string, std::optional<double>> aos(std::span<const Object3D> dets, std::span<const Object3D> gts,
                                                 const EvalConfig& cfg, const grouping::ClassGrouping& grouping) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& sc : grouping.superclasses()) {
    out[sc.name] = evaluate_bev_cell(dets, gts, sc.name, cfg.threshold_for(sc.name), cfg, grouping).aos;
  }
  return out;
}

CocoResult map_coco_2d(std::span<const Object2D> dets, std::span<const Object2D> gts,
                       const grouping::ClassGrouping* grouping, int n_points) {
  auto class_of = [&](const geom::Box2D& b) { return grouping ? grouping->superclass_of(b.label) : b.label; };
  std::map<std::string, std::map<int, std::vector<const Object2D*>>> det_idx, gt_idx;
  for (const Object2D& g : gts) gt_idx[class_of(g.box)][g.frame].push_back(&g);
  for (const Object2D& d : dets) det_idx[class_of(d.box)][d.frame].push_back(&d);

  CocoResult result;
  for (auto& [cls, gt_frames] : gt_idx) {
    auto& det_frames = det_idx[cls];
    for (auto& [frame, list] : det_frames) {
      std::stable_sort(list.begin(), list.end(),
                       [](const Object2D* a, const Object2D* b) { return a->box.score > b->box.score; });
      (void)frame;
    }
    std::size_t num_gt = 0;
    for (const auto& [frame, list] : gt_frames) num_gt += list.size();

    std::vector<double> aps;
    for (int step = 0; step < 10; ++step) {
      const double t = static_cast<double>(50 + 5 * step) / 100.0;
      std::vector<std::pair<double, bool>> entries;
      for (const auto& [frame, dlist] : det_frames) {
        static const std::vector<const Object2D*> kNone;
        const auto git = gt_frames.find(frame);
        const auto& glist = git == gt_frames.end() ? kNone : git->second;
        auto care = std::make_unique<bool[]>(glist.size());
        std::fill(care.get(), care.get() + glist.size(), true);
        const MatchResult m = match_greedy(
            dlist.size(), std::span<const bool>(care.get(), glist.size()),
            [&](std::size_t d, std::size_t g) { return geom::iou_aabb(dlist[d]->box, glist[g]->box); }, t);
        for (std::size_t d = 0; d < dlist.size(); ++d) {
          entries.emplace_back(dlist[d]->box.score, m.state[d] == DetState::TruePositive);
        }
      }
      std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      PRCurve curve;
      curve.num_gt = num_gt;
      for (const auto& [score, tp] : entries) {
        curve.scores.push_back(score);
        curve.true_positive.push_back(tp);
        curve.similarity.push_back(0.0);
      }
      aps.push_back(*average_precision(curve, n_points, RecallGrid::IncludeZero));
    }
    result.per_class[cls] = mean(aps);
    result.per_threshold[cls] = aps;
  }
  if (!result.per_class.empty()) {
    double s = 0.0;
    for (const auto& [cls, ap] : result.per_class) s += ap;
    result.map = s / static_cast<double>(result.per_class.size());
  }
  return result;
}

std::map<std::string, RopeResult> rope_score(std::span<const Object3D> dets, std::span<const Object3D> gts,
                                             const EvalConfig& cfg, const grouping::ClassGrouping& grouping) {
  std::map<std::string, RopeResult> out;
  for (const auto& sc : grouping.superclasses()) {
    const CellResult cell = evaluate_bev_cell(dets, gts, sc.name, cfg.threshold_for(sc.name), cfg, grouping);
    RopeResult r;
    r.ap = cell.ap;
    if (!cell.matches.empty()) {
      double center = 0.0, orient = 0.0, area = 0.0;
      for (const auto& [d, g] : cell.matches) {
        const double dist = std::hypot(d->box.x - g->box.x, d->box.y - g->box.y);
        center += 1.0 - std::min(1.0, dist / cfg.rope.center_norm);
        orient += orientation_similarity(d->box.yaw, g->box.yaw);
        const double ad = d->box.w * d->box.l, ag = g->box.w * g->box.l;
        area += std::min(ad, ag) / std::max(ad, ag);
      }
      const double n = static_cast<double>(cell.matches.size());
      r.center_similarity = center / n;
      r.orientation_similarity = orient / n;
      r.area_similarity = area / n;
      if (r.ap) {
        const double sims = (*r.center_similarity + *r.orientation_similarity + *r.area_similarity) / 3.0;
        r.composite = cfg.rope.ap_weight * *r.ap + (1.0 - cfg.rope.ap_weight) * sims;
      }
    }
    out[sc.name] = r;
  }
  return out;
}

namespace {

double projected_height(const Object3D& o, const geom::CameraCalib& calib) {
  try {
    return geom::project_cuboid(calib, o.box, true).height();
  } catch (const Error&) {
    return 0.0;
  }
}

}  // namespace

std::vector<CellResult> breakdown(std::span<const Object3D> dets, std::span<const Object3D> gts, BreakdownAxis axis,
                                  const EvalConfig& cfg, const grouping::ClassGrouping& grouping,
                                  const geom::CameraCalib* calib) {
  std::vector<std::pair<std::string, CarePredicate>> slices;
  switch (axis) {
    case BreakdownAxis::Occlusion:
    case BreakdownAxis::Truncation: {
      const bool occ = axis == BreakdownAxis::Occlusion;
      for (const Object3D& g : gts) {
        if (!(occ ? g.occlusion : g.truncation)) {
          throw DataError(std::string("breakdown: ground truth in frame ") + std::to_string(g.frame) + " has no " +
                          (occ ? "occlusion" : "truncation") + " tag");
        }
      }
      for (const Range& r : occ ? cfg.occlusion_ranges : cfg.truncation_ranges) {
        slices.emplace_back(std::string(occ ? "occlusion:" : "truncation:") + r.name(), [r, occ](const Object3D& g) {
          return r.contains(occ ? *g.occlusion : *g.truncation);
        });
      }
      break;
    }
    case BreakdownAxis::Difficulty: {
      if (!calib) throw DataError("breakdown: difficulty levels need a calibration");
      const geom::CameraCalib cam = *calib;
      for (const DifficultyRule& rule : cfg.difficulties) {
        slices.emplace_back(rule.name, [rule, cam](const Object3D& g) {
          return projected_height(g, cam) >= rule.min_height_px && g.occlusion.value_or(0.0) <= rule.max_occlusion &&
                 g.truncation.value_or(0.0) <= rule.max_truncation;
        });
      }
      break;
    }
  }
  std::vector<CellResult> out;
  for (const auto& sc : grouping.superclasses()) {
    for (const auto& [name, pred] : slices) {
      CellResult cell = evaluate_bev_cell(dets, gts, sc.name, cfg.threshold_for(sc.name), cfg, grouping, pred);
      cell.slice = name;
      out.push_back(std::move(cell));
    }
  }
  return out;
}

const CellResult* EvalReport::find(const std::string& superclass, const std::string& slice) const {
  for (const CellResult& c : cells) {
    if (c.superclass == superclass && c.slice == slice) return &c;
  }
  return nullptr;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.' && c != '_') c = '_';
  }
  return s;
}

}  // namespace

json EvalReport::to_json() const {
  json j;
  j["cells"] = json::array();
  for (const CellResult& c : cells) {
    j["cells"].push_back({{"superclass", c.superclass},
                          {"slice", c.slice},
                          {"threshold", c.threshold},
                          {"ap", opt(c.ap)},
                          {"aos", opt(c.aos)},
                          {"tp", c.tp},
                          {"fp", c.fp},
                          {"num_gt", c.num_gt}});
  }
  j["rope"] = json::object();
  for (const auto& [name, r] : rope) {
    j["rope"][name] = {{"ap", opt(r.ap)},
                       {"center_similarity", opt(r.center_similarity)},
                       {"orientation_similarity", opt(r.orientation_similarity)},
                       {"area_similarity", opt(r.area_similarity)},
                       {"composite", opt(r.composite)}};
  }
  if (coco) {
    j["map_2d"] = {{"map", opt(coco->map)}, {"per_class", coco->per_class}, {"per_threshold", coco->per_threshold}};
  } else {
    j["map_2d"] = nullptr;
  }
  return j;
}

void EvalReport::write_pr_csv(const std::filesystem::path& dir, int n_points) const {
  std::filesystem::create_directories(dir);
  const auto recall = recall_points(n_points, RecallGrid::ExcludeZero);
  for (const CellResult& c : cells) {
    if (c.num_gt == 0) continue;
    const auto path = dir / (sanitize(c.superclass + "_" + c.slice) + ".csv");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const auto prec = interpolated_precision(c.curve, n_points, RecallGrid::ExcludeZero);
    const auto orient = interpolated_orientation(c.curve, n_points, RecallGrid::ExcludeZero);
    out << "recall,precision,orientation_similarity\n";
    char line[96];
    for (std::size_t i = 0; i < recall.size(); ++i) {
      std::snprintf(line, sizeof(line), "%.6f,%.17g,%.17g\n", recall[i], prec[i], orient[i]);
      out << line;
    }
  }
}

EvalReport evaluate(const EvalInputs& in, const EvalConfig& cfg, const grouping::ClassGrouping& grouping) {
  cfg.validate();
  EvalReport report;
  for (const auto& sc : grouping.superclasses()) {
    report.cells.push_back(evaluate_bev_cell(in.det3d, in.gt3d, sc.name, cfg.threshold_for(sc.name), cfg, grouping));
  }
  auto append = [&](std::vector<CellResult> cells) {
    for (CellResult& c : cells) report.cells.push_back(std::move(c));
  };
  if (in.calib) append(breakdown(in.det3d, in.gt3d, BreakdownAxis::Difficulty, cfg, grouping, in.calib));
  const bool all_occ = std::all_of(in.gt3d.begin(), in.gt3d.end(), [](const Object3D& g) { return g.occlusion.has_value(); });
  const bool all_trunc =
      std::all_of(in.gt3d.begin(), in.gt3d.end(), [](const Object3D& g) { return g.truncation.has_value(); });
  if (!in.gt3d.empty() && all_occ) append(breakdown(in.det3d, in.gt3d, BreakdownAxis::Occlusion, cfg, grouping));
  if (!in.gt3d.empty() && all_trunc) append(breakdown(in.det3d, in.gt3d, BreakdownAxis::Truncation, cfg, grouping));
  report.rope = rope_score(in.det3d, in.gt3d, cfg, grouping);
  if (!in.det2d.empty() || !in.gt2d.empty()) report.coco = map_coco_2d(in.det2d, in.gt2d, nullptr, cfg.coco_points);
  return report;
}

}  // namespace bevprompt::metrics
