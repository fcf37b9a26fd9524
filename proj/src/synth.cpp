#include "bevprompt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "bevprompt/errors.hpp"
#include "bevprompt/grouping.hpp"
#include "bevprompt/rng.hpp"

namespace bevprompt::synth {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamCamera = 0x5ca3;
constexpr std::uint64_t kStreamPlacement = 0x91ace;
constexpr std::uint64_t kStream2D = 0x2d;
constexpr std::uint64_t kStreamFalsePositive = 0xf9;
constexpr std::uint64_t kStream3D = 0x3d;

constexpr int kMaxAttempts = 1000;

json interval_json(const Interval& i) { return json::array({i.lo, i.hi}); }

Interval interval_from(const json& j, const char* key, Interval fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  return {v.at(0).get<double>(), v.at(1).get<double>()};
}

void check_interval(const Interval& i, const char* what, bool allow_point = false) {
  if (!(i.lo < i.hi || (allow_point && i.lo == i.hi))) {
    throw ConfigError(std::string("scene config: degenerate range for ") + what);
  }
}

void check_rate(double r, const char* what) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(std::string("detector noise: ") + what + " outside [0, 1]");
}

void check_sigma(double s, const char* what) {
  if (!(s >= 0.0)) throw ConfigError(std::string("detector noise: ") + what + " must be non-negative");
}

}  // namespace

SceneConfig SceneConfig::standard() {
  SceneConfig c;
  c.sizes = {
      {"car", {1.85, 1.50, 4.50, 0.10, 0.10, 0.30}},        {"van", {2.00, 2.00, 5.00, 0.10, 0.15, 0.30}},
      {"truck", {2.50, 3.20, 9.00, 0.15, 0.30, 1.00}},      {"bus", {2.60, 3.20, 11.00, 0.10, 0.20, 0.80}},
      {"bicyclist", {0.60, 1.70, 1.80, 0.05, 0.08, 0.10}},  {"tricyclist", {1.20, 1.70, 2.50, 0.10, 0.10, 0.20}},
      {"motorcyclist", {0.80, 1.60, 2.00, 0.08, 0.08, 0.15}}, {"barrowlist", {0.80, 1.30, 1.60, 0.08, 0.10, 0.15}},
      {"pedestrian", {0.60, 1.70, 0.60, 0.05, 0.10, 0.05}},
  };
  c.class_weights = {{"car", 0.50},       {"van", 0.10},         {"truck", 0.05},
                     {"bus", 0.05},       {"bicyclist", 0.07},   {"tricyclist", 0.03},
                     {"motorcyclist", 0.07}, {"barrowlist", 0.03}, {"pedestrian", 0.10}};
  c.roads = {
      {0.0, 0.0, 0.0, {-5.25, -1.75, 1.75, 5.25}, {12.0, 70.0}},
      {40.0, 0.0, std::numbers::pi / 2, {-5.25, -1.75, 1.75, 5.25}, {-25.0, 25.0}},
  };
  return c;
}

void SceneConfig::validate() const {
  if (frames < 1) throw ConfigError("scene config: frames must be >= 1");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("scene config: invalid object count range");
  if (sizes.empty() || class_weights.empty()) throw ConfigError("scene config: no classes configured");
  double total = 0.0;
  for (const auto& [label, weight] : class_weights) {
    if (!sizes.count(label)) throw ConfigError("scene config: class '" + label + "' has no size model");
    if (!(weight >= 0.0)) throw ConfigError("scene config: negative class weight for '" + label + "'");
    total += weight;
  }
  if (!(total > 0.0)) throw ConfigError("scene config: class weights sum to zero");
  for (const auto& [label, s] : sizes) {
    if (!(s.w > 0 && s.h > 0 && s.l > 0) || s.sigma_w < 0 || s.sigma_h < 0 || s.sigma_l < 0) {
      throw ConfigError("scene config: invalid size model for '" + label + "'");
    }
  }
  if (image_width < 1 || image_height < 1 || !(focal > 0.0)) throw ConfigError("scene config: invalid camera");
  check_interval(camera_height, "camera_height", true);
  check_interval(camera_pitch, "camera_pitch", true);
  if (!(camera_height.lo > 0.0)) throw ConfigError("scene config: camera must be above the ground");
  if (roads.empty()) throw ConfigError("scene config: no roads");
  for (const Road& r : roads) {
    if (r.lane_offsets.empty()) throw ConfigError("scene config: road without lanes");
    check_interval(r.extent, "road extent");
  }
  if (lateral_jitter < 0 || heading_jitter < 0 || min_visible_area < 0) {
    throw ConfigError("scene config: jitter and visibility thresholds must be non-negative");
  }
}

json SceneConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["frames"] = frames;
  j["objects"] = {min_objects, max_objects};
  for (const auto& [label, s] : sizes) {
    j["sizes"][label] = {{"mean", {s.w, s.h, s.l}}, {"sigma", {s.sigma_w, s.sigma_h, s.sigma_l}}};
  }
  j["class_weights"] = class_weights;
  j["image_width"] = image_width;
  j["image_height"] = image_height;
  j["focal"] = focal;
  j["camera_height"] = interval_json(camera_height);
  j["camera_pitch"] = interval_json(camera_pitch);
  j["roads"] = json::array();
  for (const Road& r : roads) {
    j["roads"].push_back({{"axis", {r.axis_x, r.axis_y}},
                          {"heading", r.heading},
                          {"lane_offsets", r.lane_offsets},
                          {"extent", interval_json(r.extent)}});
  }
  j["lateral_jitter"] = lateral_jitter;
  j["heading_jitter"] = heading_jitter;
  j["min_visible_area"] = min_visible_area;
  return j;
}

SceneConfig SceneConfig::from_json(const json& j) {
  SceneConfig c = standard();
  try {
    c.seed = j.value("seed", c.seed);
    c.frames = j.value("frames", c.frames);
    if (j.contains("objects")) {
      c.min_objects = j.at("objects").at(0).get<int>();
      c.max_objects = j.at("objects").at(1).get<int>();
    }
    if (j.contains("sizes")) {
      c.sizes.clear();
      for (const auto& [label, s] : j.at("sizes").items()) {
        const auto& m = s.at("mean");
        const json sg = s.value("sigma", json::array({0.0, 0.0, 0.0}));
        c.sizes[label] = {m.at(0).get<double>(),  m.at(1).get<double>(),  m.at(2).get<double>(),
                          sg.at(0).get<double>(), sg.at(1).get<double>(), sg.at(2).get<double>()};
      }
    }
    if (j.contains("class_weights")) c.class_weights = j.at("class_weights").get<std::map<std::string, double>>();
    c.image_width = j.value("image_width", c.image_width);
    c.image_height = j.value("image_height", c.image_height);
    c.focal = j.value("focal", c.focal);
    c.camera_height = interval_from(j, "camera_height", c.camera_height);
    c.camera_pitch = interval_from(j, "camera_pitch", c.camera_pitch);
    if (j.contains("roads")) {
      c.roads.clear();
      for (const auto& r : j.at("roads")) {
        c.roads.push_back({r.at("axis").at(0).get<double>(), r.at("axis").at(1).get<double>(),
                           r.value("heading", 0.0), r.at("lane_offsets").get<std::vector<double>>(),
                           interval_from(r, "extent", {})});
      }
    }
    c.lateral_jitter = j.value("lateral_jitter", c.lateral_jitter);
    c.heading_jitter = j.value("heading_jitter", c.heading_jitter);
    c.min_visible_area = j.value("min_visible_area", c.min_visible_area);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

void DetectorNoise::validate() const {
  check_sigma(center_sigma_px, "center_sigma_px");
  check_sigma(size_sigma_px, "size_sigma_px");
  check_rate(fn_rate, "fn_rate");
  check_rate(fp_rate, "fp_rate");
  check_rate(label_confusion, "label_confusion");
  if (!(score_scale_px > 0.0)) throw ConfigError("detector noise: score_scale_px must be positive");
  if (!(fp_score.lo >= 0.0 && fp_score.lo <= fp_score.hi && fp_score.hi <= 1.0)) {
    throw ConfigError("detector noise: fp_score must be a range within [0, 1]");
  }
  check_sigma(position_sigma, "position_sigma");
  check_sigma(yaw_sigma, "yaw_sigma");
  check_sigma(size_sigma, "size_sigma");
  if (!std::isfinite(depth_bias)) throw ConfigError("detector noise: depth_bias must be finite");
}

json DetectorNoise::to_json() const {
  return {{"center_sigma_px", center_sigma_px},
          {"size_sigma_px", size_sigma_px},
          {"fn_rate", fn_rate},
          {"fp_rate", fp_rate},
          {"label_confusion", label_confusion},
          {"score_scale_px", score_scale_px},
          {"fp_score", interval_json(fp_score)},
          {"position_sigma", position_sigma},
          {"yaw_sigma", yaw_sigma},
          {"size_sigma", size_sigma},
          {"depth_bias", depth_bias}};
}

DetectorNoise DetectorNoise::from_json(const json& j) {
  DetectorNoise n;
  try {
    n.center_sigma_px = j.value("center_sigma_px", n.center_sigma_px);
    n.size_sigma_px = j.value("size_sigma_px", n.size_sigma_px);
    n.fn_rate = j.value("fn_rate", n.fn_rate);
    n.fp_rate = j.value("fp_rate", n.fp_rate);
    n.label_confusion = j.value("label_confusion", n.label_confusion);
    n.score_scale_px = j.value("score_scale_px", n.score_scale_px);
    n.fp_score = interval_from(j, "fp_score", n.fp_score);
    n.position_sigma = j.value("position_sigma", n.position_sigma);
    n.yaw_sigma = j.value("yaw_sigma", n.yaw_sigma);
    n.size_sigma = j.value("size_sigma", n.size_sigma);
    n.depth_bias = j.value("depth_bias", n.depth_bias);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("detector noise: ") + e.what());
  }
  n.validate();
  return n;
}

// ---------------------------------------------------------------------------

geom::CameraCalib scene_camera(const SceneConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kStreamCamera));
  const double height = rng.uniform(cfg.camera_height.lo, cfg.camera_height.hi);
  const double pitch = rng.uniform(cfg.camera_pitch.lo, cfg.camera_pitch.hi);

  const geom::Vec3<double> right(0.0, -1.0, 0.0);
  const geom::Vec3<double> forward(std::cos(pitch), 0.0, -std::sin(pitch));
  const geom::Vec3<double> down = forward.cross(right);
  geom::CameraCalib cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * geom::Vec3<double>(0.0, 0.0, height);
  cam.fx = cam.fy = cfg.focal;
  cam.cx = cfg.image_width / 2.0;
  cam.cy = cfg.image_height / 2.0;
  cam.image_width = cfg.image_width;
  cam.image_height = cfg.image_height;
  cam.validate();
  return cam;
}

double union_area_within(const std::vector<geom::Box2D>& boxes, const geom::Box2D& window) {
  std::vector<geom::Box2D> clipped;
  std::vector<double> xs{window.x_min, window.x_max}, ys{window.y_min, window.y_max};
  for (const geom::Box2D& b : boxes) {
    geom::Box2D c{std::max(b.x_min, window.x_min), std::max(b.y_min, window.y_min), std::min(b.x_max, window.x_max),
                  std::min(b.y_max, window.y_max), {}, 1.0};
    if (!(c.x_min < c.x_max && c.y_min < c.y_max)) continue;
    clipped.push_back(c);
    xs.insert(xs.end(), {c.x_min, c.x_max});
    ys.insert(ys.end(), {c.y_min, c.y_max});
  }
  if (clipped.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double mx = (xs[i] + xs[i + 1]) / 2;
    for (std::size_t k = 0; k + 1 < ys.size(); ++k) {
      const double my = (ys[k] + ys[k + 1]) / 2;
      for (const geom::Box2D& c : clipped) {
        if (mx > c.x_min && mx < c.x_max && my > c.y_min && my < c.y_max) {
          area += (xs[i + 1] - xs[i]) * (ys[k + 1] - ys[k]);
          break;
        }
      }
    }
  }
  return area;
}

std::vector<Visibility> visibility(const geom::CameraCalib& calib, const std::vector<geom::Cuboid3D>& cuboids) {
  const std::size_t n = cuboids.size();
  std::vector<std::optional<geom::Box2D>> clipped(n);
  std::vector<double> depth(n);
  std::vector<Visibility> out(n, Visibility{1.0, 1.0});
  for (std::size_t i = 0; i < n; ++i) {
    depth[i] = calib.to_camera(cuboids[i].center()).z();
    try {
      const geom::Box2D full = geom::project_cuboid(calib, cuboids[i], false);
      const geom::Box2D box = geom::clip_to_image(full, calib.image_width, calib.image_height);
      clipped[i] = box;
      out[i].truncation = std::clamp(1.0 - box.area() / full.area(), 0.0, 1.0);
    } catch (const Error&) {
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!clipped[i]) continue;
    std::vector<geom::Box2D> nearer;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i && clipped[k] && depth[k] < depth[i]) nearer.push_back(*clipped[k]);
    }
    out[i].occlusion = std::clamp(union_area_within(nearer, *clipped[i]) / clipped[i]->area(), 0.0, 1.0);
  }
  return out;
}

namespace {

std::string pick_class(const SceneConfig& cfg, Rng& rng) {
  double total = 0.0;
  for (const auto& [label, w] : cfg.class_weights) total += w;
  double u = rng.uniform() * total;
  std::string last;
  for (const auto& [label, w] : cfg.class_weights) {
    if (w <= 0.0) continue;
    last = label;
    if (u < w) return label;
    u -= w;
  }
  return last;
}

bool placeable(const SceneConfig& cfg, const geom::CameraCalib& cam, const geom::Cuboid3D& c,
               const std::vector<geom::Cuboid3D>& placed) {
  for (const auto& corner : geom::cuboid_corners(c)) {
    if (cam.to_camera(corner).z() < 1.0) return false;
  }
  try {
    if (geom::project_cuboid(cam, c, true).area() < cfg.min_visible_area) return false;
  } catch (const Error&) {
    return false;
  }
  const geom::RotatedBoxBEV fp = geom::bev_footprint(c);
  for (const geom::Cuboid3D& other : placed) {
    if (geom::iou_rotated(fp, geom::bev_footprint(other)) > 0.0) return false;
  }
  return true;
}

}  // namespace

Scene gen_scene(const SceneConfig& cfg, int frame) {
  cfg.validate();
  Scene scene;
  scene.frame = frame;
  scene.calib = scene_camera(cfg);
  Rng rng(derive_seed(cfg.seed, kStreamPlacement, static_cast<std::uint64_t>(frame)));
  const auto target = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));

  std::vector<geom::Cuboid3D> placed;
  int attempts = 0;
  while (static_cast<int>(placed.size()) < target && attempts < kMaxAttempts * std::max(target, 1)) {
    ++attempts;
    geom::Cuboid3D c;
    c.label = pick_class(cfg, rng);
    const SizeModel& s = cfg.sizes.at(c.label);
    c.w = std::max(0.2 * s.w, rng.normal(s.w, s.sigma_w));
    c.h = std::max(0.2 * s.h, rng.normal(s.h, s.sigma_h));
    c.l = std::max(0.2 * s.l, rng.normal(s.l, s.sigma_l));
    const Road& road = cfg.roads[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cfg.roads.size()) - 1))];
    const double offset =
        road.lane_offsets[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(road.lane_offsets.size()) - 1))];
    const double along = rng.uniform(road.extent.lo, road.extent.hi);
    const double lateral = offset + rng.normal(0.0, cfg.lateral_jitter);
    const double ch = std::cos(road.heading), sh = std::sin(road.heading);
    c.x = road.axis_x + along * ch - lateral * sh;
    c.y = road.axis_y + along * sh + lateral * ch;
    c.z = c.h / 2;
    const double direction = offset > 0.0 ? std::numbers::pi : 0.0;
    c.yaw = geom::normalize_angle(road.heading + direction + rng.normal(0.0, cfg.heading_jitter));
    c.score = 1.0;
    if (placeable(cfg, scene.calib, c, placed)) placed.push_back(c);
    if (placed.empty() && attempts >= kMaxAttempts) break;
  }
  if (placed.empty() && target > 0) {
    throw ConfigError("scene config yields no placeable objects after " + std::to_string(kMaxAttempts) + " attempts");
  }
  if (static_cast<int>(placed.size()) < cfg.min_objects) {
    throw ConfigError("scene config: only " + std::to_string(placed.size()) + " of at least " +
                      std::to_string(cfg.min_objects) + " objects could be placed in frame " + std::to_string(frame));
  }

  const std::vector<Visibility> vis = visibility(scene.calib, placed);
  for (std::size_t i = 0; i < placed.size(); ++i) {
    scene.objects.push_back({frame, placed[i], vis[i].occlusion, vis[i].truncation});
  }
  return scene;
}

std::vector<Scene> gen_dataset(const SceneConfig& cfg, int threads) {
  cfg.validate();
  std::vector<Scene> scenes(static_cast<std::size_t>(cfg.frames));
  const int workers = std::clamp(threads, 1, cfg.frames);
  if (workers == 1) {
    for (int f = 0; f < cfg.frames; ++f) scenes[f] = gen_scene(cfg, f);
    return scenes;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int f = w; f < cfg.frames; f += workers) scenes[f] = gen_scene(cfg, f);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return scenes;
}

std::vector<Object2D> derive_2d(const std::vector<Object3D>& objects, const geom::CameraCalib& calib) {
  std::vector<Object2D> out;
  for (const Object3D& o : objects) {
    try {
      geom::Box2D box = geom::project_cuboid(calib, o.box, true);
      box.score = 1.0;
      out.push_back({o.frame, box, o.occlusion, o.truncation});
    } catch (const Error&) {
    }
  }
  return out;
}

std::vector<Object2D> simulate_2d_detector(const Scene& scene, const DetectorNoise& noise, std::uint64_t seed) {
  noise.validate();
  const auto& vocab = grouping::dair_vocabulary();
  const auto frame = static_cast<std::uint64_t>(scene.frame);
  Rng rng(derive_seed(seed, kStream2D, frame));
  Rng fp_rng(derive_seed(seed, kStreamFalsePositive, frame));
  const double W = scene.calib.image_width, H = scene.calib.image_height;

  std::vector<Object2D> out;
  for (const Object2D& gt : derive_2d(scene.objects, scene.calib)) {
    // Fixed draw count per object keeps the stream aligned across noise settings.
    const bool dropped = rng.bernoulli(noise.fn_rate);
    const double dx = noise.center_sigma_px * rng.normal();
    const double dy = noise.center_sigma_px * rng.normal();
    const double dw = noise.size_sigma_px * rng.normal();
    const double dh = noise.size_sigma_px * rng.normal();
    const bool confused = rng.bernoulli(noise.label_confusion);
    const auto other = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(vocab.size()) - 2));

    if (!dropped) {
      geom::Box2D b = gt.box;
      b.x_min += dx - dw / 2;
      b.x_max += dx + dw / 2;
      b.y_min += dy - dh / 2;
      b.y_max += dy + dh / 2;
      if (b.x_max - b.x_min < 1.0 || b.y_max - b.y_min < 1.0) {
        b = geom::Box2D::from_center_size((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2,
                                          std::max(1.0, b.x_max - b.x_min), std::max(1.0, b.y_max - b.y_min));
      }
      try {
        b = geom::clip_to_image(b, scene.calib.image_width, scene.calib.image_height);
        const double jitter = std::sqrt(dx * dx + dy * dy + dw * dw + dh * dh);
        b.score = 1.0 / (1.0 + jitter / noise.score_scale_px);
        b.label = gt.box.label;
        if (confused) {
          const auto self = static_cast<std::size_t>(std::find(vocab.begin(), vocab.end(), gt.box.label) - vocab.begin());
          b.label = vocab[other >= self ? other + 1 : other];
        }
        out.push_back({scene.frame, b, gt.occlusion, gt.truncation});
      } catch (const OffImageError&) {
      }
    }

    const bool spawn_fp = fp_rng.bernoulli(noise.fp_rate);
    const double fw = fp_rng.uniform(20.0, 200.0), fh = fp_rng.uniform(20.0, 200.0);
    const double fx = fp_rng.uniform(0.0, W), fy = fp_rng.uniform(0.0, H);
    const auto label = static_cast<std::size_t>(fp_rng.uniform_int(0, static_cast<long>(vocab.size()) - 1));
    const double score = fp_rng.uniform(noise.fp_score.lo, noise.fp_score.hi);
    if (spawn_fp) {
      try {
        geom::Box2D b = geom::clip_to_image(geom::Box2D::from_center_size(fx, fy, fw, fh), scene.calib.image_width,
                                            scene.calib.image_height);
        b.label = vocab[label];
        b.score = score;
        out.push_back({scene.frame, b, std::nullopt, std::nullopt});
      } catch (const OffImageError&) {
      }
    }
  }
  return out;
}

std::vector<Object3D> simulate_3d_detector(const Scene& scene, const DetectorNoise& noise, std::uint64_t seed) {
  noise.validate();
  Rng rng(derive_seed(seed, kStream3D, static_cast<std::uint64_t>(scene.frame)));
  const geom::Vec3<double> camera_center = -scene.calib.rotation.transpose() * scene.calib.translation;

  std::vector<Object3D> out;
  for (const Object3D& gt : scene.objects) {
    const double dx = noise.position_sigma * rng.normal();
    const double dy = noise.position_sigma * rng.normal();
    const double dyaw = noise.yaw_sigma * rng.normal();
    const double sw = noise.size_sigma * rng.normal();
    const double sh = noise.size_sigma * rng.normal();
    const double sl = noise.size_sigma * rng.normal();

    Object3D d = gt;
    double bx = 0.0, by = 0.0;
    if (noise.depth_bias != 0.0) {
      const double rx = gt.box.x - camera_center.x(), ry = gt.box.y - camera_center.y();
      const double norm = std::hypot(rx, ry);
      if (norm > 0.0) {
        bx = noise.depth_bias * rx / norm;
        by = noise.depth_bias * ry / norm;
      }
    }
    d.box.x += dx + bx;
    d.box.y += dy + by;
    if (dyaw != 0.0) d.box.yaw = geom::normalize_angle(gt.box.yaw + dyaw);
    if (noise.size_sigma > 0.0) {
      d.box.w *= std::exp(sw);
      d.box.h *= std::exp(sh);
      d.box.l *= std::exp(sl);
      d.box.z = d.box.h / 2;
    }
    d.box.score = 1.0 / (1.0 + std::hypot(dx + bx, dy + by));
    out.push_back(d);
  }
  return out;
}

int feature_channels(int positional) { return 5 + positional; }

fusion::ImageFeature render_toy_features(const std::vector<Object3D>& objects, const geom::CameraCalib& calib,
                                         int grid_h, int grid_w, int positional) {
  if (grid_h < 1 || grid_w < 1 || calib.image_height % grid_h != 0 || calib.image_width % grid_w != 0) {
    throw ConfigError("render_toy_features: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                      " does not divide the image");
  }
  if (positional < 0 || positional % 4 != 0) {
    throw ConfigError("render_toy_features: positional channel count must be a non-negative multiple of 4");
  }
  static const grouping::ClassGrouping groups = grouping::builtin_grouping("functionality");

  struct Projected {
    geom::Box2D box;
    double inv_depth;
    std::size_t group;
  };
  std::vector<Projected> projected;
  for (const Object3D& o : objects) {
    try {
      const geom::Box2D box = geom::project_cuboid(calib, o.box, true);
      const double depth = calib.to_camera(o.box.center()).z();
      projected.push_back({box, 10.0 / depth, groups.route(o.box.label).head});
    } catch (const Error&) {
    }
  }
  std::vector<geom::Box2D> boxes;
  for (const auto& p : projected) boxes.push_back(p.box);

  const double cell_w = static_cast<double>(calib.image_width) / grid_w;
  const double cell_h = static_cast<double>(calib.image_height) / grid_h;
  fusion::ImageFeature out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.features = nn::Tensor::Zero(grid_h * grid_w, feature_channels(positional));
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      const Eigen::Index row = r * grid_w + c;
      const geom::Box2D cell{c * cell_w, r * cell_h, (c + 1) * cell_w, (r + 1) * cell_h, {}, 1.0};
      out.features(row, 0) = union_area_within(boxes, cell) / cell.area();
      double weight = 0.0, inv_depth = 0.0;
      double mix[3] = {0.0, 0.0, 0.0};
      for (const auto& p : projected) {
        const double a = geom::intersection_area(p.box, cell);
        if (a <= 0.0) continue;
        weight += a;
        inv_depth += a * p.inv_depth;
        mix[std::min<std::size_t>(p.group, 2)] += a;
      }
      if (weight > 0.0) {
        out.features(row, 1) = inv_depth / weight;
        for (int k = 0; k < 3; ++k) out.features(row, 2 + k) = mix[k] / weight;
      }
      const double u = (c + 0.5) / grid_w, v = (r + 0.5) / grid_h;
      for (int k = 0; k < positional / 4; ++k) {
        const double freq = std::numbers::pi * std::ldexp(1.0, k);
        out.features(row, 5 + 4 * k) = std::sin(freq * u);
        out.features(row, 6 + 4 * k) = std::cos(freq * u);
        out.features(row, 7 + 4 * k) = std::sin(freq * v);
        out.features(row, 8 + 4 * k) = std::cos(freq * v);
      }
    }
  }
  return out;
}

}  // namespace bevprompt::synth
