#include <doctest.h>

#include <set>

#include "bevprompt/errors.hpp"
#include "bevprompt/metrics.hpp"
#include "bevprompt/synth.hpp"
#include "support.hpp"

using namespace bevprompt;
using synth::DetectorNoise;
using synth::SceneConfig;

namespace {

const auto kGroups = grouping::builtin_grouping("functionality");

std::string dump(const synth::Scene& s) {
  nlohmann::json j = {{"frame", s.frame}, {"calib", to_json(s.calib)}, {"objects", nlohmann::json::array()}};
  for (const auto& o : s.objects) j["objects"].push_back(to_json(o));
  return j.dump();
}

SceneConfig small(std::uint64_t seed, int frames) {
  SceneConfig c = SceneConfig::standard();
  c.seed = seed;
  c.frames = frames;
  return c;
}

/// Unit-cell rasterization of the union of boxes inside a window.
double raster_union(const std::vector<geom::Box2D>& boxes, const geom::Box2D& w, double step) {
  double area = 0;
  for (double y = w.y_min + step / 2; y < w.y_max; y += step) {
    for (double x = w.x_min + step / 2; x < w.x_max; x += step) {
      for (const auto& b : boxes) {
        if (x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max) {
          area += step * step;
          break;
        }
      }
    }
  }
  return area;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("scenes are deterministic") {
    const SceneConfig cfg = small(7, 5);
    for (int f = 0; f < 5; ++f) CHECK(dump(synth::gen_scene(cfg, f)) == dump(synth::gen_scene(cfg, f)));
    CHECK(dump(synth::gen_scene(cfg, 0)) != dump(synth::gen_scene(cfg, 1)));
    CHECK(dump(synth::gen_scene(small(8, 1), 0)) != dump(synth::gen_scene(cfg, 0)));
  }

  TEST_CASE("parallel generation equals serial generation") {
    const SceneConfig cfg = small(3, 12);
    const auto a = synth::gen_dataset(cfg, 1);
    const auto b = synth::gen_dataset(cfg, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(dump(a[i]) == dump(b[i]));
  }

  TEST_CASE("object counts and ground-truth invariants over 1000 frames") {
    const SceneConfig cfg = small(11, 1000);
    const auto scenes = synth::gen_dataset(cfg, 4);
    REQUIRE(scenes.size() == 1000);
    for (const auto& s : scenes) {
      const int n = static_cast<int>(s.objects.size());
      CHECK(n >= cfg.min_objects);
      CHECK(n <= cfg.max_objects);
      CHECK_NOTHROW(s.calib.validate());
      for (const auto& o : s.objects) {
        CHECK_NOTHROW(o.box.validate());
        CHECK(o.box.z == doctest::Approx(o.box.h / 2));
        CHECK(kGroups.contains(o.box.label));
        CHECK((*o.occlusion >= 0 && *o.occlusion <= 1));
        CHECK((*o.truncation >= 0 && *o.truncation <= 1));
        const auto box = geom::project_cuboid(s.calib, o.box, true);
        CHECK(box.area() >= cfg.min_visible_area);
      }
    }
  }

  TEST_CASE("generation fails when nothing fits") {
    SceneConfig cfg = small(1, 1);
    cfg.min_objects = cfg.max_objects = 500;
    CHECK_THROWS_AS(synth::gen_scene(cfg, 0), ConfigError);
    cfg = small(1, 1);
    cfg.roads[0].extent = {-30, -20};
    cfg.roads.resize(1);
    CHECK_THROWS_AS(synth::gen_scene(cfg, 0), ConfigError);
  }

  TEST_CASE("occlusion tags") {
    const auto calib = synth::scene_camera(SceneConfig::standard());
    const geom::Cuboid3D front{20, 0, 0.8, 1.8, 1.6, 4.5, 0, "car", 1};
    const geom::Cuboid3D lone{20, 12, 0.8, 1.8, 1.6, 4.5, 0, "car", 1};
    geom::Cuboid3D rear = front;
    rear.x += 0.3;
    const auto v = synth::visibility(calib, {front, rear, lone});
    CHECK(v[0].occlusion == 0.0);
    CHECK(v[1].occlusion > 0.9);
    CHECK(v[2].occlusion == 0.0);
    CHECK(v[2].truncation == 0.0);
    rear.x = front.x + 0.01;
    CHECK(synth::visibility(calib, {front, rear})[1].occlusion > 0.99);
  }

  TEST_CASE("union area matches rasterization") {
    Rng rng(2);
    for (int k = 0; k < 10; ++k) {
      std::vector<geom::Box2D> boxes;
      for (int i = 0; i < 5; ++i) {
        const double x = std::floor(rng.uniform(0, 80)), y = std::floor(rng.uniform(0, 80));
        boxes.push_back({x, y, x + std::floor(rng.uniform(2, 30)), y + std::floor(rng.uniform(2, 30))});
      }
      const geom::Box2D window{10, 10, 90, 90};
      CHECK(synth::union_area_within(boxes, window) == doctest::Approx(raster_union(boxes, window, 0.25)));
    }
  }

  TEST_CASE("zero-noise detectors reproduce the ground truth") {
    const auto scenes = synth::gen_dataset(small(5, 10));
    std::vector<Object3D> gt3, d3;
    std::vector<Object2D> gt2, d2;
    for (const auto& s : scenes) {
      const auto g2 = synth::derive_2d(s.objects, s.calib);
      const auto det2 = synth::simulate_2d_detector(s, {}, 1);
      REQUIRE(det2.size() == g2.size());
      for (std::size_t i = 0; i < g2.size(); ++i) {
        CHECK(det2[i].box.x_min == g2[i].box.x_min);
        CHECK(det2[i].box.y_max == g2[i].box.y_max);
        CHECK(det2[i].box.score == 1.0);
        CHECK(det2[i].box.label == g2[i].box.label);
      }
      const auto det3 = synth::simulate_3d_detector(s, {}, 1);
      REQUIRE(det3.size() == s.objects.size());
      for (std::size_t i = 0; i < det3.size(); ++i) {
        CHECK(det3[i].box.x == s.objects[i].box.x);
        CHECK(det3[i].box.yaw == s.objects[i].box.yaw);
        CHECK(det3[i].box.w == s.objects[i].box.w);
      }
      gt3.insert(gt3.end(), s.objects.begin(), s.objects.end());
      d3.insert(d3.end(), det3.begin(), det3.end());
      gt2.insert(gt2.end(), g2.begin(), g2.end());
      d2.insert(d2.end(), det2.begin(), det2.end());
    }
    for (const auto& [sc, ap] : metrics::ap_bev(d3, gt3, {}, kGroups)) {
      if (ap) CHECK(*ap == 1.0);
    }
    for (const auto& [sc, a] : metrics::aos(d3, gt3, {}, kGroups)) {
      if (a) CHECK(*a == 1.0);
    }
    CHECK(*metrics::map_coco_2d(d2, gt2).map == 1.0);
  }

  TEST_CASE("false-negative rate 1 leaves only false positives") {
    DetectorNoise noise;
    noise.fn_rate = 1.0;
    const auto scene = synth::gen_scene(small(6, 1), 0);
    CHECK(synth::simulate_2d_detector(scene, noise, 3).empty());
    noise.fp_rate = 1.0;
    const auto dets = synth::simulate_2d_detector(scene, noise, 3);
    CHECK_FALSE(dets.empty());
    for (const auto& d : dets) {
      CHECK((d.box.score >= 0.3 && d.box.score <= 0.8));
      CHECK_FALSE(d.occlusion.has_value());
    }
  }

  TEST_CASE("2D mAP decreases with jitter") {
    const double sigmas[] = {0, 2, 5, 10};
    double prev = 2.0;
    for (double sigma : sigmas) {
      CAPTURE(sigma);
      double total = 0;
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DetectorNoise noise;
        noise.center_sigma_px = noise.size_sigma_px = sigma;
        std::vector<Object2D> gts, dets;
        for (const auto& s : synth::gen_dataset(small(100 + seed, 5))) {
          const auto g = synth::derive_2d(s.objects, s.calib);
          const auto d = synth::simulate_2d_detector(s, noise, seed);
          gts.insert(gts.end(), g.begin(), g.end());
          dets.insert(dets.end(), d.begin(), d.end());
        }
        total += *metrics::map_coco_2d(dets, gts).map;
      }
      CHECK(total / 20 < prev);
      prev = total / 20;
    }
  }

  TEST_CASE("yaw-only noise leaves centers exact") {
    DetectorNoise noise;
    noise.yaw_sigma = 0.4;
    const auto scene = synth::gen_scene(small(9, 1), 0);
    const auto dets = synth::simulate_3d_detector(scene, noise, 2);
    int changed = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      CHECK(dets[i].box.x == scene.objects[i].box.x);
      CHECK(dets[i].box.y == scene.objects[i].box.y);
      CHECK(dets[i].box.l == scene.objects[i].box.l);
      changed += dets[i].box.yaw != scene.objects[i].box.yaw;
    }
    CHECK(changed == static_cast<int>(dets.size()));
  }

  TEST_CASE("BEV AP decreases with position noise") {
    const auto scenes = synth::gen_dataset(small(12, 30));
    double prev = 2.0;
    for (double sigma : {0.0, 0.3, 0.6, 1.0}) {
      CAPTURE(sigma);
      DetectorNoise noise;
      noise.position_sigma = sigma;
      std::vector<Object3D> gts, dets;
      for (const auto& s : scenes) {
        gts.insert(gts.end(), s.objects.begin(), s.objects.end());
        const auto d = synth::simulate_3d_detector(s, noise, 4);
        dets.insert(dets.end(), d.begin(), d.end());
      }
      const double ap = *metrics::evaluate_bev_cell(dets, gts, "vehicle", 0.5, {}, kGroups).ap;
      CHECK(ap < prev);
      prev = ap;
    }
  }

  TEST_CASE("depth bias moves objects along the viewing ray") {
    DetectorNoise noise;
    noise.depth_bias = 2.0;
    const auto scene = synth::gen_scene(small(13, 1), 0);
    const auto dets = synth::simulate_3d_detector(scene, noise, 1);
    const geom::Vec3<double> cam = -scene.calib.rotation.transpose() * scene.calib.translation;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const double r0 = std::hypot(scene.objects[i].box.x - cam.x(), scene.objects[i].box.y - cam.y());
      const double r1 = std::hypot(dets[i].box.x - cam.x(), dets[i].box.y - cam.y());
      CHECK(r1 - r0 == doctest::Approx(2.0));
    }
  }

  TEST_CASE("noise streams are independent") {
    const auto scene = synth::gen_scene(small(14, 1), 0);
    DetectorNoise a;
    a.center_sigma_px = 3.0;
    DetectorNoise b = a;
    b.fp_rate = 0.5;
    const auto da = synth::simulate_2d_detector(scene, a, 9);
    const auto db = synth::simulate_2d_detector(scene, b, 9);
    std::size_t k = 0;
    for (const auto& d : db) {
      if (d.occlusion.has_value()) {
        REQUIRE(k < da.size());
        CHECK(d.box.x_min == da[k++].box.x_min);
      }
    }
    CHECK(k == da.size());
  }

  TEST_CASE("toy features") {
    const auto calib = synth::scene_camera(SceneConfig::standard());
    const auto empty = synth::render_toy_features({}, calib, 12, 16, 8);
    CHECK(empty.features.rows() == 12 * 16);
    CHECK(empty.features.cols() == synth::feature_channels(8));
    CHECK(empty.features.leftCols(5).isZero(0.0));
    CHECK(empty.features.col(5).cwiseAbs().maxCoeff() > 0.5);

    Object3D o;
    o.box = {25, 2, 0.8, 1.8, 1.6, 4.5, 0.2, "car", 1};
    const auto single = synth::render_toy_features({o}, calib, 12, 16, 8);
    const auto box = geom::project_cuboid(calib, o.box, true);
    const double cw = 1536.0 / 16, ch = 864.0 / 12;
    for (int r = 0; r < 12; ++r) {
      for (int c = 0; c < 16; ++c) {
        const geom::Box2D cell{c * cw, r * ch, (c + 1) * cw, (r + 1) * ch};
        const bool overlaps = geom::intersection_area(box, cell) > 0;
        const double cov = single.features(r * 16 + c, 0);
        CHECK((cov > 0) == overlaps);
        if (overlaps) {
          CHECK(single.features(r * 16 + c, 2) == 1.0);
          CHECK(single.features(r * 16 + c, 1) == doctest::Approx(10.0 / calib.to_camera(o.box.center()).z()));
        }
      }
    }
    const auto again = synth::render_toy_features({o}, calib, 12, 16, 8);
    CHECK((again.features.array() == single.features.array()).all());
    CHECK_THROWS_AS(synth::render_toy_features({o}, calib, 7, 16, 8), ConfigError);
    CHECK_THROWS_AS(synth::render_toy_features({o}, calib, 12, 16, 6), ConfigError);
  }

  TEST_CASE("config json round trip and validation") {
    const SceneConfig cfg = SceneConfig::standard();
    CHECK(SceneConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
    DetectorNoise n;
    n.fn_rate = 0.2;
    n.yaw_sigma = 0.1;
    CHECK(DetectorNoise::from_json(n.to_json()).to_json() == n.to_json());
    n.fn_rate = 1.5;
    CHECK_THROWS_AS(n.validate(), ConfigError);
    n = DetectorNoise{};
    n.position_sigma = -1;
    CHECK_THROWS_AS(n.validate(), ConfigError);
    SceneConfig bad = cfg;
    bad.max_objects = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.roads.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}
