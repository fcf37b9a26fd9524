#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bevprompt/errors.hpp"
#include "bevprompt/synth.hpp"
#include "bevprompt/yawtune.hpp"
#include "support.hpp"

using namespace bevprompt;
using geom::Box2D;
using geom::Cuboid3D;
using yawtune::YawTuneConfig;

namespace {

const double kPi = std::numbers::pi;

geom::CameraCalib camera() { return synth::scene_camera(synth::SceneConfig::standard()); }

/// A vehicle on the main road, comfortably inside the image.
Cuboid3D vehicle(double x, double y, double yaw) { return {x, y, 0.8, 1.9, 1.6, 4.6, yaw, "car", 0.9}; }

double yaw_error_mod_pi(double a, double b) {
  double d = std::fmod(std::abs(a - b), kPi);
  return std::min(d, kPi - d);
}

/// Dense scan of the objective; ties go to the candidate nearest `yaw0`.
yawtune::YawSample dense_argmax(const Cuboid3D& c, const Box2D& box, const geom::CameraCalib& calib,
                                double half_range, double step) {
  yawtune::YawSample best{c.yaw, -1.0};
  const int n = static_cast<int>(std::ceil(half_range / step));
  for (int k = -n; k <= n; ++k) {
    const double yaw = c.yaw + k * step;
    const double f = yawtune::yaw_objective(c, yaw, box, calib);
    if (f > best.iou || (f == best.iou && std::abs(yaw - c.yaw) < std::abs(best.yaw - c.yaw))) best = {yaw, f};
  }
  return best;
}

/// Repeatedly take the best remaining pair over the full table.
std::vector<yawtune::Match> greedy_oracle(const std::vector<Cuboid3D>& cubes, const std::vector<Box2D>& boxes,
                                          const geom::CameraCalib& calib, const grouping::ClassGrouping& g,
                                          double min_iou) {
  const std::size_t nc = cubes.size(), nb = boxes.size();
  std::vector<std::vector<double>> table(nc, std::vector<double>(nb, -1.0));
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      if (g.superclass_of(cubes[i].label) != g.superclass_of(boxes[j].label)) continue;
      try {
        table[i][j] = geom::iou_aabb(geom::project_cuboid(calib, cubes[i]), boxes[j]);
      } catch (const Error&) {
      }
    }
  }
  std::vector<bool> used_c(nc, false), used_b(nb, false);
  std::vector<yawtune::Match> out;
  while (true) {
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < nc; ++i) {
      for (std::size_t j = 0; j < nb; ++j) {
        if (used_c[i] || used_b[j] || table[i][j] < min_iou) continue;
        if (table[i][j] > best) best = table[i][j], bi = i, bj = j;
      }
    }
    if (best < 0) break;
    used_c[bi] = used_b[bj] = true;
    out.push_back({bi, bj, best});
  }
  return out;
}

}  // namespace

TEST_SUITE("yawtune") {
  TEST_CASE("config validation and json") {
    YawTuneConfig c;
    CHECK_NOTHROW(c.validate());
    c.search_half_range = 4.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = YawTuneConfig{};
    c.coarse_step = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = YawTuneConfig{};
    c.min_match_iou = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = YawTuneConfig{};
    c.refine_iterations = 7;
    CHECK(YawTuneConfig::from_json(c.to_json()).to_json() == c.to_json());
  }

  TEST_CASE("already optimal keeps the yaw") {
    const auto calib = camera();
    const Cuboid3D c = vehicle(25, 2, 0.7);
    const Box2D box = geom::project_cuboid(calib, c);
    const auto r = yawtune::tune_yaw(c, box, calib, {});
    CHECK(r.yaw == c.yaw);
    CHECK(r.iou == 1.0);
    CHECK(r.initial_iou == 1.0);
  }

  TEST_CASE("recovers the true yaw against a dense oracle") {
    const auto calib = camera();
    const YawTuneConfig cfg;
    Rng rng(3);
    for (int k = 0; k < 20; ++k) {
      CAPTURE(k);
      const double yaw0 = rng.uniform(-kPi, kPi);
      const Cuboid3D truth = vehicle(rng.uniform(20, 50), rng.uniform(-6, 6), yaw0);
      const Box2D box = geom::project_cuboid(calib, truth);
      const Cuboid3D start = truth.with_yaw(yaw0 + 0.4);
      const auto r = yawtune::tune_yaw(start, box, calib, cfg);
      const auto oracle = dense_argmax(start, box, calib, cfg.search_half_range, 1e-4);
      CHECK(r.iou >= oracle.iou - 1e-5);
      CHECK(std::abs(geom::normalize_angle(r.yaw - yaw0)) < 2 * cfg.coarse_step);
      CHECK(std::abs(geom::normalize_angle(r.yaw - oracle.yaw)) < 2 * cfg.coarse_step);
    }
  }

  TEST_CASE("recorded samples match independent evaluations") {
    const auto calib = camera();
    const Cuboid3D c = vehicle(30, -3, 0.2);
    const Box2D box = geom::project_cuboid(calib, c.with_yaw(-0.3));
    const auto r = yawtune::tune_yaw(c, box, calib, {});
    REQUIRE(r.samples.size() > 100);
    for (const auto& s : r.samples) CHECK(s.iou == yawtune::yaw_objective(c, s.yaw, box, calib));
    bool found = false;
    for (const auto& s : r.samples) found = found || (s.yaw == r.yaw && s.iou == r.iou);
    CHECK(found);
  }

  TEST_CASE("never degrades the IoU") {
    const auto calib = camera();
    Rng rng(8);
    for (int k = 0; k < 50; ++k) {
      const Cuboid3D c = vehicle(rng.uniform(15, 60), rng.uniform(-8, 8), rng.uniform(-kPi, kPi));
      Box2D box = geom::project_cuboid(calib, c.with_yaw(rng.uniform(-kPi, kPi)));
      box.x_min += rng.uniform(-10, 10);
      box.x_max += rng.uniform(-10, 10);
      const auto r = yawtune::tune_yaw(c, box, calib, {});
      CHECK(r.initial_iou == yawtune::yaw_objective(c, c.yaw, box, calib));
      CHECK(r.iou >= r.initial_iou);
    }
  }

  TEST_CASE("square footprint symmetry") {
    const auto calib = camera();
    Cuboid3D c = vehicle(28, 1, 0.3);
    c.w = c.l = 2.5;
    const Box2D box = geom::project_cuboid(calib, c.with_yaw(0.5));
    for (double t = -1.5; t <= 1.5; t += 0.1) {
      CHECK(std::abs(yawtune::yaw_objective(c, t, box, calib) - yawtune::yaw_objective(c, t + kPi / 2, box, calib)) <
            1e-9);
    }
    const auto r = yawtune::tune_yaw(c, box, calib, {});
    CHECK(std::abs(r.yaw - 0.5) < 2 * YawTuneConfig{}.coarse_step);
  }

  TEST_CASE("invariant to uniform image rescaling") {
    const auto calib = camera();
    auto scaled = calib;
    scaled.fx *= 2, scaled.fy *= 2, scaled.cx *= 2, scaled.cy *= 2;
    scaled.image_width *= 2, scaled.image_height *= 2;
    Rng rng(13);
    for (int k = 0; k < 10; ++k) {
      const Cuboid3D c = vehicle(rng.uniform(15, 60), rng.uniform(-8, 8), rng.uniform(-kPi, kPi));
      const Box2D box = geom::project_cuboid(calib, c.with_yaw(c.yaw + rng.uniform(-1, 1)));
      const Box2D big{2 * box.x_min, 2 * box.y_min, 2 * box.x_max, 2 * box.y_max};
      CHECK(yawtune::tune_yaw(c, box, calib, {}).yaw == yawtune::tune_yaw(c, big, scaled, {}).yaw);
    }
  }

  TEST_CASE("deterministic") {
    const auto calib = camera();
    const Cuboid3D c = vehicle(35, 4, 1.0);
    const Box2D box = geom::project_cuboid(calib, c.with_yaw(0.4));
    CHECK(yawtune::tune_yaw(c, box, calib, {}).yaw == yawtune::tune_yaw(c, box, calib, {}).yaw);
  }

  TEST_CASE("behind camera propagates; off-image yields no overlap") {
    const auto calib = camera();
    CHECK_THROWS_AS(yawtune::tune_yaw(vehicle(-20, 0, 0), {10, 10, 50, 50}, calib, {}), BehindCameraError);
    const Cuboid3D off = vehicle(20, 60, 0.2);
    const auto r = yawtune::tune_yaw(off, {10, 10, 50, 50}, calib, {});
    CHECK(r.yaw == off.yaw);
    CHECK(r.iou == 0.0);
  }

  TEST_CASE("matching basics") {
    const auto calib = camera();
    const auto g = grouping::builtin_grouping("functionality");
    const std::vector<Cuboid3D> cubes{vehicle(30, 0, 0.1)};
    Box2D box = geom::project_cuboid(calib, cubes[0]);
    box.label = "van";
    auto m = yawtune::match_3d_to_2d(cubes, std::vector<Box2D>{box}, calib, g, 0.3);
    REQUIRE(m.size() == 1);
    CHECK(m[0].iou == 1.0);
    box.label = "pedestrian";
    CHECK(yawtune::match_3d_to_2d(cubes, std::vector<Box2D>{box}, calib, g, 0.3).empty());
    const Box2D far{1400, 10, 1500, 60, "car"};
    CHECK(yawtune::match_3d_to_2d(cubes, std::vector<Box2D>{far}, calib, g, 0.3).empty());
  }

  TEST_CASE("matching equals the exhaustive greedy oracle") {
    const auto calib = camera();
    const auto g = grouping::builtin_grouping("functionality");
    const char* labels[] = {"car", "bus", "bicyclist"};
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      CAPTURE(seed);
      Rng rng(seed);
      std::vector<Cuboid3D> cubes;
      std::vector<Box2D> boxes;
      for (int i = 0; i < 5; ++i) {
        Cuboid3D c = vehicle(rng.uniform(20, 45), rng.uniform(-5, 5), rng.uniform(-kPi, kPi));
        c.label = labels[rng.uniform_int(0, 2)];
        cubes.push_back(c);
        Box2D b = geom::project_cuboid(calib, vehicle(rng.uniform(20, 45), rng.uniform(-5, 5), 0));
        b.label = labels[rng.uniform_int(0, 2)];
        boxes.push_back(b);
      }
      const auto got = yawtune::match_3d_to_2d(cubes, boxes, calib, g, 0.3);
      const auto want = greedy_oracle(cubes, boxes, calib, g, 0.3);
      REQUIRE(got.size() == want.size());
      for (std::size_t k = 0; k < got.size(); ++k) {
        CHECK(got[k].cuboid == want[k].cuboid);
        CHECK(got[k].box == want[k].box);
        CHECK(got[k].iou == want[k].iou);
      }
    }
  }

  TEST_CASE("tune_frame: empty and aligned frames") {
    const auto calib = camera();
    const auto g = grouping::builtin_grouping("functionality");
    CHECK(yawtune::tune_frame({}, {}, calib, {}, g).cuboids.empty());

    const auto scene = synth::gen_scene(synth::SceneConfig::standard(), 0);
    std::vector<Cuboid3D> cubes;
    std::vector<Box2D> boxes;
    for (const auto& o : scene.objects) cubes.push_back(o.box);
    for (const auto& o : synth::derive_2d(scene.objects, calib)) boxes.push_back(o.box);
    YawTuneConfig cfg;
    cfg.tune_superclass.clear();
    const auto r = yawtune::tune_frame(cubes, boxes, calib, cfg, g);
    REQUIRE(r.cuboids.size() == cubes.size());
    for (std::size_t i = 0; i < cubes.size(); ++i) CHECK(r.cuboids[i].yaw == cubes[i].yaw);
  }

  TEST_CASE("20-object frame: yaw error decreases") {
    auto scfg = synth::SceneConfig::standard();
    scfg.min_objects = scfg.max_objects = 20;
    const auto g = grouping::builtin_grouping("functionality");
    for (int frame = 0; frame < 3; ++frame) {
      CAPTURE(frame);
      const auto scene = synth::gen_scene(scfg, frame);
      REQUIRE(scene.objects.size() == 20);
      synth::DetectorNoise noise;
      noise.yaw_sigma = 0.3;
      const auto dets = synth::simulate_3d_detector(scene, noise, 11 + frame);
      std::vector<Cuboid3D> cubes;
      std::vector<Box2D> boxes;
      for (const auto& o : dets) cubes.push_back(o.box);
      for (const auto& o : synth::derive_2d(scene.objects, scene.calib)) boxes.push_back(o.box);
      YawTuneConfig cfg;
      cfg.tune_superclass.clear();
      cfg.score_filter = 0.0;
      const auto r = yawtune::tune_frame(cubes, boxes, scene.calib, cfg, g);
      double before = 0, after = 0;
      for (std::size_t i = 0; i < cubes.size(); ++i) {
        before += yaw_error_mod_pi(cubes[i].yaw, scene.objects[i].box.yaw);
        after += yaw_error_mod_pi(r.cuboids[i].yaw, scene.objects[i].box.yaw);
      }
      CHECK(after < before);
      for (const auto& p : r.pairs) CHECK(p.iou_after >= p.iou_before);
    }
  }

  TEST_CASE("tune_frame leaves other superclasses and low scores alone") {
    const auto calib = camera();
    const auto g = grouping::builtin_grouping("functionality");
    Cuboid3D ped{30, 0, 0.9, 0.6, 1.7, 0.6, 0.3, "pedestrian", 0.9};
    Cuboid3D weak = vehicle(40, 5, 0.5);
    weak.score = 0.1;
    const std::vector<Cuboid3D> cubes{ped, weak};
    Box2D pb = geom::project_cuboid(calib, ped.with_yaw(1.0));
    pb.label = "pedestrian";
    Box2D wb = geom::project_cuboid(calib, weak.with_yaw(1.2));
    wb.label = "car";
    const auto r = yawtune::tune_frame(cubes, std::vector<Box2D>{pb, wb}, calib, {}, g);
    CHECK(r.cuboids[0].yaw == ped.yaw);
    CHECK(r.cuboids[1].yaw == weak.yaw);
    CHECK(r.pairs.empty());
  }
}
