#ifndef BEVPROMPT_TESTS_RANDOM_RUNS_HPP
#define BEVPROMPT_TESTS_RANDOM_RUNS_HPP

#include <vector>

#include "bevprompt/grouping.hpp"
#include "bevprompt/synth.hpp"

namespace testing {

/// One synthetic evaluation instance with misses, label swaps, false
/// positives and random scores.
struct RandomRun {
  bevprompt::geom::CameraCalib calib;
  std::vector<bevprompt::Object3D> gt3d, det3d;
  std::vector<bevprompt::Object2D> gt2d, det2d;
};

inline RandomRun random_run(std::uint64_t seed, int frames) {
  using namespace bevprompt;
  auto cfg = synth::SceneConfig::standard();
  cfg.seed = seed;
  cfg.frames = frames;
  Rng rng(derive_seed(seed, 0x7e57));
  synth::DetectorNoise noise;
  noise.position_sigma = rng.uniform(0.0, 0.8);
  noise.yaw_sigma = rng.uniform(0.0, 0.6);
  noise.size_sigma = rng.uniform(0.0, 0.15);
  noise.center_sigma_px = rng.uniform(0.0, 8.0);
  noise.size_sigma_px = rng.uniform(0.0, 8.0);
  noise.fn_rate = 0.1;
  noise.fp_rate = 0.2;
  noise.label_confusion = 0.05;

  const auto& vocab = grouping::dair_vocabulary();
  RandomRun run;
  for (const auto& scene : synth::gen_dataset(cfg)) {
    run.calib = scene.calib;
    for (auto o : scene.objects) {
      o.occlusion = rng.uniform();
      o.truncation = rng.bernoulli(0.7) ? 0.0 : rng.uniform();
      run.gt3d.push_back(o);
    }
    for (auto d : synth::simulate_3d_detector(scene, noise, seed)) {
      if (rng.bernoulli(0.1)) continue;
      if (rng.bernoulli(0.1)) d.box.label = vocab[static_cast<std::size_t>(rng.uniform_int(0, 8))];
      d.box.score = rng.uniform();
      run.det3d.push_back(d);
      if (rng.bernoulli(0.3)) {
        auto fp = d;
        fp.box.x += rng.uniform(-4, 4);
        fp.box.y += rng.uniform(-4, 4);
        fp.box.yaw = rng.uniform(-3.14, 3.14);
        fp.box.score = rng.uniform();
        run.det3d.push_back(fp);
      }
    }
    for (const auto& o : synth::derive_2d(scene.objects, scene.calib)) run.gt2d.push_back(o);
    for (const auto& o : synth::simulate_2d_detector(scene, noise, seed + 1)) run.det2d.push_back(o);
  }
  return run;
}

}  // namespace testing

#endif  // BEVPROMPT_TESTS_RANDOM_RUNS_HPP
