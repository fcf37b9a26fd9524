#include <doctest.h>

#include "bevprompt/errors.hpp"
#include "bevprompt/numerics/grad_check.hpp"
#include "bevprompt/prompt.hpp"
#include "oracles/naive_linalg.hpp"
#include "support.hpp"

using namespace bevprompt;
using nn::Tensor;
using nn::Var;
using prompt::PromptConfig;
using prompt::PromptForm;
using prompt::PromptWeights;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

constexpr int kW = 1536;
constexpr int kH = 864;

geom::Box2D random_box(Rng& rng) {
  const double x0 = rng.uniform(0, kW - 50), y0 = rng.uniform(0, kH - 50);
  return {x0, y0, rng.uniform(x0 + 1, kW), rng.uniform(y0 + 1, kH)};
}

PromptWeights zero_weights(int d) {
  PromptConfig cfg;
  cfg.d_model = d;
  return PromptWeights(cfg, Tensor::Zero(2, d), Tensor::Zero(2, d));
}

PromptWeights random_weights(int d, std::uint64_t seed) {
  PromptConfig cfg;
  cfg.d_model = d;
  cfg.seed = seed;
  PromptWeights w(cfg);
  Rng rng(seed + 1000);
  w.c_mut() = random_tensor(rng, 2, d);
  return w;
}

}  // namespace

TEST_SUITE("prompt") {
  TEST_CASE("normalize_box full image") {
    const Tensor a = prompt::normalize_box({0, 0, kW, kH}, kW, kH);
    CHECK(a(0, 0) == 0.0);
    CHECK(a(0, 1) == 0.0);
    CHECK(a(1, 0) == 1.0);
    CHECK(a(1, 1) == 1.0);
  }

  TEST_CASE("normalize_box worked example") {
    const Tensor a = prompt::normalize_box({216, 432, 432, 864}, kW, kH);
    CHECK(a(0, 0) == 0.140625);
    CHECK(a(0, 1) == 0.5);
    CHECK(a(1, 0) == 0.28125);
    CHECK(a(1, 1) == 1.0);
  }

  TEST_CASE("normalize_box errors") {
    CHECK_THROWS_AS(prompt::normalize_box({0, 0, 10, 10}, 0, kH), ConfigError);
    CHECK_THROWS_AS(prompt::normalize_box({0, 0, 10, 10}, kW, -1), ConfigError);
    CHECK_THROWS_AS(prompt::normalize_box({5, 5, 5, 5}, kW, kH), DataError);
    CHECK_THROWS_AS(prompt::normalize_box({-1, 0, 10, 10}, kW, kH), DataError);
  }

  TEST_CASE("weights: B reproducible from seed, C zero") {
    PromptConfig cfg;
    cfg.seed = 17;
    const PromptWeights a(cfg), b(cfg);
    CHECK(a.b().rows() == 2);
    CHECK(a.b().cols() == 512);
    CHECK((a.b().array() == b.b().array()).all());
    CHECK(a.c().isZero(0.0));
    cfg.seed = 18;
    CHECK_FALSE((PromptWeights(cfg).b().array() == a.b().array()).all());
  }

  TEST_CASE("zero weights give a zero prompt for label 0") {
    const PromptWeights w = zero_weights(512);
    const auto e = prompt::encode_prompt({10, 20, 300, 400}, 0, w, kW, kH);
    CHECK(e.e.rows() == 3);
    CHECK(e.e.cols() == 512);
    CHECK(e.e.isZero(0.0));
  }

  TEST_CASE("encoding is deterministic") {
    PromptConfig cfg;
    cfg.seed = 17;
    const PromptWeights w(cfg);
    const geom::Box2D box{100, 200, 640, 700};
    const auto a = prompt::encode_prompt(box, 4, w, kW, kH);
    const auto b = prompt::encode_prompt(box, 4, PromptWeights(cfg), kW, kH);
    CHECK((a.e.array() == b.e.array()).all());
  }

  TEST_CASE("random box matches the naive oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const PromptWeights w = random_weights(32, seed);
      const geom::Box2D box = random_box(rng);
      const std::size_t label = static_cast<std::size_t>(rng.uniform_int(0, 8));
      const auto e = prompt::encode_prompt(box, label, w, kW, kH);

      Tensor a(2, 2);
      a << box.x_min / kW, box.y_min / kH, box.x_max / kW, box.y_max / kH;
      const Tensor expect = oracle::matmul(a, w.b()) + w.c();
      CHECK(max_abs_diff(e.e.topRows(2), expect) < 1e-14);
      CHECK((e.e.row(2).array() == label / 9.0).all());
    }
  }

  TEST_CASE("raw label mode repeats the class id") {
    PromptConfig cfg;
    cfg.d_model = 8;
    cfg.label_scale = prompt::LabelScale::Raw;
    const auto e = prompt::encode_prompt({0, 0, 10, 10}, 7, PromptWeights(cfg), kW, kH);
    CHECK((e.e.row(2).array() == 7.0).all());
  }

  TEST_CASE("unknown label index") {
    CHECK_THROWS_AS(prompt::encode_prompt({0, 0, 10, 10}, 9, zero_weights(8), kW, kH), LabelError);
  }

  TEST_CASE("labels change only the label row") {
    const PromptWeights w = random_weights(16, 3);
    const geom::Box2D box{50, 60, 500, 600};
    const auto a = prompt::encode_prompt(box, 1, w, kW, kH);
    const auto b = prompt::encode_prompt(box, 5, w, kW, kH);
    CHECK((a.e.topRows(2).array() == b.e.topRows(2).array()).all());
    CHECK_FALSE((a.e.row(2).array() == b.e.row(2).array()).any());
  }

  TEST_CASE("Lipschitz in the normalized coordinates") {
    const PromptWeights w = random_weights(64, 5);
    const double b_norm = Eigen::JacobiSVD<Tensor>(w.b()).singularValues()(0);
    Rng rng(9);
    for (int k = 0; k < 50; ++k) {
      const geom::Box2D box{200, 200, 800, 600};
      const double eps = 1e-2;
      geom::Box2D moved = box;
      moved.x_min += rng.uniform(-eps, eps) * kW;
      moved.y_min += rng.uniform(-eps, eps) * kH;
      moved.x_max += rng.uniform(-eps, eps) * kW;
      moved.y_max += rng.uniform(-eps, eps) * kH;
      const Tensor da = prompt::normalize_box(moved, kW, kH) - prompt::normalize_box(box, kW, kH);
      const Tensor de = prompt::encode_prompt(moved, 0, w, kW, kH).e.topRows(2) -
                        prompt::encode_prompt(box, 0, w, kW, kH).e.topRows(2);
      const double da_norm = Eigen::JacobiSVD<Tensor>(da).singularValues()(0);
      const double de_norm = Eigen::JacobiSVD<Tensor>(de).singularValues()(0);
      CHECK(de_norm <= da_norm * b_norm * (1 + 1e-12));
    }
  }

  TEST_CASE("center prompt") {
    const PromptWeights z = zero_weights(8);
    CHECK(prompt::normalize_center({0, 0, kW, kH}, kW, kH)(0, 0) == 0.5);
    CHECK(prompt::normalize_center({0, 0, kW, kH}, kW, kH)(0, 1) == 0.5);
    const auto zc = prompt::encode_center_prompt({10, 10, 90, 50}, 3, z, kW, kH);
    CHECK(zc.e.rows() == 2);
    CHECK(zc.e.row(0).isZero(0.0));
    CHECK(prompt::encode_center_prompt({10, 10, 90, 50}, 3, z, kW, kH, false).e.rows() == 1);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(50 + seed);
      const PromptWeights w = random_weights(16, seed);
      const geom::Box2D box = random_box(rng);
      Tensor c(1, 2);
      c << (box.x_min + box.x_max) / 2 / kW, (box.y_min + box.y_max) / 2 / kH;
      const Tensor expect = oracle::matmul(c, w.b()) + w.c().topRows(1);
      const auto e = prompt::encode_center_prompt(box, 2, w, kW, kH);
      CHECK(max_abs_diff(e.e.topRows(1), expect) < 1e-14);
      CHECK((e.e.row(1).array() == 2.0 / 9.0).all());
    }
  }

  TEST_CASE("taped encoding matches the direct one") {
    const PromptWeights w = random_weights(12, 4);
    const geom::Box2D box{30, 40, 700, 500};
    for (PromptForm form : {PromptForm::BoxLabel, PromptForm::Box, PromptForm::CenterLabel, PromptForm::Center}) {
      nn::Tape tape;
      const bool center = form == PromptForm::CenterLabel || form == PromptForm::Center;
      const Tensor coords = center ? prompt::normalize_center(box, kW, kH) : prompt::normalize_box(box, kW, kH);
      const Var e = prompt::encode_prompt(tape.constant(w.b()), tape.variable(w.c()), coords,
                                          prompt::label_value(6, w.config()), form);
      const auto direct = prompt::encode_prompt(box, 6, w, kW, kH, form);
      CHECK(static_cast<std::size_t>(e.rows()) == prompt::tokens_per_prompt(form));
      CHECK(max_abs_diff(e.value(), direct.e) == 0.0);
    }
  }

  TEST_CASE("gradient is zero for B and matches differences for C") {
    const PromptWeights w = random_weights(10, 8);
    const Tensor coords = prompt::normalize_box({100, 100, 900, 800}, kW, kH);
    Rng rng(21);
    const Tensor mix = random_tensor(rng, 3, 10);
    auto loss = [&](const Var& e) { return nn::weighted_sum(nn::softmax_rows(e), mix); };

    nn::Tape tape;
    const Var b = tape.constant(w.b());
    const Var c = tape.variable(w.c());
    const Var l = loss(prompt::encode_prompt(b, c, coords, 0.5, PromptForm::BoxLabel));
    tape.backward(l);
    CHECK(tape.grad(b).isZero(0.0));
    CHECK_FALSE(tape.grad(c).isZero(0.0));

    const auto r = nn::grad_check(
        [&](nn::Tape& t, std::span<const Var> p) {
          return loss(prompt::encode_prompt(t.constant(w.b()), p[0], coords, 0.5, PromptForm::BoxLabel));
        },
        {w.c()});
    CHECK(r.max_rel_error < 1e-5);
  }

  TEST_CASE("weights round-trip through disk") {
    const auto dir = testing::scratch_dir("prompt_roundtrip");
    PromptConfig cfg;
    cfg.d_model = 16;
    cfg.seed = 99;
    cfg.label_scale = prompt::LabelScale::Raw;
    PromptWeights w(cfg);
    Rng rng(1);
    w.c_mut() = random_tensor(rng, 2, 16);
    w.save(dir);
    const PromptWeights back = PromptWeights::load(dir);
    CHECK(back.header() == w.header());
    CHECK((back.b().array() == w.b().array()).all());
    CHECK((back.c().array() == w.c().array()).all());
  }
}
