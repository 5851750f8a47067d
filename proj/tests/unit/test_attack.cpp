#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cropmatch/attack.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace cropmatch;

namespace {

// 2x2 fixture: the first four entries carry the reference gradient
// sequence, the rest stay at zero gradient. clean = 0.5 so the [0,1]
// projection never binds; the budget is widened to 0.1 (unit scale).
struct StepFixture {
  ImageTensor clean{2, 2, 0.5};
  std::vector<std::vector<double>> grads = {
      {0.5, -0.2, 0.0, 1.5}, {-0.3, 0.4, 0.2, -0.1}, {0.8, 0.8, -0.5, 0.6}};

  ImageTensor grad(int step) const {
    ImageTensor g(2, 2);
    for (int i = 0; i < 4; ++i) g.data[i] = grads[step][i];
    return g;
  }

  static void check4(const Perturbation& delta,
                     const std::vector<double>& expect) {
    for (int i = 0; i < 4; ++i)
      CHECK(delta.data[i] == doctest::Approx(expect[i]).epsilon(1e-9));
    for (std::size_t i = 4; i < delta.data.size(); ++i)
      CHECK(delta.data[i] == 0.0);
  }
};

AttackConfig unit_scale_config() {
  AttackConfig cfg;
  cfg.alpha_255 = 0.03 * 255.0;  // alpha() == 0.03
  return cfg;
}

}  // namespace

TEST_CASE("ifgsm steps match the straight-line reference") {
  StepFixture fx;
  AttackConfig cfg = unit_scale_config();
  OptimizerState st = make_state(cfg, 2, 2);
  st.delta.epsilon = 0.1;
  const std::vector<std::vector<double>> expect = {
      {0.03, -0.03, 0.0, 0.03}, {0.0, 0.0, 0.03, 0.0}, {0.03, 0.03, 0.0, 0.03}};
  for (int t = 0; t < 3; ++t) {
    ifgsm_step(st, fx.grad(t), fx.clean, cfg);
    fx.check4(st.delta, expect[t]);
  }
}

TEST_CASE("mifgsm accumulates unnormalized momentum v += beta*g") {
  StepFixture fx;
  AttackConfig cfg = unit_scale_config();
  cfg.optimizer = OptimizerKind::kMifgsm;
  cfg.beta = 0.9;
  OptimizerState st = make_state(cfg, 2, 2);
  st.delta.epsilon = 0.1;
  const std::vector<std::vector<double>> expect_v = {
      {0.45, -0.18, 0.0, 1.35},
      {0.18, 0.18, 0.18, 1.26},
      {0.9, 0.9, -0.27, 1.8}};
  const std::vector<std::vector<double>> expect_d = {
      {0.03, -0.03, 0.0, 0.03}, {0.06, 0.0, 0.03, 0.06}, {0.09, 0.03, 0.0, 0.09}};
  for (int t = 0; t < 3; ++t) {
    mifgsm_step(st, fx.grad(t), fx.clean, cfg);
    for (int i = 0; i < 4; ++i)
      CHECK(st.v[i] == doctest::Approx(expect_v[t][i]).epsilon(1e-9));
    fx.check4(st.delta, expect_d[t]);
  }
}

TEST_CASE("mifgsm_normalize switches to the classic l1 accumulation") {
  StepFixture fx;
  AttackConfig cfg = unit_scale_config();
  cfg.optimizer = OptimizerKind::kMifgsm;
  cfg.beta = 0.9;
  cfg.mifgsm_normalize = true;
  OptimizerState st = make_state(cfg, 2, 2);
  st.delta.epsilon = 0.1;
  const std::vector<std::vector<double>> expect_v = {
      {0.22727272727272727, -0.09090909090909091, 0.0, 0.6818181818181818},
      {-0.09545454545454551, 0.31818181818181823, 0.20000000000000004,
       0.5136363636363637},
      {0.21038720538720532, 0.5826599326599327, -0.005185185185185126,
       0.6844949494949495}};
  const std::vector<std::vector<double>> expect_d = {
      {0.03, -0.03, 0.0, 0.03}, {0.0, 0.0, 0.03, 0.06}, {0.03, 0.03, 0.0, 0.09}};
  for (int t = 0; t < 3; ++t) {
    mifgsm_step(st, fx.grad(t), fx.clean, cfg);
    for (int i = 0; i < 4; ++i)
      CHECK(st.v[i] == doctest::Approx(expect_v[t][i]).epsilon(1e-9));
    fx.check4(st.delta, expect_d[t]);
  }
}

TEST_CASE("pgd-adam with bias correction matches the reference") {
  StepFixture fx;
  AttackConfig cfg = unit_scale_config();
  cfg.optimizer = OptimizerKind::kPgdAdam;
  OptimizerState st = make_state(cfg, 2, 2);
  st.delta.epsilon = 0.1;
  const std::vector<std::vector<double>> expect_d = {
      {0.02999999940000003, -0.0299999985000001, 0.0, 0.029999999800000027},
      {0.035744940317467465, -0.019016893036188982, 0.022324103128851695,
       0.048571463521212846},
      {0.05385103089514015, 0.001854351112328869, 0.01093534612861538,
       0.06901272924311264}};
  for (int t = 0; t < 3; ++t) {
    pgd_adam_step(st, fx.grad(t), fx.clean, cfg);
    CHECK(st.t == t + 1);
    fx.check4(st.delta, expect_d[t]);
  }
}

TEST_CASE("project clips to the budget box then the pixel box") {
  ImageTensor clean(2, 2, 0.0);
  clean.data[0] = 0.98;
  clean.data[1] = 0.5;
  clean.data[2] = 0.01;
  Perturbation d(2, 2, 16.0 / 255.0);
  d.data[0] = 0.05;   // budget then pixel clip: 0.0627 -> adv 1.0 cap
  d.data[1] = -0.2;   // budget clip to -eps
  d.data[2] = -0.05;  // pixel clip to adv 0
  project(d, clean);
  CHECK(d.data[0] == doctest::Approx(1.0 - 0.98));
  CHECK(d.data[1] == doctest::Approx(-16.0 / 255.0));
  CHECK(d.data[2] == doctest::Approx(-0.01));
}

TEST_CASE("non-finite gradients are rejected") {
  StepFixture fx;
  AttackConfig cfg = unit_scale_config();
  OptimizerState st = make_state(cfg, 2, 2);
  ImageTensor g(2, 2);
  g.data[3] = std::nan("");
  CHECK_THROWS_AS(ifgsm_step(st, g, fx.clean, cfg), std::runtime_error);
}

TEST_CASE("attack config validation catches bad fields") {
  AttackConfig cfg;
  CHECK_NOTHROW(validate_attack_config(cfg));
  cfg.epsilon_255 = 0;
  CHECK_THROWS_AS(validate_attack_config(cfg), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.steps = 0;
  CHECK_THROWS_AS(validate_attack_config(cfg), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.paste_back = true;
  cfg.optimizer = OptimizerKind::kPgdAdam;
  CHECK_THROWS_AS(validate_attack_config(cfg), std::invalid_argument);
  cfg.optimizer = OptimizerKind::kIfgsm;
  CHECK_NOTHROW(validate_attack_config(cfg));
  cfg = AttackConfig{};
  cfg.optimizer = OptimizerKind::kPgdAdam;
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(validate_attack_config(cfg), std::invalid_argument);
  CHECK_THROWS_AS(parse_optimizer("sgd"), std::invalid_argument);
}

TEST_CASE("ensemble similarity gradient matches finite differences") {
  const EncoderEnsemble ens = make_toy_ensemble(31, 32, 24);
  Rng rng(8);
  const ImageTensor src = testing::smooth_image(rng, 24);
  const ImageTensor tgt = testing::smooth_image(rng, 24);
  const SimilarityResult res = ensemble_similarity_and_grad(ens, src, tgt);
  CHECK(res.per_encoder.size() == 3);
  CHECK(res.similarity ==
        doctest::Approx((res.per_encoder[0] + res.per_encoder[1] +
                         res.per_encoder[2]) /
                        3.0));
  CHECK(res.similarity == doctest::Approx(ensemble_similarity(ens, src, tgt)));

  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i = rng.uniform_int(src.data.size());
    ImageTensor plus = src, minus = src;
    plus.data[i] += h;
    minus.data[i] -= h;
    const double fd = (ensemble_similarity(ens, plus, tgt) -
                       ensemble_similarity(ens, minus, tgt)) /
                      (2.0 * h);
    CHECK(res.grad.data[i] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("run_attack is deterministic and respects the budget") {
  const EncoderEnsemble ens = make_toy_ensemble(17, 64, 32);
  Rng gen(100);
  const ImageTensor clean = testing::smooth_image(gen, 48);
  const ImageTensor target = testing::smooth_image(gen, 48);
  AttackConfig cfg;
  cfg.steps = 25;
  cfg.mode = MatchingMode::kLocalLocal;
  cfg.seed = 5;

  Rng r1(cfg.seed), r2(cfg.seed);
  const AttackResult a = run_attack(clean, target, cfg, ens, r1);
  const AttackResult b = run_attack(clean, target, cfg, ens, r2);
  CHECK(a.delta.data == b.delta.data);
  CHECK(a.trace == b.trace);
  REQUIRE(a.trace.size() == 25);
  REQUIRE(a.trace_per_encoder.size() == 25);
  CHECK(a.trace_per_encoder[0].size() == 3);
  CHECK(a.final_per_encoder.size() == 3);

  CHECK_NOTHROW(validate_budget(a.delta));
  for (std::size_t i = 0; i < a.adversarial.data.size(); ++i) {
    REQUIRE(a.adversarial.data[i] >= 0.0);
    REQUIRE(a.adversarial.data[i] <= 1.0);
  }
  CHECK(a.adversarial.data != clean.data);
}

TEST_CASE("attack raises similarity on a smooth pair") {
  const EncoderEnsemble ens = make_toy_ensemble(23, 64, 64);
  Rng gen(200);
  const ImageTensor clean = testing::smooth_image(gen, 64);
  const ImageTensor target = testing::smooth_image(gen, 64);
  AttackConfig cfg;
  cfg.steps = 60;
  cfg.seed = 9;
  Rng rng(cfg.seed);
  const AttackResult res = run_attack(clean, target, cfg, ens, rng);
  const double before = ensemble_similarity(ens, clean, target);
  const double after = ensemble_similarity(ens, res.adversarial, target);
  CHECK(after > before + 0.1);
}

TEST_CASE("pinned full-scale crops make local modes equal global-global") {
  const EncoderEnsemble ens = make_toy_ensemble(29, 64, 32);
  Rng gen(300);
  const ImageTensor clean = testing::smooth_image(gen, 64);
  const ImageTensor target = testing::smooth_image(gen, 64);
  AttackConfig cfg;
  cfg.steps = 10;
  cfg.seed = 77;
  cfg.crop_source.scale_lo = cfg.crop_source.scale_hi = 1.0;
  cfg.crop_target.scale_lo = cfg.crop_target.scale_hi = 1.0;

  cfg.mode = MatchingMode::kGlobalGlobal;
  Rng r0(cfg.seed);
  const AttackResult gg = run_attack(clean, target, cfg, ens, r0);
  for (MatchingMode mode : {MatchingMode::kLocalGlobal,
                            MatchingMode::kGlobalLocal,
                            MatchingMode::kLocalLocal}) {
    cfg.mode = mode;
    Rng r(cfg.seed);
    const AttackResult res = run_attack(clean, target, cfg, ens, r);
    CHECK(res.delta.data == gg.delta.data);
    CHECK(res.trace == gg.trace);
  }
}

TEST_CASE("paste_back runs under ifgsm and keeps the budget") {
  const EncoderEnsemble ens = make_toy_ensemble(37, 64, 32);
  Rng gen(400);
  const ImageTensor clean = testing::smooth_image(gen, 32);
  const ImageTensor target = testing::smooth_image(gen, 32);
  AttackConfig cfg;
  cfg.steps = 15;
  cfg.paste_back = true;
  cfg.seed = 3;
  Rng rng(cfg.seed);
  const AttackResult res = run_attack(clean, target, cfg, ens, rng);
  CHECK_NOTHROW(validate_budget(res.delta));
  CHECK(res.trace.size() == 15);
}

TEST_CASE("trace csv has one header and one line per step") {
  const EncoderEnsemble ens = make_toy_ensemble(41, 64, 16);
  Rng gen(500);
  const ImageTensor clean = testing::smooth_image(gen, 32);
  const ImageTensor target = testing::smooth_image(gen, 32);
  AttackConfig cfg;
  cfg.steps = 4;
  Rng rng(1);
  const AttackResult res = run_attack(clean, target, cfg, ens, rng);
  const auto path =
      (std::filesystem::temp_directory_path() / "trace.csv").string();
  write_trace_csv(res, ens, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,ensemble_similarity,toy-p8,toy-p16,toy-p32");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
  std::filesystem::remove(path);
}

TEST_CASE("shape mismatch and unvalidated images are rejected") {
  const EncoderEnsemble ens = make_toy_ensemble(43, 64, 16);
  AttackConfig cfg;
  Rng rng(1);
  const ImageTensor a(16, 16, 0.5), b(24, 24, 0.5);
  CHECK_THROWS_AS(run_attack(a, b, cfg, ens, rng), std::invalid_argument);
  ImageTensor bad(16, 16, 0.5);
  bad.data[0] = 2.0;
  CHECK_THROWS_AS(run_attack(bad, a, cfg, ens, rng), std::invalid_argument);
}
