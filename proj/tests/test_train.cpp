#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "support.hpp"
#include "visitrisk/error.hpp"
#include "visitrisk/train.hpp"

using namespace visitrisk;

namespace {

struct Problem {
  Matrix x;
  std::vector<std::uint8_t> y;
};

// Labels from a noisy linear rule on the first two features.
Problem linear_problem(std::size_t n, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Problem out{testing::random_matrix(n, p, gen), std::vector<std::uint8_t>(n)};
  std::normal_distribution<double> noise(0.0, 0.1);
  for (std::size_t r = 0; r < n; ++r) out.y[r] = out.x(r, 0) - 0.5 * out.x(r, 1) + noise(gen) > 0 ? 1 : 0;
  return out;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v;
  for (auto i = begin; i < end; ++i) v.push_back(i);
  return v;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.eta0 = 0.05;
  cfg.total_steps = 200;
  cfg.batch_size = 32;
  cfg.eval_every = 20;
  cfg.patience = 100;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("loss matches the direct definition") {
  std::mt19937_64 gen(3);
  const auto m = init_model(Architecture::nn2(), 6, 4);
  const auto x = testing::random_matrix(25, 6, gen);
  std::vector<std::uint8_t> y(25);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 3 == 0;
  CHECK(loss(m, x, y) == doctest::Approx(testing::naive_loss(m, x, y)).epsilon(1e-12));
  CHECK(loss_and_gradient(m, x, y).loss == doctest::Approx(loss(m, x, y)).epsilon(1e-14));
  CHECK_THROWS_AS(loss(m, x, std::vector<std::uint8_t>(24)), Error);
  CHECK_THROWS_AS(loss(m, Matrix(0, 6), {}), Error);
}

TEST_CASE("backprop agrees with central differences on random architectures") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<std::size_t> width(1, 6);
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch{"random", {}};
    const std::size_t depth = trial == 0 ? 8 : 1 + trial % 4;
    for (std::size_t l = 0; l < depth; ++l) arch.hidden.push_back(width(gen));
    const std::size_t p = width(gen);
    auto m = init_model(arch, p, 1000 + trial);
    std::normal_distribution<double> small(0.0, 0.3);
    for (auto block : m.parameter_blocks()) {
      for (auto& v : block) v += small(gen);
    }
    const auto x = testing::random_matrix(6, p, gen);
    std::vector<std::uint8_t> y(6);
    for (std::size_t i = 0; i < 6; ++i) y[i] = gen() % 2;
    CHECK(testing::gradient_check(m, x, y) < 1e-5);
  }
}

TEST_CASE("step size decays linearly to the floor") {
  TrainConfig cfg;
  cfg.eta0 = 0.1;
  cfg.total_steps = 100;
  CHECK(step_size(0, cfg) == 0.1);
  CHECK(step_size(50, cfg) == doctest::Approx(0.05));
  CHECK(step_size(100, cfg) == 0.0);
  cfg.eta_floor = 0.02;
  CHECK(step_size(90, cfg) == 0.02);
  CHECK(step_size(10, cfg) == doctest::Approx(0.09));
}

TEST_CASE("config validation and per-architecture optimizer") {
  TrainConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), Error);  // total_steps = 0
  cfg.total_steps = 10;
  cfg.validate();
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.momentum = 0.9;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  CHECK(TrainConfig::for_architecture(Architecture::nn8()).optimizer == Optimizer::kSgd);
  const auto nn4 = TrainConfig::for_architecture(Architecture::nn4());
  CHECK(nn4.optimizer == Optimizer::kSgdMomentum);
  CHECK(nn4.momentum == 0.9);
}

TEST_CASE("momentum 0 follows the plain SGD trajectory") {
  const auto prob = linear_problem(300, 5, 1);
  const RowSet tr{&prob.x, prob.y, range(0, 240)};
  const RowSet va{&prob.x, prob.y, range(240, 300)};
  auto cfg = small_config();
  cfg.total_steps = 50;
  cfg.optimizer = Optimizer::kSgd;
  const auto init = init_model(Architecture::nn2(), 5, 2);
  const auto sgd = train(init, tr, va, cfg);
  cfg.optimizer = Optimizer::kSgdMomentum;
  cfg.momentum = 0.0;
  const auto mom0 = train(init, tr, va, cfg);
  CHECK(sgd.model == mom0.model);
  CHECK(sgd.log.to_csv() == mom0.log.to_csv());
}

TEST_CASE("one small step along the gradient lowers the batch loss") {
  std::mt19937_64 gen(5);
  const auto m = init_model(Architecture::nn4(), 8, 3);
  const auto x = testing::random_matrix(64, 8, gen);
  std::vector<std::uint8_t> y(64);
  for (std::size_t i = 0; i < 64; ++i) y[i] = x(i, 0) > 0;
  const auto lg = loss_and_gradient(m, x, y);
  auto stepped = m;
  auto params = stepped.parameter_blocks();
  const auto grads = lg.gradient.parameter_blocks();
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t k = 0; k < params[b].size(); ++k) params[b][k] -= 1e-3 * grads[b][k];
  }
  CHECK(loss(stepped, x, y) < lg.loss);
}

TEST_CASE("training learns a linear rule") {
  const auto prob = linear_problem(2000, 6, 2);
  const RowSet tr{&prob.x, prob.y, range(0, 1600)};
  const RowSet va{&prob.x, prob.y, range(1600, 2000)};
  auto cfg = small_config();
  cfg.total_steps = 500;
  cfg.eval_every = 50;
  const auto result = train(init_model(Architecture::nn2(), 6, 1), tr, va, cfg);
  CHECK(result.best_metric > 0.9);
  CHECK(result.log.points.size() == 10);
  CHECK(result.stop == StopReason::kStepBudget);
  CHECK(result.log.points.front().train_loss > result.log.points.back().train_loss);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const auto prob = linear_problem(400, 4, 3);
  const RowSet tr{&prob.x, prob.y, range(0, 300)};
  const RowSet va{&prob.x, prob.y, range(300, 400)};
  const auto cfg = small_config();
  const auto a = train(init_model(Architecture::nn4(), 4, 1), tr, va, cfg);
  const auto b = train(init_model(Architecture::nn4(), 4, 1), tr, va, cfg);
  CHECK(a.model == b.model);
  CHECK(a.log.to_csv() == b.log.to_csv());
}

TEST_CASE("early stopping: an unreachable min_delta stops at the second evaluation") {
  const auto prob = linear_problem(400, 4, 4);
  const RowSet tr{&prob.x, prob.y, range(0, 300)};
  const RowSet va{&prob.x, prob.y, range(300, 400)};
  auto cfg = small_config();
  cfg.min_delta = std::numeric_limits<double>::infinity();
  cfg.patience = 1;
  const auto result = train(init_model(Architecture::nn2(), 4, 1), tr, va, cfg);
  CHECK(result.stop == StopReason::kEarlyStopped);
  CHECK(result.log.points.size() == 2);
  CHECK(result.steps_run == 2 * cfg.eval_every);
}

TEST_CASE("the returned model is the best checkpoint") {
  const auto prob = linear_problem(600, 4, 5);
  const RowSet tr{&prob.x, prob.y, range(0, 450)};
  const RowSet va{&prob.x, prob.y, range(450, 600)};
  auto cfg = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "visitrisk_test_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  cfg.checkpoint_dir = dir;
  const auto result = train(init_model(Architecture::nn2(), 4, 1), tr, va, cfg);

  double best = -1.0;
  for (const auto& p : result.log.points) best = std::max(best, p.val_balanced_accuracy);
  CHECK(result.best_metric == best);
  const auto ckpt = dir / fmt::format("checkpoint_step{:08d}.mlp", result.best_step);
  REQUIRE(std::filesystem::exists(ckpt));
  CHECK(load_model(ckpt) == result.model);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a runaway step size is reported as divergence") {
  const auto prob = linear_problem(200, 4, 6);
  const RowSet tr{&prob.x, prob.y, range(0, 150)};
  const RowSet va{&prob.x, prob.y, range(150, 200)};
  auto cfg = small_config();
  cfg.eta0 = 1e300;
  try {
    train(init_model(Architecture::nn2(), 4, 1), tr, va, cfg);
    FAIL("expected DivergenceDetected");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDivergenceDetected);
  }
}

TEST_CASE("empty or mismatched sets are rejected") {
  const auto prob = linear_problem(100, 4, 7);
  const RowSet tr{&prob.x, prob.y, range(0, 80)};
  const RowSet empty{&prob.x, prob.y, {}};
  const auto cfg = small_config();
  CHECK_THROWS_AS(train(init_model(Architecture::nn2(), 4, 1), tr, empty, cfg), Error);
  CHECK_THROWS_AS(train(init_model(Architecture::nn2(), 5, 1), tr, tr, cfg), Error);
}
