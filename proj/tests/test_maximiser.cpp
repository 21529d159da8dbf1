#include <cmath>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "conceptbp/maximiser.hpp"

using namespace conceptbp;
using conceptbp::testing::random_tensor;

namespace {

// L(s) = s on two inputs with the scalar probe P(a) = a₁.
struct Toy {
  Model model{Shape{2}, {}, 0};
  Probe probe{ConceptKind::Scalar, "input", 0.0, 0.0, Tensor::vector({1, 0})};
  TabularAdapter adapter{2};
  Tensor s = Tensor::vector({0, 0});
};

double toy_objective(double x, double y, double lambda1, double lambda2, double target) {
  return lambda1 * std::abs(x - target) + lambda2 * std::sqrt(x * x + y * y);
}

double grid_minimum(double lambda1, double lambda2, double target) {
  double best = INFINITY;
  for (int i = 0; i <= 200; ++i)
    for (int j = 0; j <= 200; ++j)
      best = std::min(best, toy_objective(-2.0 + 0.02 * i, -2.0 + 0.02 * j, lambda1, lambda2, target));
  return best;
}

}  // namespace

TEST_CASE("objective matches a hand-assembled composition") {
  Rng rng(1);
  Model model({6}, {Layer::dense("h", 5), Layer::sigmoid("h_act"), Layer::dense("out", 1)}, 2);
  TabularAdapter adapter(6);
  for (int trial = 0; trial < 20; ++trial) {
    Probe probe{trial % 2 ? ConceptKind::Binary : ConceptKind::Scalar, "h_act", 0.0, rng.uniform(-1, 1),
                random_tensor(rng, {5})};
    auto s = random_tensor(rng, {6});
    auto d = random_tensor(rng, {6});
    MaximiseConfig cfg{.lambda1 = rng.uniform(0, 2), .lambda2 = rng.uniform(0, 2), .target = rng.uniform(-1, 1)};
    auto v = objective(model, probe, adapter, s, {{"delta", d}}, cfg);

    const double p = probe.predict(model.activations_at("h_act", tabular_combine(s, d)));
    const double dist = tabular_distance(s, d);
    CHECK(std::abs(v.probe - p) < 1e-12);
    CHECK(std::abs(v.concept_term - cfg.lambda1 * std::abs(p - cfg.target)) < 1e-12);
    CHECK(std::abs(v.distance_term - cfg.lambda2 * dist) < 1e-12);
    CHECK(std::abs(v.total - (v.concept_term + v.distance_term)) < 1e-12);

    cfg.lambda1 = 0.0;
    auto only = objective(model, probe, adapter, s, {{"delta", d}}, cfg);
    CHECK(std::abs(only.total - cfg.lambda2 * dist) < 1e-12);
  }
}

TEST_CASE("objective gradient matches finite differences away from kinks") {
  Rng rng(3);
  Model model({4}, {Layer::dense("h", 3), Layer::sigmoid("h_act")}, 4);
  Probe probe{ConceptKind::Binary, "h_act", 0.0, 0.1, random_tensor(rng, {3})};
  TabularAdapter adapter(4);
  auto s = random_tensor(rng, {4});
  MaximiseConfig cfg{.lambda1 = 1.3, .lambda2 = 0.7, .target = 1.0};
  MaximisationProblem problem(model, probe, adapter, s, cfg);
  Perturbation d{{"delta", random_tensor(rng, {4})}};
  auto res = conceptbp::testing::check_gradients(problem.graph(), d, {"delta"},
                                                 problem.graph().output("objective"));
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("2-D toy: optimizer reaches the grid-search optimum") {
  Toy toy;
  MaximiseConfig cfg{.lambda1 = 1.0, .lambda2 = 1.0, .target = 1.0, .seed = 5};
  auto result = maximise(toy.model, toy.probe, toy.adapter, toy.s, cfg);
  const auto& d = result.perturbation.at("delta");
  const double final_objective = toy_objective(d[0], d[1], 1.0, 1.0, 1.0);
  CHECK(std::abs(final_objective - grid_minimum(1.0, 1.0, 1.0)) < 1e-2);
  CHECK(result.trajectory.size() <= cfg.max_steps);
  double lowest = INFINITY;
  for (const auto& point : result.trajectory) lowest = std::min(lowest, point.objective);
  CHECK(std::abs(lowest - final_objective) < 1e-12);  // the best iterate is returned

  // A target the band cannot reach within the limit ends at the step limit.
  MaximiseConfig tight = cfg;
  tight.max_steps = 5;
  auto limited = maximise(toy.model, toy.probe, toy.adapter, toy.s, tight);
  CHECK(limited.status == RunStatus::StepLimit);
  CHECK(limited.trajectory.size() == 5);
}

TEST_CASE("probe already at the target converges at step 0 with zero effect") {
  Toy toy;
  toy.s = Tensor::vector({1.02, -3});
  MaximiseConfig cfg{.target = 1.0, .seed = 6};
  auto result = maximise(toy.model, toy.probe, toy.adapter, toy.s, cfg);
  CHECK(result.status == RunStatus::Converged);
  CHECK(result.trajectory.size() == 1);
  CHECK(result.perturbed == toy.s);
  CHECK(result.perturbation.at("delta") == Tensor(Shape{2}, 0.0));
  CHECK(result.distance == 0.0);
  CHECK(result.trajectory[0].objective == doctest::Approx(0.02));
}

TEST_CASE("converged results satisfy the tolerance and runs are deterministic") {
  Rng rng(7);
  Model model({5}, {Layer::dense("h", 4), Layer::sigmoid("h_act")}, 8);
  Probe probe{ConceptKind::Binary, "h_act", 0.0, 0.0, random_tensor(rng, {4})};
  TabularAdapter adapter(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto s = random_tensor(rng, {5});
    MaximiseConfig cfg{.lambda2 = 0.05, .target = 0.9, .seed = static_cast<std::uint64_t>(trial)};
    auto a = maximise(model, probe, adapter, s, cfg);
    auto b = maximise(model, probe, adapter, s, cfg);
    CHECK(run_report_json(a, cfg, s) == run_report_json(b, cfg, s));
    CHECK(a.perturbation.at("delta") == b.perturbation.at("delta"));
    if (a.status == RunStatus::Converged) CHECK(std::abs(a.probe_output - 0.9) <= 0.05);
  }
}

TEST_CASE("plain gradient descent decreases the toy objective monotonically") {
  Toy toy;
  MaximiseConfig cfg{.lambda1 = 1.0, .lambda2 = 0.5, .target = 1.0, .max_steps = 2000, .learning_rate = 1e-3,
                     .seed = 9, .optimizer = OptimizerKind::GradientDescent};
  auto result = maximise(toy.model, toy.probe, toy.adapter, toy.s, cfg);
  CHECK(result.status == RunStatus::Converged);
  REQUIRE(result.trajectory.size() > 100);
  for (std::size_t k = 1; k < result.trajectory.size(); ++k)
    CHECK(result.trajectory[k].objective <= result.trajectory[k - 1].objective + 1e-9);
}

TEST_CASE("sweep: one result per lambda2, in order, matching single runs") {
  Toy toy;
  MaximiseConfig base{.lambda1 = 1.0, .target = 1.0, .seed = 11};
  auto results = sweep_lambdas(toy.model, toy.probe, toy.adapter, toy.s, base, {0.1, 0.75, 5.0});
  REQUIRE(results.size() == 3);
  CHECK(results[0].status == RunStatus::Converged);
  CHECK(results[2].distance < 0.1);

  // Larger λ₂ never buys a larger distance, whatever the seed.
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    MaximiseConfig cfg = base;
    cfg.seed = seed;
    auto sweep = sweep_lambdas(toy.model, toy.probe, toy.adapter, toy.s, cfg, {0.1, 0.3, 0.75, 0.95, 5.0});
    for (std::size_t i = 1; i < sweep.size(); ++i) CHECK(sweep[i].distance <= sweep[i - 1].distance + 1e-6);
  }

  MaximiseConfig single = base;
  single.lambda2 = 0.75;
  auto one = sweep_lambdas(toy.model, toy.probe, toy.adapter, toy.s, base, {0.75});
  auto direct = maximise(toy.model, toy.probe, toy.adapter, toy.s, single);
  CHECK(run_report_json(one[0], single, toy.s) == run_report_json(direct, single, toy.s));

  CHECK_THROWS_AS(sweep_lambdas(toy.model, toy.probe, toy.adapter, toy.s, base, {}), ConfigError);
  // A run that cannot be set up is recorded rather than aborting the sweep.
  auto bad = sweep_lambdas(toy.model, toy.probe, toy.adapter, toy.s, base, {0.5, -1.0});
  REQUIRE(bad.size() == 2);
  CHECK(bad[1].status == RunStatus::Diverged);
  CHECK_FALSE(bad[1].message.empty());
}

TEST_CASE("non-finite objective aborts with the partial trajectory") {
  Toy toy;
  MaximiseConfig cfg{.target = 1.0, .learning_rate = 1e300, .seed = 12,
                     .optimizer = OptimizerKind::GradientDescent};
  auto result = maximise(toy.model, toy.probe, toy.adapter, toy.s, cfg);
  CHECK(result.status == RunStatus::Diverged);
  CHECK_FALSE(result.trajectory.empty());
  CHECK(std::isfinite(result.distance));
}

TEST_CASE("run report is JSON with config echo and trajectory") {
  Toy toy;
  MaximiseConfig cfg{.target = 1.0, .seed = 13};
  auto result = maximise(toy.model, toy.probe, toy.adapter, toy.s, cfg);
  auto report = nlohmann::json::parse(run_report_json(result, cfg, toy.s));
  CHECK(report["config"]["lambda1"] == 1.0);
  CHECK(report["config"]["seed"] == 13);
  CHECK(report["status"] == status_name(result.status));
  CHECK(report["trajectory"]["objective"].size() == result.trajectory.size());
  CHECK(report["delta"].size() == 2);
}

TEST_CASE("config validation") {
  MaximiseConfig cfg;
  cfg.lambda2 = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tolerance = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  Toy toy;
  Probe wrong{ConceptKind::Scalar, "missing", 0.0, 0.0, Tensor::vector({1, 0})};
  CHECK_THROWS_AS(maximise(toy.model, wrong, toy.adapter, toy.s, {}), Error);
}
