#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "conceptbp/probe.hpp"

using namespace conceptbp;
using conceptbp::testing::random_tensor;

namespace {

ProbeDataset planted(std::size_t n, std::size_t dim, std::uint64_t seed,
                     const std::function<double(const Tensor&)>& f) {
  Rng rng(seed);
  Tensor a(Shape{n, dim});
  for (auto& v : a.data()) v = rng.normal();
  ProbeDataset d;
  d.activations = a;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(f(unstack(a, i)));
    d.indices.push_back(i);
  }
  return d;
}

}  // namespace

TEST_CASE("identity model pairs each sample with its concept value") {
  Model identity({3}, {}, 0);
  Tensor samples(Shape{4, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, -1, -2, -3});
  ConceptFunction first{"first", ConceptKind::Scalar, [](const Tensor& s, auto) { return s[0]; }};
  auto d = build_probe_dataset(identity, "input", samples, {}, first);
  CHECK(d.activations == samples);
  CHECK(d.labels == std::vector<double>{1, 4, 7, -1});
  CHECK(d.skipped == 0);

  ConceptFunction constant{"const", ConceptKind::Scalar, [](const Tensor&, auto) { return 2.5; }};
  auto c = build_probe_dataset(identity, "input", samples, {}, constant);
  for (double v : c.labels) CHECK(v == 2.5);
}

TEST_CASE("concept failures skip samples and are counted") {
  Model identity({2}, {}, 0);
  Tensor samples(Shape{3, 2}, {1, 0, 0, 1, 1, 1});
  ConceptFunction ratio{"ratio", ConceptKind::Scalar, [](const Tensor& s, auto) {
                          if (s[1] == 0) throw Error("zero denominator");
                          return s[0] / s[1];
                        }};
  auto d = build_probe_dataset(identity, "input", samples, {}, ratio);
  CHECK(d.skipped == 1);
  CHECK(d.labels == std::vector<double>{0.0, 1.0});
  CHECK(d.indices == std::vector<std::size_t>{1, 2});

  std::vector<int> labels{3, 8, 0};
  ConceptFunction by_label{"label", ConceptKind::Binary,
                           [](const Tensor&, std::optional<int> l) { return *l == 8 ? 1.0 : 0.0; }};
  auto e = build_probe_dataset(identity, "input", samples, labels, by_label);
  CHECK(e.labels == std::vector<double>{0, 1, 0});
}

TEST_CASE("single-class binary concept is rejected") {
  auto d = planted(50, 3, 1, [](const Tensor&) { return 1.0; });
  CHECK_THROWS_AS(train_probe(d, ConceptKind::Binary, 1e-4, {}), DegenerateConceptError);
}

TEST_CASE("binary probe on separable activations reaches 0.99 held-out accuracy") {
  auto d = planted(2000, 8, 2, [](const Tensor& a) { return a[0] > 0 ? 1.0 : 0.0; });
  TrainConfig cfg{.learning_rate = 0.05, .batch_size = 64, .epochs = 60, .seed = 3};
  auto fit = train_probe(d, ConceptKind::Binary, 1e-4, cfg, "tap");
  REQUIRE(fit.report.accuracy.has_value());
  CHECK(*fit.report.accuracy >= 0.99);
  CHECK(*fit.report.auc >= 0.99);
  CHECK(fit.report.test_size == 400);
  CHECK(fit.probe.tap == "tap");
}

TEST_CASE("scalar probe recovers planted linear coefficients") {
  auto d = planted(1000, 4, 4, [](const Tensor& a) { return 3.0 * a[1] - 2.0; });
  TrainConfig cfg{.learning_rate = 0.02, .batch_size = 50, .epochs = 80, .seed = 5};
  auto fit = train_probe(d, ConceptKind::Scalar, 0.0, cfg);
  CHECK(std::abs(fit.probe.weights[1] - 3.0) < 1e-2);
  CHECK(std::abs(fit.probe.bias + 2.0) < 1e-2);
  CHECK(*fit.report.r2 > 0.9999);
}

TEST_CASE("larger lambda never increases the weight L1 mass") {
  auto d = planted(500, 5, 6, [](const Tensor& a) { return 1.5 * a[0] - 0.5 * a[2] + 0.02 * a[3]; });
  TrainConfig cfg{.learning_rate = 0.1, .batch_size = 500, .epochs = 1500,
                  .optimizer = OptimizerKind::GradientDescent, .seed = 7};
  double previous = INFINITY;
  for (double lambda : {0.0, 1e-3, 1e-1}) {
    auto fit = train_probe(d, ConceptKind::Scalar, lambda, cfg);
    CHECK(fit.report.l1_mass <= previous + 1e-6);
    previous = fit.report.l1_mass;
  }
}

TEST_CASE("probe_predict") {
  Probe p;
  p.weights = Tensor(Shape{3}, 0.0);
  p.kind = ConceptKind::Binary;
  CHECK(p.predict(Tensor::vector({1, 2, 3})) == 0.5);
  p.kind = ConceptKind::Scalar;
  CHECK(p.predict(Tensor::vector({1, 2, 3})) == 0.0);
  CHECK_THROWS_AS(p.predict(Tensor::vector({1, 2})), ShapeError);

  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Probe q;
    q.kind = trial % 2 ? ConceptKind::Binary : ConceptKind::Scalar;
    q.weights = random_tensor(rng, {6});
    q.bias = rng.uniform(-1, 1);
    auto a = random_tensor(rng, {6});
    double z = q.bias;
    for (int i = 0; i < 6; ++i) z += q.weights[i] * a[i];
    const double expected = q.kind == ConceptKind::Binary ? 1.0 / (1.0 + std::exp(-z)) : z;
    CHECK(std::abs(q.predict(a) - expected) < 1e-12);

    Graph g;
    auto x = g.parameter("a", a.reshaped({1, 2, 3}));
    auto out = q.emit(g, x);
    g.mark_output("p", out);
    auto value = evaluate(g, {}).at("p").item();
    CHECK(std::abs(value - expected) < 1e-12);

    // d P / d a is w * sigma'(z) for binary probes and w for scalar probes.
    auto grad = gradient(g, {}, {"a"}, "p").at("a");
    const double slope = q.kind == ConceptKind::Binary ? expected * (1 - expected) : 1.0;
    for (int i = 0; i < 6; ++i) CHECK(std::abs(grad[i] - q.weights[i] * slope) < 1e-12);
    auto fd = conceptbp::testing::check_gradients(g, {{"a", a.reshaped({1, 2, 3})}}, {"a"}, out);
    CHECK(fd.max_rel_error < 1e-4);
  }
}

TEST_CASE("probe serialization round-trips bit-exactly") {
  Rng rng(9);
  Probe p{ConceptKind::Binary, "latent", 1e-4, -0.1234567890123, random_tensor(rng, {7})};
  auto text = p.serialize();
  auto back = Probe::deserialize(text);
  CHECK(back.kind == p.kind);
  CHECK(back.tap == p.tap);
  CHECK(back.lambda == p.lambda);
  CHECK(back.bias == p.bias);
  CHECK(back.weights == p.weights);
  CHECK(back.serialize() == text);
  CHECK_THROWS_AS(Probe::deserialize("conceptbp-probe v1\nkind fuzzy\n"), FormatError);
}

TEST_CASE("auc and r2 helpers") {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8}, l{0, 0, 1, 1};
  CHECK(roc_auc(s, l) == doctest::Approx(0.75));
  std::vector<double> t{1, 2, 3};
  CHECK(r_squared(t, t) == 1.0);
}
