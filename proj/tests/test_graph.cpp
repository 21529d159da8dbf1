#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace conceptbp;
using conceptbp::testing::random_tensor;

TEST_CASE("evaluate: sigmoid at zero and an affine map") {
  Graph g;
  auto x = g.input("x", {1});
  g.mark_output("sig", g.sigmoid(x));
  g.mark_output("affine", g.add_scalar(g.scale(x, 2.0), 1.0));

  auto at0 = evaluate(g, {{"x", Tensor::scalar(0.0)}});
  CHECK(at0.at("sig").item() == 0.5);
  auto at3 = evaluate(g, {{"x", Tensor::scalar(3.0)}});
  CHECK(at3.at("affine").item() == 7.0);
}

TEST_CASE("evaluate: errors") {
  Graph g;
  auto x = g.input("x", {2});
  g.mark_output("y", g.sum(x));
  CHECK_THROWS_AS(evaluate(g, {}), Error);
  CHECK_THROWS_AS(evaluate(g, {{"x", Tensor(Shape{3})}}), ShapeError);

  Graph h;
  auto a = h.input("a", {1});
  h.mark_output("y", h.pow(a, 0.5));
  CHECK_THROWS_AS(evaluate(h, {{"a", Tensor::scalar(-1.0)}}), NumericError);

  Graph k;
  auto p = k.input("p", {2, 3});
  auto q = k.input("q", {2, 3});
  CHECK_THROWS_AS(k.matmul(p, q), ShapeError);
  CHECK_THROWS_AS(k.add(p, k.input("r", {3, 2})), ShapeError);
}

TEST_CASE("evaluate matches a scalar interpreter on random dense networks") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d0 = 3 + rng.below(4), d1 = 2 + rng.below(5), d2 = 2 + rng.below(5), d3 = 1 + rng.below(3);
    const std::size_t n = 1 + rng.below(4);
    Tensor x = random_tensor(rng, {n, d0});
    Tensor w1 = random_tensor(rng, {d0, d1}), b1 = random_tensor(rng, {d1});
    Tensor w2 = random_tensor(rng, {d1, d2}), b2 = random_tensor(rng, {d2});
    Tensor w3 = random_tensor(rng, {d2, d3}), b3 = random_tensor(rng, {d3});

    Graph g;
    auto h = g.input("x", {n, d0});
    h = g.relu(g.bias_add(g.matmul(h, g.constant(w1)), g.constant(b1), 1));
    h = g.sigmoid(g.bias_add(g.matmul(h, g.constant(w2)), g.constant(b2), 1));
    h = g.bias_add(g.matmul(h, g.constant(w3)), g.constant(b3), 1);
    g.mark_output("y", h);
    auto y = evaluate(g, {{"x", x}}).at("y");

    auto layer = [](const std::vector<double>& in, const Tensor& w, const Tensor& b, int act) {
      const std::size_t rows = w.dim(0), cols = w.dim(1);
      std::vector<double> out(cols);
      for (std::size_t j = 0; j < cols; ++j) {
        double s = b[j];
        for (std::size_t i = 0; i < rows; ++i) s += in[i] * w[i * cols + j];
        if (act == 1) s = s > 0 ? s : 0;
        if (act == 2) s = 1.0 / (1.0 + std::exp(-s));
        out[j] = s;
      }
      return out;
    };
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> in(x.values().begin() + r * d0, x.values().begin() + (r + 1) * d0);
      auto o = layer(layer(layer(in, w1, b1, 1), w2, b2, 2), w3, b3, 0);
      for (std::size_t j = 0; j < d3; ++j) CHECK(std::abs(o[j] - y[r * d3 + j]) < 1e-12);
    }
  }
}

TEST_CASE("gradient: power rule and sigmoid slope") {
  Graph g;
  auto x = g.parameter("x", Tensor::scalar(3.0));
  g.mark_output("sq", g.pow(x, 2.0));
  g.mark_output("sig", g.sigmoid(x));
  CHECK(gradient(g, {}, {"x"}, "sq").at("x").item() == doctest::Approx(6.0).epsilon(1e-12));
  auto gs = gradient(g, {{"x", Tensor::scalar(0.0)}}, {"x"}, "sig").at("x").item();
  CHECK(gs == 0.25);
}

TEST_CASE("gradient: errors") {
  Graph g;
  auto x = g.parameter("x", Tensor(Shape{2}, 1.0));
  g.mark_output("vec", g.scale(x, 2.0));
  g.mark_output("s", g.sum(x));
  CHECK_THROWS_AS(gradient(g, {}, {"x"}, "vec"), ShapeError);
  CHECK_THROWS_AS(gradient(g, {}, {"nope"}, "s"), Error);
}

TEST_CASE("relu subgradient at zero is zero; l2 norm subgradient at origin is zero") {
  Graph g;
  auto x = g.parameter("x", Tensor(Shape{3}, 0.0));
  g.mark_output("r", g.sum(g.relu(x)));
  g.mark_output("n", g.l2_norm(x));
  auto gr = gradient(g, {}, {"x"}, "r");
  auto gn = gradient(g, {}, {"x"}, "n");
  for (double v : gr.at("x").data()) CHECK(v == 0.0);
  for (double v : gn.at("x").data()) CHECK(v == 0.0);
}

TEST_CASE("random composite graphs agree with central finite differences") {
  Rng rng(2024);
  int checked = 0;
  while (checked < 60) {
    auto rg = conceptbp::testing::make_random_graph(rng);
    if (conceptbp::testing::near_kink(rg, 1e-4)) continue;
    auto res = conceptbp::testing::check_gradients(rg.graph, rg.bindings, rg.leaves, rg.output);
    CHECK(res.max_rel_error < 1e-4);
    ++checked;
  }
}

TEST_CASE("bce and plane ops agree with finite differences") {
  Rng rng(5);
  Graph g;
  auto z = g.parameter("z", random_tensor(rng, {3, 2, 2}));
  auto t = g.input("t", {3, 2, 2});
  auto p = g.sigmoid(z);
  auto v = g.repeat_planes(g.sum_planes(g.mul(p, p)), 3);
  auto cat = g.concat(v, p);
  auto loss = g.add(g.bce(p, t), g.l2_norm_sq(cat));
  g.mark_output("loss", loss);
  Tensor targets(Shape{3, 2, 2});
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<double>(i % 2);
  Bindings b{{"z", random_tensor(rng, {3, 2, 2})}, {"t", targets}};
  auto res = conceptbp::testing::check_gradients(g, b, {"z"}, loss);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("convolution equals a naive quadruple loop") {
  Rng rng(7);
  for (std::size_t size : {6u, 28u}) {
    const std::size_t n = 2, c = 3, o = 4, k = 3;
    Tensor x = random_tensor(rng, {n, c, size, size});
    Tensor w = random_tensor(rng, {o, c, k, k});
    Graph g;
    g.mark_output("y", g.conv2d(g.input("x", x.shape()), g.constant(w)));
    auto y = evaluate(g, {{"x", x}}).at("y");
    double worst = 0.0;
    const long pad = 1;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) {
            double s = 0.0;
            for (std::size_t ic = 0; ic < c; ++ic)
              for (std::size_t ki = 0; ki < k; ++ki)
                for (std::size_t kj = 0; kj < k; ++kj) {
                  const long si = static_cast<long>(i + ki) - pad;
                  const long sj = static_cast<long>(j + kj) - pad;
                  if (si < 0 || sj < 0 || si >= static_cast<long>(size) || sj >= static_cast<long>(size))
                    continue;
                  s += x[((b * c + ic) * size + si) * size + sj] * w[((oc * c + ic) * k + ki) * k + kj];
                }
            worst = std::max(worst, std::abs(s - y[((b * o + oc) * size + i) * size + j]));
          }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("evaluate is pure") {
  Rng rng(3);
  auto rg = conceptbp::testing::make_random_graph(rng);
  auto a = evaluate(rg.graph, rg.bindings);
  auto b = evaluate(rg.graph, rg.bindings);
  CHECK(a.at("out") == b.at("out"));
}

TEST_CASE("binarize: threshold, tie-break, straight-through gradient, idempotence") {
  Graph g;
  auto x = g.parameter("x", Tensor::vector({0.7, 0.2, 0.5, -3.0, 9.0}));
  auto bx = g.binarize(x);
  g.mark_output("b", bx);
  g.mark_output("bb", g.binarize(bx));
  g.mark_output("s", g.sum(bx));
  auto out = evaluate(g, {});
  CHECK(out.at("b") == Tensor::vector({1, 0, 0, 0, 1}));
  CHECK(out.at("bb") == out.at("b"));
  auto gs = gradient(g, {}, {"x"}, "s");
  for (double v : gs.at("x").data()) CHECK(v == 1.0);
}

TEST_CASE("plane_argmax_binarize keeps at most one plane per position") {
  Graph g;
  // 3 planes x 2 positions
  auto x = g.parameter("x", Tensor(Shape{3, 2}, {0.9, 0.1, 0.95, 0.4, 0.95, 0.3}));
  g.mark_output("y", g.plane_argmax_binarize(x));
  auto y = evaluate(g, {}).at("y");
  // position 0: planes 1 and 2 tie at 0.95 -> lowest index wins; position 1: max 0.4 <= 0.5
  CHECK(y == Tensor(Shape{3, 2}, {0, 0, 1, 0, 0, 0}));
}
