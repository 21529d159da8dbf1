#pragma once

// Randomized composite graphs and a central finite-difference checker.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "conceptbp/graph.hpp"
#include "conceptbp/random.hpp"

namespace conceptbp::testing {

struct RandomGraph {
  Graph graph;
  Bindings bindings;
  std::vector<std::string> leaves;
  NodeId output;
  std::vector<NodeId> kink_inputs;  // operands of relu / abs / l1 nodes
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline RandomGraph make_random_graph(Rng& rng) {
  RandomGraph rg;
  auto& g = rg.graph;
  const bool image = rng.bernoulli(0.35);
  Shape shape = image ? Shape{1 + rng.below(2), 1 + rng.below(2), 3 + rng.below(3), 3 + rng.below(3)}
                      : Shape{2 + rng.below(3), 2 + rng.below(3)};

  auto leaf = [&](const std::string& name, Shape s, bool trainable) {
    Tensor v = random_tensor(rng, s);
    NodeId id = trainable ? g.parameter(name, v) : g.input(name, s);
    rg.bindings[name] = v;
    rg.leaves.push_back(name);
    return id;
  };

  std::vector<NodeId> pool{leaf("a", shape, true), leaf("b", shape, true), leaf("x", shape, false)};
  NodeId cur = pool[rng.below(pool.size())];
  int counter = 0;
  const std::size_t steps = 3 + rng.below(5);
  for (std::size_t s = 0; s < steps; ++s) {
    const Shape& cs = g.shape(cur);
    std::vector<NodeId> same;
    for (auto p : pool)
      if (g.shape(p) == cs && !(p == cur)) same.push_back(p);
    const std::size_t choice = rng.below(12);
    switch (choice) {
      case 0:
        if (!same.empty()) cur = g.add(cur, same[rng.below(same.size())]);
        break;
      case 1:
        if (!same.empty()) cur = g.sub(cur, same[rng.below(same.size())]);
        break;
      case 2:
        if (!same.empty()) cur = g.mul(cur, same[rng.below(same.size())]);
        break;
      case 3:
        cur = g.scale(cur, rng.uniform(-2.0, 2.0));
        break;
      case 4:
        cur = g.sigmoid(g.add_scalar(cur, rng.uniform(-0.5, 0.5)));
        break;
      case 5:
        rg.kink_inputs.push_back(cur);
        cur = g.relu(cur);
        break;
      case 6:
        cur = g.pow(cur, rng.bernoulli(0.5) ? 2.0 : 3.0);
        break;
      case 7:
        rg.kink_inputs.push_back(cur);
        cur = g.abs(cur);
        break;
      case 8:
        if (cs.size() == 2) {
          auto w = leaf("w" + std::to_string(counter++), Shape{cs[1], 2 + rng.below(3)}, true);
          cur = g.matmul(cur, w);
        } else {
          auto w = leaf("k" + std::to_string(counter++), Shape{1 + rng.below(2), cs[1], 3, 3}, true);
          cur = g.conv2d(cur, w);
        }
        break;
      case 9: {
        const std::size_t axis = rng.below(cs.size());
        auto bias = leaf("bias" + std::to_string(counter++), Shape{cs[axis]}, true);
        cur = g.bias_add(cur, bias, axis);
        break;
      }
      case 10:
        if (cs.size() == 4)
          cur = g.reshape(cur, Shape{cs[0], cs[1] * cs[2] * cs[3]});
        else
          cur = g.scale(g.add_scalar(cur, 0.25), 0.5);
        break;
      default:
        cur = g.sigmoid(cur);
        break;
    }
    pool.push_back(cur);
  }

  switch (rng.below(5)) {
    case 0: rg.output = g.sum(cur); break;
    case 1: rg.output = g.mean(cur); break;
    case 2: rg.kink_inputs.push_back(cur); rg.output = g.l1_norm(cur); break;
    case 3: rg.output = g.l2_norm_sq(cur); break;
    default: rg.output = g.l2_norm(cur); break;
  }
  g.mark_output("out", rg.output);
  return rg;
}

/// True if some kink operand lies within `margin` of zero at these bindings.
inline bool near_kink(const RandomGraph& rg, double margin) {
  Forward fwd(rg.graph, rg.bindings);
  for (auto k : rg.kink_inputs)
    for (double v : fwd.value(k).data())
      if (std::abs(v) < margin) return true;
  return false;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients with central differences of step eps.
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradCheck check_gradients(const Graph& graph, const Bindings& bindings,
                                 const std::vector<std::string>& leaves, NodeId output,
                                 double eps = 1e-5, double floor = 1e-3) {
  std::vector<NodeId> ids;
  for (const auto& l : leaves) ids.push_back(graph.leaf(l));
  Forward fwd(graph, bindings);
  auto grads = fwd.backward(output, ids);
  GradCheck res;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Bindings b = bindings;
    auto& t = b.at(leaves[i]);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double orig = t[k];
      t[k] = orig + eps;
      const double up = Forward(graph, b).value(output).item();
      t[k] = orig - eps;
      const double down = Forward(graph, b).value(output).item();
      t[k] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = grads[i][k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / denom);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace conceptbp::testing
