#include "conceptbp/train.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "conceptbp/random.hpp"

namespace conceptbp {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd" || name == "gd") return OptimizerKind::GradientDescent;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, AdamSettings adam)
    : kind_(kind), lr_(learning_rate), adam_(adam) {}

void Optimizer::step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw Error("optimizer: parameter/gradient count mismatch");
  if (kind_ == OptimizerKind::GradientDescent) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->data();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr_ * grads[i][k];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& g : grads) {
      m_.emplace_back(g.shape(), 0.0);
      v_.emplace_back(g.shape(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = adam_.beta1 * m[k] + (1.0 - adam_.beta1) * g[k];
      v[k] = adam_.beta2 * v[k] + (1.0 - adam_.beta2) * g[k] * g[k];
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + adam_.epsilon);
    }
  }
}

namespace {

struct LossGraph {
  Graph graph;
  NodeId loss;
  std::vector<NodeId> params;
};

LossGraph build_loss_graph(const Model& model, std::size_t batch, const Shape& target_sample,
                           LossKind loss, bool trainable) {
  LossGraph lg;
  Shape xs{batch};
  xs.insert(xs.end(), model.input_shape().begin(), model.input_shape().end());
  Shape ys{batch};
  ys.insert(ys.end(), target_sample.begin(), target_sample.end());
  auto x = lg.graph.input("x", xs);
  auto y = lg.graph.input("y", ys);
  auto em = model.emit(lg.graph, x, trainable);
  if (lg.graph.shape(em.output) != ys)
    throw ShapeError("targets " + shape_string(ys) + " do not match model output " +
                     shape_string(lg.graph.shape(em.output)));
  if (loss == LossKind::SquaredError) {
    auto diff = lg.graph.sub(em.output, y);
    lg.loss = lg.graph.scale(lg.graph.l2_norm_sq(diff), 1.0 / static_cast<double>(shape_size(ys)));
  } else {
    lg.loss = lg.graph.bce(em.output, y);
  }
  if (trainable)
    for (const auto& p : model.parameters()) lg.params.push_back(lg.graph.leaf(p.name));
  return lg;
}

}  // namespace

TrainOutcome train_supervised(const Model& model, const Tensor& inputs, const Tensor& targets,
                              LossKind loss, const TrainConfig& config) {
  config.validate();
  if (inputs.rank() < 2 || inputs.dim(0) == 0) throw ShapeError("training inputs must be a batch");
  if (targets.rank() < 2 || targets.dim(0) != inputs.dim(0))
    throw ShapeError("inputs and targets must have the same number of samples");
  const std::size_t n = inputs.dim(0);
  const Shape target_sample(targets.shape().begin() + 1, targets.shape().end());

  TrainOutcome out{model, {}};
  if (config.epochs == 0) return out;

  std::map<std::size_t, LossGraph> graphs;
  auto graph_for = [&](std::size_t b) -> LossGraph& {
    auto it = graphs.find(b);
    if (it == graphs.end())
      it = graphs.emplace(b, build_loss_graph(out.model, b, target_sample, loss, true)).first;
    return it->second;
  };

  Optimizer opt(config.optimizer, config.learning_rate);
  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::min(config.batch_size, n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                    order.begin() + static_cast<long>(end));
      auto& lg = graph_for(rows.size());
      Bindings b{{"x", gather_rows(inputs, rows)}, {"y", gather_rows(targets, rows)}};
      for (const auto& p : out.model.parameters()) b[p.name] = p.value;
      double value = 0.0;
      std::vector<Tensor> grads;
      try {
        Forward fwd(lg.graph, b);
        value = fwd.value(lg.loss).item();
        grads = fwd.backward(lg.loss, lg.params);
      } catch (const NumericError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(start / bs) + ": " + e.what());
      }
      total += value * static_cast<double>(rows.size());
      std::vector<Tensor*> ptrs;
      for (auto& p : out.model.parameters()) ptrs.push_back(&p.value);
      opt.step(ptrs, grads);
      for (auto* p : ptrs)
        if (!p->all_finite())
          throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                 ": non-finite parameter after update");
    }
    out.loss_curve.push_back(total / static_cast<double>(n));
  }
  return out;
}

double evaluate_loss(const Model& model, const Tensor& inputs, const Tensor& targets, LossKind loss,
                     std::size_t batch_size) {
  const std::size_t n = inputs.dim(0);
  const Shape target_sample(targets.shape().begin() + 1, targets.shape().end());
  std::map<std::size_t, LossGraph> graphs;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    auto it = graphs.find(end - start);
    if (it == graphs.end())
      it = graphs.emplace(end - start, build_loss_graph(model, end - start, target_sample, loss, false))
               .first;
    Forward fwd(it->second.graph,
                {{"x", slice_rows(inputs, start, end)}, {"y", slice_rows(targets, start, end)}});
    total += fwd.value(it->second.loss).item() * static_cast<double>(end - start);
  }
  return total / static_cast<double>(n);
}

HoldoutSplit holdout_split(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("a held-out split needs at least two samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x5eed5eedULL);
  rng.shuffle(order);
  const std::size_t n_test = std::max<std::size_t>(1, n / 5);
  const auto cut = order.begin() + static_cast<long>(n - n_test);
  return {{order.begin(), cut}, {cut, order.end()}};
}

Tensor predict_batched(const Model& model, const Tensor& inputs, std::size_t batch_size) {
  const std::size_t n = inputs.dim(0);
  std::vector<double> data;
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), model.output_shape().begin(), model.output_shape().end());
  data.reserve(shape_size(out_shape));
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    auto y = model.forward(slice_rows(inputs, start, end));
    data.insert(data.end(), y.values().begin(), y.values().end());
  }
  return Tensor(std::move(out_shape), std::move(data));
}

}  // namespace conceptbp
