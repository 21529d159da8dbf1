#include "conceptbp/maximiser.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace conceptbp {

void MaximiseConfig::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!finite_nonneg(lambda1)) throw ConfigError("lambda1 must be a finite value >= 0");
  if (!finite_nonneg(lambda2)) throw ConfigError("lambda2 must be a finite value >= 0");
  if (!std::isfinite(target)) throw ConfigError("target must be finite");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(tolerance > 0.0) || !std::isfinite(tolerance)) throw ConfigError("tolerance must be > 0");
  if (!finite_nonneg(init_noise)) throw ConfigError("init_noise must be >= 0");
}

std::string status_name(RunStatus status) {
  switch (status) {
    case RunStatus::Converged: return "converged";
    case RunStatus::StepLimit: return "step-limit";
    case RunStatus::Diverged: return "diverged";
  }
  return "unknown";
}

MaximisationProblem::MaximisationProblem(const Model& model, const Probe& probe, const ModalityAdapter& adapter,
                                         Tensor sample, const MaximiseConfig& config)
    : adapter_(&adapter), sample_(std::move(sample)), config_(config) {
  config_.validate();
  if (!model.has_tap(probe.tap)) throw Error("unknown layer tap '" + probe.tap + "'");
  if (shape_size(model.tap_shape(probe.tap)) != probe.weights.size())
    throw ShapeError("probe expects " + std::to_string(probe.weights.size()) + " activations but tap '" + probe.tap +
                     "' has " + std::to_string(shape_size(model.tap_shape(probe.tap))));
  for (const auto& [name, shape] : adapter.perturbation_shape(sample_)) leaves_.push_back(name);

  auto em = adapter.emit(graph_, sample_);
  combined_ = em.combined;
  distance_ = em.distance;
  auto tap = model.emit(graph_, em.combined, false, "model.", probe.tap).output;
  probe_ = probe.emit(graph_, tap);
  concept_ = graph_.abs(graph_.add_scalar(probe_, -config_.target));
  total_ = graph_.add(graph_.scale(concept_, config_.lambda1), graph_.scale(distance_, config_.lambda2));
  graph_.mark_output("objective", total_);
  graph_.mark_output("probe", probe_);
  graph_.mark_output("distance", distance_);
  graph_.mark_tap("combined", combined_);
}

ObjectiveValue MaximisationProblem::read(const Forward& f) const {
  ObjectiveValue v;
  v.probe = f.value(probe_).item();
  v.distance = f.value(distance_).item();
  v.concept_term = config_.lambda1 * f.value(concept_).item();
  v.distance_term = config_.lambda2 * v.distance;
  v.total = f.value(total_).item();
  return v;
}

ObjectiveValue MaximisationProblem::evaluate(const Perturbation& perturbation) const {
  return read(Forward(graph_, perturbation));
}

ObjectiveValue MaximisationProblem::gradient(const Perturbation& perturbation, Perturbation& grads) const {
  Forward f(graph_, perturbation);
  std::vector<NodeId> wrt;
  for (const auto& name : leaves_) wrt.push_back(graph_.leaf(name));
  auto g = f.backward(total_, wrt);
  grads.clear();
  for (std::size_t i = 0; i < leaves_.size(); ++i) grads[leaves_[i]] = std::move(g[i]);
  return read(f);
}

Tensor MaximisationProblem::combined(const Perturbation& perturbation) const {
  Forward f(graph_, perturbation);
  return f.value(combined_).reshaped(sample_.shape());
}

ObjectiveValue objective(const Model& model, const Probe& probe, const ModalityAdapter& adapter, const Tensor& s,
                         const Perturbation& perturbation, const MaximiseConfig& config) {
  return MaximisationProblem(model, probe, adapter, s, config).evaluate(perturbation);
}

PerturbationResult maximise(const Model& model, const Probe& probe, const ModalityAdapter& adapter, const Tensor& s,
                            const MaximiseConfig& config) {
  MaximisationProblem problem(model, probe, adapter, s, config);
  PerturbationResult result;
  auto finish = [&](const Perturbation& p, const ObjectiveValue& v, RunStatus status) {
    result.perturbation = p;
    result.perturbed = problem.combined(p);
    result.probe_output = v.probe;
    result.distance = v.distance;
    result.status = status;
    return result;
  };

  const auto zero = adapter.zero_effect(s);
  const auto at_zero = problem.evaluate(zero);
  result.initial_probe = at_zero.probe;
  if (std::abs(at_zero.probe - config.target) <= config.tolerance) {
    result.trajectory.push_back({at_zero.probe, at_zero.distance, at_zero.total});
    return finish(zero, at_zero, RunStatus::Converged);
  }

  // Gradient steps on the objective, remembering the best iterate. Before the
  // probe reaches the ε-band "best" is the lowest objective; once it has, only
  // in-band iterates count. The objective has a kink at P = o (and the board
  // objective is piecewise constant), so plain steps oscillate: after
  // kPatience steps without improvement the rate halves and the run restarts
  // from the best iterate. Before the band only strictly worse steps count
  // towards that, since flat stretches are normal progress under the
  // straight-through masks. A converged run ends once the rate has fallen by
  // kMinRateRatio; otherwise it runs to the step limit.
  constexpr std::size_t kPatience = 20;
  constexpr double kMinRateRatio = 1e-6;
  const auto in_band = [&](const ObjectiveValue& v) { return std::abs(v.probe - config.target) <= config.tolerance; };

  Rng rng(config.seed);
  Perturbation current = adapter.init(s, rng, config.init_noise);
  Optimizer optimizer(config.optimizer, config.learning_rate);
  Perturbation grads;
  bool converged = false;
  Perturbation best, best_grads;
  ObjectiveValue best_value;
  bool have_best = false;
  std::size_t stale = 0;
  const auto record = [&](const ObjectiveValue& v) { result.trajectory.push_back({v.probe, v.distance, v.total}); };
  const auto outcome = [&](RunStatus status) {
    return have_best ? finish(best, best_value, status) : finish(zero, at_zero, status);
  };
  try {
    for (std::size_t step = 0; step < config.max_steps; ++step) {
      if (step > 0) {
        std::vector<Tensor*> params;
        std::vector<Tensor> grad_list;
        for (const auto& name : problem.leaves()) {
          params.push_back(&current.at(name));
          grad_list.push_back(grads.at(name));
        }
        optimizer.step(params, grad_list);
        adapter.project(current);
      }
      const auto value = problem.gradient(current, grads);
      const bool entering = !converged && in_band(value);
      if (!converged) record(value);
      if (entering || !have_best || (value.total < best_value.total && (!converged || in_band(value)))) {
        if (converged) record(value);
        best = current, best_grads = grads, best_value = value;
        have_best = true;
        converged = converged || entering;
        stale = 0;
        continue;
      }
      if (!converged && value.total == best_value.total) continue;
      if (++stale < kPatience) continue;
      stale = 0;
      const double rate = optimizer.learning_rate() * 0.5;
      if (rate < config.learning_rate * kMinRateRatio) {
        if (converged) break;
      } else {
        optimizer.set_learning_rate(rate);
      }
      current = best, grads = best_grads;
    }
  } catch (const NumericError& e) {
    result.message = e.what();
    return outcome(RunStatus::Diverged);
  }
  return outcome(converged ? RunStatus::Converged : RunStatus::StepLimit);
}

std::vector<PerturbationResult> sweep_lambdas(const Model& model, const Probe& probe, const ModalityAdapter& adapter,
                                              const Tensor& s, const MaximiseConfig& base,
                                              const std::vector<double>& lambda2s) {
  if (lambda2s.empty()) throw ConfigError("lambda2 list must not be empty");
  std::vector<PerturbationResult> results;
  for (double lambda2 : lambda2s) {
    MaximiseConfig config = base;
    config.lambda2 = lambda2;
    try {
      results.push_back(maximise(model, probe, adapter, s, config));
    } catch (const Error& e) {
      PerturbationResult failed;
      failed.status = RunStatus::Diverged;
      failed.message = e.what();
      failed.perturbed = s;
      failed.probe_output = NAN;
      failed.distance = NAN;
      results.push_back(std::move(failed));
    }
  }
  return results;
}

std::string run_report_json(const PerturbationResult& result, const MaximiseConfig& config, const Tensor& sample) {
  using nlohmann::ordered_json;
  auto number = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
  ordered_json report;
  report["config"] = {{"lambda1", config.lambda1},
                      {"lambda2", config.lambda2},
                      {"target", config.target},
                      {"max_steps", config.max_steps},
                      {"learning_rate", config.learning_rate},
                      {"tolerance", config.tolerance},
                      {"seed", config.seed},
                      {"optimizer", optimizer_name(config.optimizer)},
                      {"init_noise", config.init_noise}};
  report["status"] = status_name(result.status);
  if (!result.message.empty()) report["message"] = result.message;
  report["steps"] = result.trajectory.size();
  report["initial_probe"] = number(result.initial_probe);
  report["final_probe"] = number(result.probe_output);
  report["final_distance"] = number(result.distance);
  ordered_json delta = ordered_json::array();
  if (result.perturbed.size() == sample.size())
    for (std::size_t i = 0; i < sample.size(); ++i) delta.push_back(number(result.perturbed[i] - sample[i]));
  report["delta"] = delta;
  ordered_json pert = ordered_json::object();
  for (const auto& [name, t] : result.perturbation) {
    ordered_json values = ordered_json::array();
    for (double v : t.data()) values.push_back(number(v));
    pert[name] = values;
  }
  report["perturbation"] = pert;
  ordered_json probe = ordered_json::array(), distance = ordered_json::array(), total = ordered_json::array();
  for (const auto& p : result.trajectory) {
    probe.push_back(number(p.probe));
    distance.push_back(number(p.distance));
    total.push_back(number(p.objective));
  }
  report["trajectory"] = {{"probe", probe}, {"distance", distance}, {"objective", total}};
  return report.dump(2) + "\n";
}

}  // namespace conceptbp
