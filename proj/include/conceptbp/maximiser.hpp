#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conceptbp/adapters.hpp"
#include "conceptbp/model.hpp"
#include "conceptbp/probe.hpp"
#include "conceptbp/train.hpp"

namespace conceptbp {

struct MaximiseConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double target = 1.0;  // o
  std::size_t max_steps = 2000;
  double learning_rate = 1e-2;
  double tolerance = 0.05;  // ε on |P(L(s ⊙ s*)) − o|
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double init_noise = 1e-3;

  void validate() const;
};

enum class RunStatus { Converged, StepLimit, Diverged };
std::string status_name(RunStatus status);

struct TrajectoryPoint {
  double probe = 0.0;
  double distance = 0.0;
  double objective = 0.0;
};

struct PerturbationResult {
  Perturbation perturbation;  // s*
  Tensor perturbed;           // s ⊙ s*, shaped like the sample
  double initial_probe = 0.0; // P(L(s)) before any perturbation
  double probe_output = 0.0;
  double distance = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  RunStatus status = RunStatus::StepLimit;
  std::string message;  // reason for a diverged or failed run
};

struct ObjectiveValue {
  double total = 0.0;
  double concept_term = 0.0;   // λ₁ |P − o|
  double distance_term = 0.0;  // λ₂ dist
  double probe = 0.0;
  double distance = 0.0;
};

/// The differentiable objective λ₁|P(L(s ⊙ s*)) − o| + λ₂ dist(s, s*) for one
/// sample, with the model and probe frozen and s* as the only free leaves.
class MaximisationProblem {
 public:
  MaximisationProblem(const Model& model, const Probe& probe, const ModalityAdapter& adapter, Tensor sample,
                      const MaximiseConfig& config);

  ObjectiveValue evaluate(const Perturbation& perturbation) const;
  /// Objective value and its gradient with respect to every perturbation leaf.
  ObjectiveValue gradient(const Perturbation& perturbation, Perturbation& grads) const;
  Tensor combined(const Perturbation& perturbation) const;

  const Graph& graph() const { return graph_; }
  const std::vector<std::string>& leaves() const { return leaves_; }

 private:
  ObjectiveValue read(const Forward& f) const;

  const ModalityAdapter* adapter_;
  Tensor sample_;
  MaximiseConfig config_;
  Graph graph_;
  std::vector<std::string> leaves_;
  NodeId probe_, distance_, concept_, total_, combined_;
};

ObjectiveValue objective(const Model& model, const Probe& probe, const ModalityAdapter& adapter, const Tensor& s,
                         const Perturbation& perturbation, const MaximiseConfig& config);

/// Gradient descent on s*, returning the best iterate: the lowest objective
/// overall, or the lowest within |P − o| ≤ ε once the band has been reached
/// (status converged). Stalls halve the step. The trajectory holds every
/// iterate until the band is reached and each in-band improvement after; the
/// step limit counts every evaluation. A non-finite value aborts the run as
/// diverged with the partial trajectory.
PerturbationResult maximise(const Model& model, const Probe& probe, const ModalityAdapter& adapter, const Tensor& s,
                            const MaximiseConfig& config);

/// One maximisation per λ₂ with the shared seed and λ₁, in input order. A run
/// that throws is recorded as diverged with its message.
std::vector<PerturbationResult> sweep_lambdas(const Model& model, const Probe& probe, const ModalityAdapter& adapter,
                                              const Tensor& s, const MaximiseConfig& base,
                                              const std::vector<double>& lambda2s);

/// JSON run report: config echo, status, final values, deltas and trajectory.
std::string run_report_json(const PerturbationResult& result, const MaximiseConfig& config, const Tensor& sample);

}  // namespace conceptbp
