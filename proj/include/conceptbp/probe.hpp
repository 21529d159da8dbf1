#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conceptbp/model.hpp"
#include "conceptbp/train.hpp"

namespace conceptbp {

enum class ConceptKind { Binary, Scalar };

std::string concept_kind_name(ConceptKind kind);
ConceptKind parse_concept_kind(const std::string& name);

/// Maps a raw sample (and its ground-truth label, when the dataset has one)
/// to the concept value f(s). Throwing marks the sample as unusable.
struct ConceptFunction {
  std::string name;
  ConceptKind kind = ConceptKind::Binary;
  std::function<double(const Tensor& sample, std::optional<int> label)> evaluate;
};

/// Raised for concept labels a probe cannot be trained on.
class DegenerateConceptError : public Error {
 public:
  using Error::Error;
};

struct ProbeDataset {
  Tensor activations;                // [N, D], flattened tap values
  std::vector<double> labels;        // f(s) per kept sample
  std::vector<std::size_t> indices;  // source sample index per kept sample
  std::size_t skipped = 0;
};

/// Pairs (L(s), f(s)) for every sample in `samples` ([N, ...input_shape]),
/// in order. `labels` is either empty or holds one label per sample.
ProbeDataset build_probe_dataset(const Model& model, const std::string& tap, const Tensor& samples,
                                 std::span<const int> labels, const ConceptFunction& concept_fn);

/// Affine read-out of a layer, sigmoid-wrapped for binary concepts.
struct Probe {
  ConceptKind kind = ConceptKind::Binary;
  std::string tap;
  double lambda = 1e-4;
  double bias = 0.0;
  Tensor weights;  // [D]

  /// Probe output for one activation tensor with D elements (any shape).
  double predict(const Tensor& activation) const;
  /// Appends the probe to a graph; `activation` has shape [1, ...] with D
  /// elements. Returns a node of shape [1].
  NodeId emit(Graph& graph, NodeId activation) const;

  std::string serialize() const;
  static Probe deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Probe load(const std::filesystem::path& path);
};

struct ProbeReport {
  ConceptKind kind = ConceptKind::Binary;
  std::optional<double> accuracy;  // binary: held-out accuracy at threshold 0.5
  std::optional<double> auc;       // binary: held-out ROC AUC
  std::optional<double> r2;        // scalar: held-out coefficient of determination
  double base_rate = 0.0;          // binary: majority-class share of the held-out split
  double l1_mass = 0.0;            // |w|_1
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::vector<double> loss_curve;
};

struct ProbeFit {
  Probe probe;
  ProbeReport report;
};

/// Minimises mean_i (P(a_i) - f_i)^2 + lambda |w|_1 + lambda |b| by gradient
/// descent on a seeded 80/20 split; metrics are computed on the held-out 20%.
ProbeFit train_probe(const ProbeDataset& data, ConceptKind kind, double lambda,
                     const TrainConfig& config, const std::string& tap = {});

double roc_auc(std::span<const double> scores, std::span<const double> labels);
double r_squared(std::span<const double> predictions, std::span<const double> targets);

}  // namespace conceptbp
