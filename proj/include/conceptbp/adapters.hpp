#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "conceptbp/board.hpp"
#include "conceptbp/graph.hpp"
#include "conceptbp/model.hpp"
#include "conceptbp/random.hpp"
#include "conceptbp/train.hpp"

namespace conceptbp {

/// Perturbation tensors s*, keyed by leaf name.
using Perturbation = Bindings;

struct AdapterEmission {
  NodeId combined;  // s ⊙ s*, shape [1, ...sample shape] so a model can consume it
  NodeId distance;  // dist(s, s*), shape [1]
};

/// How a perturbation is applied to a sample and how far it moves it.
class ModalityAdapter {
 public:
  virtual ~ModalityAdapter() = default;

  virtual std::string name() const = 0;
  /// Named perturbation leaves and their shapes for sample `s`.
  virtual std::vector<std::pair<std::string, Shape>> perturbation_shape(const Tensor& s) const = 0;
  /// The perturbation that leaves `s` (or its reconstruction) unchanged.
  virtual Perturbation zero_effect(const Tensor& s) const;
  /// Zero effect plus seeded uniform noise in [-noise, noise].
  virtual Perturbation init(const Tensor& s, Rng& rng, double noise) const;
  /// Appends combine and distance for sample `s` to `graph`; the perturbation
  /// leaves become trainable parameters defaulting to the zero effect.
  virtual AdapterEmission emit(Graph& graph, const Tensor& s) const = 0;
  /// Post-step constraint enforcement; the default does nothing.
  virtual void project(Perturbation&) const {}

  /// Perturbed sample, shaped like the model input of one sample.
  Tensor combine(const Tensor& s, const Perturbation& perturbation) const;
  double distance(const Tensor& s, const Perturbation& perturbation) const;
};

/// s + s*, distance ‖s*‖₂.
class TabularAdapter : public ModalityAdapter {
 public:
  explicit TabularAdapter(std::size_t dimension) : dimension_(dimension) {}

  std::string name() const override { return "tabular"; }
  std::vector<std::pair<std::string, Shape>> perturbation_shape(const Tensor& s) const override;
  AdapterEmission emit(Graph& graph, const Tensor& s) const override;

 private:
  std::size_t dimension_;
};

/// Edits in an autoencoder's latent space: D(E(s) + s*), distance
/// ‖D(E(s) + s*) − s‖₂².
class ImageAdapter : public ModalityAdapter {
 public:
  ImageAdapter(Model encoder, Model decoder);

  std::string name() const override { return "image"; }
  std::vector<std::pair<std::string, Shape>> perturbation_shape(const Tensor& s) const override;
  AdapterEmission emit(Graph& graph, const Tensor& s) const override;

  const Model& encoder() const { return encoder_; }
  const Model& decoder() const { return decoder_; }
  /// D(E(s)).
  Tensor reconstruct(const Tensor& s) const;

 private:
  Model encoder_;
  Model decoder_;
};

/// Raw pre-binarization masks for removing and adding pieces, [10, 6, 6] each.
struct BoardMasks {
  Tensor remove;
  Tensor add;
};

/// Binarized masks after the occupancy constraints.
struct EffectiveMasks {
  Tensor remove;  // subset of the pieces present in s
  Tensor add;     // at most one plane per square, only on squares vacant after removal
};

/// (s − s⁻) + s⁺ over the piece planes with the side-to-move plane untouched;
/// distance c(s ⊙ s*) + ‖s⁺‖₁ + ‖s⁻‖₁ with c the illegality classifier.
class BoardAdapter : public ModalityAdapter {
 public:
  static constexpr const char* kRemove = "remove";
  static constexpr const char* kAdd = "add";

  explicit BoardAdapter(Model legality_classifier);

  std::string name() const override { return "board"; }
  std::vector<std::pair<std::string, Shape>> perturbation_shape(const Tensor& s) const override;
  AdapterEmission emit(Graph& graph, const Tensor& s) const override;

  const Model& classifier() const { return classifier_; }
  EffectiveMasks effective_masks(const Tensor& s, const Perturbation& perturbation) const;

 private:
  Model classifier_;
};

Tensor tabular_combine(const Tensor& s, const Tensor& delta);
double tabular_distance(const Tensor& s, const Tensor& delta);

Tensor image_combine(const Tensor& s, const Tensor& latent_delta, const Model& encoder, const Model& decoder);
double image_distance(const Tensor& s, const Tensor& latent_delta, const Model& encoder, const Model& decoder);

/// Board operations without a classifier; board_distance takes one.
Tensor board_combine(const Tensor& s, const BoardMasks& masks);
double board_distance(const Tensor& s, const BoardMasks& masks, const Model& classifier);
Perturbation board_perturbation(const BoardMasks& masks);

/// Illegality classifier over board encodings: output is P(illegal).
Model legality_architecture(std::uint64_t seed);

struct LegalityFit {
  Model model;
  std::vector<double> loss_curve;
  double held_out_accuracy = 0.0;
  std::size_t test_size = 0;
  std::optional<std::string> warning;
};

/// Trains on legal (label 0) and illegal (label 1) encodings, each [N, 11, 6, 6],
/// starting from `initial` or from legality_architecture(config.seed). With
/// `symmetries`, each training row is also presented file-mirrored,
/// colour-swapped and both; the held-out rows are never augmented.
LegalityFit train_legality_classifier(const Tensor& legal, const Tensor& illegal, const TrainConfig& config,
                                     std::optional<Model> initial = std::nullopt, bool symmetries = true);

/// Classifier score for a single encoding [11, 6, 6].
double illegality_score(const Model& classifier, const Tensor& planes);

}  // namespace conceptbp
