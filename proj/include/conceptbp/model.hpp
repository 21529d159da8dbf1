#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conceptbp/graph.hpp"

namespace conceptbp {

/// RowSum sums each row of a [C,H,W] sample over its columns, giving [C,H].
enum class LayerKind { Dense, Conv2d, Relu, Sigmoid, Flatten, Reshape, RowSum };

struct Layer {
  LayerKind kind;
  std::string name;
  std::size_t units = 0;   // dense outputs or conv output channels
  std::size_t kernel = 0;  // conv kernel size (odd)
  Shape shape;             // reshape target, per sample

  static Layer dense(std::string name, std::size_t units) {
    return {LayerKind::Dense, std::move(name), units};
  }
  static Layer conv2d(std::string name, std::size_t channels, std::size_t kernel) {
    return {LayerKind::Conv2d, std::move(name), channels, kernel};
  }
  static Layer relu(std::string name) { return {LayerKind::Relu, std::move(name)}; }
  static Layer sigmoid(std::string name) { return {LayerKind::Sigmoid, std::move(name)}; }
  static Layer flatten(std::string name) { return {LayerKind::Flatten, std::move(name)}; }
  static Layer rowsum(std::string name) { return {LayerKind::RowSum, std::move(name)}; }
  static Layer reshape(std::string name, Shape shape) {
    return {LayerKind::Reshape, std::move(name), 0, 0, std::move(shape)};
  }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// A sequential network with named layers. Every layer output is a tap, as
/// is "input". Parameters are `<layer>.weight` and `<layer>.bias`.
class Model {
 public:
  static constexpr const char* kInputTap = "input";

  /// Builds the architecture and draws the initial parameters uniformly from
  /// [-sqrt(1/fan_in), sqrt(1/fan_in)].
  Model(Shape input_shape, std::vector<Layer> layers, std::uint64_t seed);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const;
  const Shape& tap_shape(const std::string& tap) const;
  std::vector<std::string> taps() const;
  bool has_tap(const std::string& tap) const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  std::size_t parameter_count() const;

  struct Emission {
    NodeId output;
    std::map<std::string, NodeId> taps;
  };

  /// Appends the network to `graph`, reading from `input` ([N, ...input_shape]).
  /// Parameters become trainable leaves or embedded constants, named with
  /// `prefix`. Emission stops after `stop_at` when given.
  Emission emit(Graph& graph, NodeId input, bool trainable, const std::string& prefix = {},
                const std::optional<std::string>& stop_at = std::nullopt) const;

  /// Standalone graph with input "x", output "y" and every layer as a tap.
  Graph graph(std::size_t batch) const;

  /// Output for a batch [N, ...input_shape].
  Tensor forward(const Tensor& batch) const;
  /// Tap value for a batch, shape [N, ...tap_shape].
  Tensor activations(const std::string& tap, const Tensor& batch) const;
  /// Tap value for one sample of shape input_shape.
  Tensor activations_at(const std::string& tap, const Tensor& sample) const;

  /// Splits after `tap` into (head, tail); composing them reproduces the model.
  std::pair<Model, Model> split(const std::string& tap) const;

  std::string serialize() const;
  static Model deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  friend bool operator==(const Model& a, const Model& b);

 private:
  Model() = default;
  void infer_shapes();

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> layer_shapes_;  // per-sample output shape of each layer
  std::vector<NamedTensor> params_;
  std::uint64_t seed_ = 0;
};

/// One layer in text form: kind, name, then dense units / conv channels and
/// kernel / reshape dims, e.g. "conv2d c1 8 3".
Layer parse_layer(const std::vector<std::string>& tokens);
std::string format_layer(const Layer& layer);

/// Batch of the given samples (all of shape `sample_shape`) as [N, ...].
Tensor stack(const std::vector<Tensor>& samples);
/// Row `i` of a batch tensor as a sample tensor.
Tensor unstack(const Tensor& batch, std::size_t i);
/// Rows [begin, end) of a batch tensor.
Tensor slice_rows(const Tensor& batch, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& batch, const std::vector<std::size_t>& rows);

}  // namespace conceptbp
