#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conceptbp/adapters.hpp"
#include "conceptbp/data.hpp"
#include "conceptbp/maximiser.hpp"
#include "conceptbp/probe.hpp"
#include "conceptbp/train.hpp"

namespace conceptbp::pipeline {

enum class Kind { Toy, Housing, Digits, Fashion, Chess };
std::string kind_name(Kind kind);
Kind parse_kind(const std::string& name);

/// Layer list in the compact text form used by configs, e.g. "dense hidden 32",
/// "conv2d c1 8 3", "relu r1", "reshape img 1 28 28".
std::vector<Layer> parse_architecture(const std::vector<std::string>& specs);

struct DataSettings {
  std::size_t samples = 0;  // 0 picks the pipeline default
  std::optional<std::filesystem::path> csv;
  std::optional<std::filesystem::path> idx_images, idx_labels;
  std::size_t legality_samples = 5000;  // chess: legal and illegal boards each
};

struct ProbeSettings {
  std::string tap;
  double lambda = 1e-4;
  TrainConfig train;
};

struct MaximiseSettings {
  MaximiseConfig config;
  std::optional<double> target_offset;  // o = P(L(s)) + offset instead of a fixed target
  std::vector<std::size_t> samples;     // explicit positions in the held-out pool
  std::size_t count = 5;                // otherwise the first `count` eligible held-out samples
  bool concept_absent = false;          // eligible = concept function below 0.5
};

struct Config {
  Kind pipeline = Kind::Toy;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out_dir;
  DataSettings data;
  std::vector<Layer> architecture;         // the probed model
  std::vector<Layer> autoencoder;          // fashion: the adapter's autoencoder
  std::vector<Layer> legality_architecture;  // chess
  TrainConfig train;
  TrainConfig autoencoder_train;
  TrainConfig legality_train;
  ProbeSettings probe;
  MaximiseSettings maximise;
  std::vector<double> sweep_lambda2;
};

/// Parses a JSON config. Unknown or mistyped keys raise ConfigError naming the
/// key; missing sections take the pipeline defaults.
Config parse_config(std::string_view json_text);
Config load_config(const std::filesystem::path& path);

/// Invocation details recorded in every manifest.
struct Invocation {
  std::string config_path;
  std::filesystem::path out_root;
};

struct TrainSummary {
  std::vector<double> loss_curve;
  double held_out_loss = 0.0;
  std::optional<double> reconstruction_mse;  // per pixel, image autoencoders
  std::optional<double> legality_accuracy;
  std::optional<double> start_position_illegality;
  std::optional<std::string> warning;
};

struct SampleRun {
  std::size_t pool_index = 0;  // position in the held-out pool
  std::size_t data_index = 0;  // row in the dataset
  Tensor sample;
  MaximiseConfig config;
  PerturbationResult result;
  double concept_before = 0.0;
  std::optional<double> concept_after;  // ground truth where it is defined on s ⊙ s*
  // boards
  std::optional<bool> legal_after;
  std::optional<std::size_t> pieces_added, pieces_removed;
  // images
  std::optional<std::size_t> pixels_changed;  // maximised vs reconstruction
};

struct SweepSummary {
  std::vector<double> lambda2s;
  std::vector<std::vector<SampleRun>> runs;  // [λ₂][sample]
};

/// Train the probed model (and the fashion autoencoder / chess legality
/// classifier) into <out>/train.
TrainSummary run_train(const Config& config, const Invocation& invocation);
/// Train the concept probe on <out>/train/model.bin into <out>/probe.
ProbeReport run_probe(const Config& config, const Invocation& invocation);
/// Maximise the configured held-out samples into <out>/maximise.
std::vector<SampleRun> run_maximise(const Config& config, const Invocation& invocation);
/// One maximise artifact set per λ₂ into <out>/sweep, plus summary.csv.
SweepSummary run_sweep(const Config& config, const Invocation& invocation);

}  // namespace conceptbp::pipeline
