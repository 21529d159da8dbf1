#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conceptbp/board.hpp"
#include "conceptbp/model.hpp"
#include "conceptbp/probe.hpp"
#include "conceptbp/train.hpp"

namespace conceptbp {

// ---- tabular -------------------------------------------------------------

inline const std::array<std::string, 6> kHousingFeatures{"MedInc", "HAge", "AveRms", "AveBedrms", "Pop", "AveOcp"};
inline constexpr std::size_t kAveBedrms = 3;
inline constexpr std::size_t kAveOcp = 5;
inline const std::string kTargetColumn = "Target";

/// Per-feature z-score statistics (population standard deviation).
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;

  Tensor apply(const Tensor& row) const;
  Tensor invert(const Tensor& row) const;
};

struct TabularDataset {
  std::vector<std::string> features;
  std::vector<std::vector<double>> rows;  // one entry per sample, features in order
  std::vector<double> target;
  std::optional<Normalization> normalization;  // present once rows are z-scored

  std::size_t size() const { return rows.size(); }
  /// Feature rows as [N, 6].
  Tensor features_tensor() const;
  /// Targets as [N, 1].
  Tensor target_tensor() const;
};

/// Header must contain the six feature columns and Target (any order, extra
/// columns ignored). Lines starting with '#' are skipped.
TabularDataset parse_tabular_csv(std::string_view text);
TabularDataset load_tabular_csv(const std::filesystem::path& path);
std::string format_tabular_csv(const TabularDataset& data);

/// Z-scores every feature; constant columns get std 1. Statistics compose with
/// any existing normalization so `denormalize` always returns original units.
TabularDataset normalize(const TabularDataset& data);
TabularDataset denormalize(const TabularDataset& data);

/// Seeded stand-in for the housing table: plausible marginals in original
/// units, with a target that depends on income, age, occupancy and the
/// bedrooms-per-occupant ratio.
TabularDataset synthetic_housing(std::size_t n, std::uint64_t seed);

/// AveBedrms / AveOcp of a row in original units; throws on zero occupancy.
double concept_bedrooms_ratio(const Tensor& row);

// ---- images --------------------------------------------------------------

struct ImageDataset {
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::vector<Tensor> images;  // each [1, rows, cols], values in [0, 1]
  std::vector<int> labels;     // 0-9
  std::string source;

  std::size_t size() const { return images.size(); }
  /// Images [begin, end) as [n, 1, rows, cols].
  Tensor batch(std::size_t begin, std::size_t end) const;
  ImageDataset subset(std::size_t begin, std::size_t end) const;
};

/// IDX files: images with magic 0x00000803 and labels with 0x00000801,
/// big-endian counts and dimensions, one byte per pixel / label.
ImageDataset parse_idx(std::string_view image_bytes, std::string_view label_bytes, std::string source = "idx");
ImageDataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Inverse of parse_idx; pixels are quantized to round(v * 255).
std::pair<std::string, std::string> emit_idx(const ImageDataset& data);

/// Stroke-rendered handwritten-style digits 0-9 at 28x28 with random pose,
/// stroke width and intensity. Labels are balanced and shuffled.
ImageDataset synthetic_digits(std::size_t n, std::uint64_t seed);

/// Filled garment silhouettes (ten classes in the usual fashion-set order) at
/// 28x28 with random pose, brightness and stripe texture.
ImageDataset synthetic_fashion(std::size_t n, std::uint64_t seed);

/// 1 for digits with a closed loop (0, 6, 8, 9), else 0.
double concept_loopiness(int label);
inline constexpr double kLightnessThreshold = 0.3;
/// Fraction of pixels brighter than the threshold.
double concept_lightness(const Tensor& image, double threshold = kLightnessThreshold);

ConceptFunction bedrooms_ratio_concept(const Normalization& normalization);
ConceptFunction loopiness_concept();
ConceptFunction lightness_concept();
ConceptFunction queen_threat_concept();

// ---- boards --------------------------------------------------------------

struct BoardDataset {
  std::vector<board::Board> boards;

  Tensor encodings() const;  // [N, 11, 6, 6]
  Tensor auxiliary() const;  // [N, kAuxTargets]
};

BoardDataset generate_board_dataset(std::size_t n, std::uint64_t seed, const board::GenerateOptions& options = {});

struct ChessModelFit {
  Model model;
  std::vector<double> loss_curve;
  double held_out_loss = 0.0;
};

/// Convolution-plus-dense network over the board planes, exposing the tap
/// "hidden", trained by squared error on the auxiliary targets.
Model chess_architecture(std::uint64_t seed);
ChessModelFit train_chess_model(const BoardDataset& data, const TrainConfig& config);

}  // namespace conceptbp
