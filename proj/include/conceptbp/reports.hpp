#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "conceptbp/tensor.hpp"

namespace conceptbp {

inline constexpr const char* kManifestName = "manifest.json";

/// Provenance for one command invocation. Everything except the two
/// timestamps is a pure function of the command, config and seed.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;   // upstream artifacts, relative to the output root
  std::vector<std::string> outputs;  // artifacts, relative to the manifest's directory
  std::string started;
  std::string finished;

  std::string to_json() const;
};

std::string utc_timestamp();
/// Library and dependency versions recorded in every manifest.
std::vector<std::pair<std::string, std::string>> module_versions();

/// Grayscale image [1, r, c] or [r, c] with values in [0, 1] as binary PGM
/// (P5, maxval 255). The comment lands in the header.
std::string format_pgm(const Tensor& image, std::string_view comment);
/// Pixels back in [0, 1]; accepts header comments.
Tensor parse_pgm(std::string_view bytes);

/// A directory of artifacts that all point at one manifest.json.
class ArtifactDir {
 public:
  explicit ArtifactDir(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }
  /// Writes `bytes` to root/name and records it in the manifest's output list.
  void write(const std::string& name, std::string_view bytes);
  void write_manifest(RunManifest manifest) const;

  /// Manifest path as seen from the artifact `name` (which may be nested).
  static std::string manifest_path_from(const std::string& name);

 private:
  std::filesystem::path root_;
  std::vector<std::string> written_;
};

}  // namespace conceptbp
