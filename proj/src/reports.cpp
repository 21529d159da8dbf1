#include "conceptbp/reports.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>

#include <nlohmann/json.hpp>

#include "conceptbp/io.hpp"

#ifndef CONCEPTBP_VERSION
#define CONCEPTBP_VERSION "unknown"
#endif

namespace conceptbp {

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = config_path;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  nlohmann::ordered_json versions = nlohmann::ordered_json::object();
  for (const auto& [name, version] : module_versions()) versions[name] = version;
  j["versions"] = versions;
  j["started"] = started;
  j["finished"] = finished;
  return j.dump(2) + "\n";
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

std::vector<std::pair<std::string, std::string>> module_versions() {
  auto version = [](int a, int b, int c) {
    return std::to_string(a) + "." + std::to_string(b) + "." + std::to_string(c);
  };
  return {
      {"conceptbp", CONCEPTBP_VERSION},
      {"eigen", version(EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
      {"nlohmann_json",
       version(NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR, NLOHMANN_JSON_VERSION_PATCH)},
  };
}

std::string format_pgm(const Tensor& image, std::string_view comment) {
  const auto& shape = image.shape();
  if (!(shape.size() == 2 || (shape.size() == 3 && shape[0] == 1)))
    throw ShapeError("PGM output needs a [1, rows, cols] or [rows, cols] image");
  const std::size_t rows = shape[shape.size() - 2], cols = shape.back();
  std::string out = "P5\n";
  for (std::size_t start = 0; start <= comment.size();) {
    auto end = comment.find('\n', start);
    if (end == std::string_view::npos) end = comment.size();
    if (end > start) out += "# " + std::string(comment.substr(start, end - start)) + "\n";
    start = end + 1;
  }
  out += std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (double v : image.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite pixel in PGM output");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

Tensor parse_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("truncated PGM header");
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P5") throw FormatError("not a binary PGM (P5) file");
  const auto cols = io::parse_u64(token()), rows = io::parse_u64(token()), maxval = io::parse_u64(token());
  if (maxval != 255) throw FormatError("only maxval 255 PGM files are supported");
  ++pos;  // single whitespace before the raster
  if (bytes.size() - std::min(pos, bytes.size()) != rows * cols) throw FormatError("PGM raster size mismatch");
  Tensor image(Shape{1, rows, cols});
  for (std::size_t i = 0; i < rows * cols; ++i)
    image[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return image;
}

ArtifactDir::ArtifactDir(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

void ArtifactDir::write(const std::string& name, std::string_view bytes) {
  io::write_file(root_ / name, bytes);
  if (std::find(written_.begin(), written_.end(), name) == written_.end()) written_.push_back(name);
}

void ArtifactDir::write_manifest(RunManifest manifest) const {
  manifest.outputs = written_;
  std::sort(manifest.outputs.begin(), manifest.outputs.end());
  io::write_file(root_ / kManifestName, manifest.to_json());
}

std::string ArtifactDir::manifest_path_from(const std::string& name) {
  std::string up;
  for (char c : name)
    if (c == '/') up += "../";
  return up + kManifestName;
}

}  // namespace conceptbp
