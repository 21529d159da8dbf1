#include <algorithm>
#include <cmath>

#include "conceptbp/data.hpp"
#include "conceptbp/io.hpp"
#include "conceptbp/random.hpp"

namespace conceptbp {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4) throw FormatError(std::string("truncated IDX ") + what + " header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void append_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out += static_cast<char>((v >> shift) & 0xff);
}

struct Point {
  double x, y;
};
using Polyline = std::vector<Point>;

Polyline arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg, int segments = 20) {
  Polyline p;
  for (int i = 0; i <= segments; ++i) {
    const double a = (from_deg + (to_deg - from_deg) * i / segments) * M_PI / 180.0;
    p.push_back({cx + rx * std::cos(a), cy - ry * std::sin(a)});
  }
  return p;
}

// Glyphs live in the unit box with y pointing down.
std::vector<Polyline> digit_strokes(int digit) {
  switch (digit) {
    case 0: return {arc(0.5, 0.5, 0.3, 0.42, 0, 360, 32)};
    case 1: return {{{0.52, 0.08}, {0.52, 0.92}}, {{0.36, 0.24}, {0.52, 0.08}}};
    case 2: {
      auto top = arc(0.5, 0.3, 0.25, 0.22, 160, -30);
      top.push_back({0.22, 0.92});
      top.push_back({0.8, 0.92});
      return {top};
    }
    case 3: return {arc(0.5, 0.29, 0.24, 0.21, 150, -90), arc(0.5, 0.71, 0.26, 0.21, 90, -150)};
    case 4: return {{{0.68, 0.92}, {0.68, 0.08}, {0.2, 0.64}, {0.84, 0.64}}};
    case 5: return {{{0.78, 0.08}, {0.34, 0.08}, {0.3, 0.45}}, arc(0.5, 0.66, 0.26, 0.24, 140, -150)};
    case 6:
      return {arc(0.5, 0.68, 0.24, 0.22, 0, 360, 28), {{0.7, 0.1}, {0.5, 0.14}, {0.34, 0.3}, {0.27, 0.5}, {0.26, 0.68}}};
    case 7: return {{{0.2, 0.08}, {0.8, 0.08}, {0.42, 0.92}}};
    case 8: return {arc(0.5, 0.28, 0.2, 0.19, 0, 360, 24), arc(0.5, 0.7, 0.25, 0.22, 0, 360, 28)};
    case 9: return {arc(0.5, 0.32, 0.24, 0.22, 0, 360, 28), {{0.74, 0.32}, {0.72, 0.6}, {0.6, 0.92}}};
  }
  throw Error("digit out of range");
}

std::vector<Polyline> garment_shapes(int label) {
  switch (label) {
    case 0:  // t-shirt
      return {{{0.3, 0.1}, {0.42, 0.08}, {0.5, 0.14}, {0.58, 0.08}, {0.7, 0.1}, {0.95, 0.3}, {0.85, 0.42},
               {0.76, 0.35}, {0.76, 0.92}, {0.24, 0.92}, {0.24, 0.35}, {0.15, 0.42}, {0.05, 0.3}}};
    case 1:  // trouser
      return {{{0.3, 0.05}, {0.7, 0.05}, {0.74, 0.95}, {0.56, 0.95}, {0.5, 0.35}, {0.44, 0.95}, {0.26, 0.95}}};
    case 2:  // pullover
      return {{{0.3, 0.08}, {0.42, 0.06}, {0.5, 0.12}, {0.58, 0.06}, {0.7, 0.08}, {0.9, 0.25}, {0.96, 0.9},
               {0.82, 0.9}, {0.77, 0.4}, {0.77, 0.93}, {0.23, 0.93}, {0.23, 0.4}, {0.18, 0.9}, {0.04, 0.9},
               {0.1, 0.25}}};
    case 3:  // dress
      return {{{0.38, 0.05}, {0.62, 0.05}, {0.6, 0.3}, {0.82, 0.95}, {0.18, 0.95}, {0.4, 0.3}}};
    case 4:  // coat
      return {{{0.28, 0.05}, {0.5, 0.1}, {0.72, 0.05}, {0.92, 0.22}, {0.97, 0.92}, {0.83, 0.92}, {0.78, 0.42},
               {0.79, 0.97}, {0.21, 0.97}, {0.22, 0.42}, {0.17, 0.92}, {0.03, 0.92}, {0.08, 0.22}}};
    case 5:  // sandal
      return {{{0.05, 0.75}, {0.95, 0.75}, {0.95, 0.82}, {0.05, 0.82}},
              {{0.2, 0.5}, {0.35, 0.5}, {0.6, 0.75}, {0.45, 0.75}},
              {{0.55, 0.5}, {0.7, 0.5}, {0.85, 0.75}, {0.7, 0.75}}};
    case 6:  // shirt
      return {{{0.3, 0.08}, {0.5, 0.3}, {0.7, 0.08}, {0.9, 0.25}, {0.95, 0.88}, {0.82, 0.88}, {0.77, 0.4},
               {0.77, 0.93}, {0.23, 0.93}, {0.23, 0.4}, {0.18, 0.88}, {0.05, 0.88}, {0.1, 0.25}}};
    case 7:  // sneaker
      return {{{0.05, 0.55}, {0.35, 0.5}, {0.5, 0.4}, {0.62, 0.42}, {0.95, 0.65}, {0.95, 0.8}, {0.05, 0.8}}};
    case 8: {  // bag with handle
      Polyline handle = arc(0.5, 0.36, 0.26, 0.26, 180, 0, 16);
      auto inner = arc(0.5, 0.36, 0.19, 0.19, 0, 180, 16);
      handle.insert(handle.end(), inner.begin(), inner.end());
      return {{{0.1, 0.35}, {0.9, 0.35}, {0.9, 0.92}, {0.1, 0.92}}, handle};
    }
    case 9:  // ankle boot
      return {{{0.35, 0.1}, {0.65, 0.1}, {0.66, 0.5}, {0.95, 0.7}, {0.95, 0.88}, {0.1, 0.88}, {0.12, 0.55}, {0.3, 0.5}}};
  }
  throw Error("garment class out of range");
}

struct Pose {
  double scale, rotation, shear, dx, dy;

  Point apply(Point p) const {
    double x = p.x - 0.5, y = p.y - 0.5;
    x += shear * y;
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double rx = c * x - s * y, ry = s * x + c * y;
    return {0.5 + scale * rx + dx, 0.5 + scale * ry + dy};
  }
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

bool inside(const Polyline& poly, Point p) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

Tensor render_strokes(const std::vector<Polyline>& strokes, const Pose& pose, double half_width, double peak) {
  // Glyph box maps onto the central 20x20 pixels.
  std::vector<Polyline> px;
  for (const auto& s : strokes) {
    Polyline q;
    for (auto p : s) {
      auto t = pose.apply(p);
      q.push_back({4.0 + 20.0 * t.x, 4.0 + 20.0 * t.y});
    }
    px.push_back(std::move(q));
  }
  Tensor img(Shape{1, 28, 28}, 0.0);
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t c = 0; c < 28; ++c) {
      const Point p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
      double d = INFINITY;
      for (const auto& s : px)
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
      img[r * 28 + c] = peak * std::clamp(1.0 + half_width - d, 0.0, 1.0);
    }
  }
  return img;
}

Tensor render_filled(const std::vector<Polyline>& shapes, const Pose& pose, double brightness, double stripe_depth,
                     double stripe_freq, double stripe_angle, double stripe_phase) {
  std::vector<Polyline> px;
  for (const auto& s : shapes) {
    Polyline q;
    for (auto p : s) {
      auto t = pose.apply(p);
      q.push_back({2.0 + 24.0 * t.x, 2.0 + 24.0 * t.y});
    }
    px.push_back(std::move(q));
  }
  const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);
  Tensor img(Shape{1, 28, 28}, 0.0);
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t c = 0; c < 28; ++c) {
      int hits = 0;
      for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
          const Point p{static_cast<double>(c) + (sx + 0.5) / 3.0, static_cast<double>(r) + (sy + 0.5) / 3.0};
          for (const auto& s : px)
            if (inside(s, p)) {
              ++hits;
              break;
            }
        }
      if (hits == 0) continue;
      const double u = (static_cast<double>(c) * ca + static_cast<double>(r) * sa) / 28.0;
      const double texture = 1.0 - stripe_depth * 0.5 * (1.0 + std::sin(2.0 * M_PI * stripe_freq * u + stripe_phase));
      img[r * 28 + c] = brightness * texture * hits / 9.0;
    }
  }
  return img;
}

std::vector<int> balanced_labels(std::size_t n, Rng& rng) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 10);
  rng.shuffle(labels);
  return labels;
}

}  // namespace

Tensor ImageDataset::batch(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > images.size()) throw Error("image batch range out of bounds");
  return stack(std::vector<Tensor>(images.begin() + static_cast<long>(begin), images.begin() + static_cast<long>(end)));
}

ImageDataset ImageDataset::subset(std::size_t begin, std::size_t end) const {
  if (begin > end || end > images.size()) throw Error("image subset range out of bounds");
  ImageDataset out{rows, cols, {}, {}, source};
  out.images.assign(images.begin() + static_cast<long>(begin), images.begin() + static_cast<long>(end));
  out.labels.assign(labels.begin() + static_cast<long>(begin), labels.begin() + static_cast<long>(end));
  return out;
}

ImageDataset parse_idx(std::string_view image_bytes, std::string_view label_bytes, std::string source) {
  if (read_be32(image_bytes, 0, "image") != kImageMagic) throw FormatError("IDX image file has wrong magic number");
  if (read_be32(label_bytes, 0, "label") != kLabelMagic) throw FormatError("IDX label file has wrong magic number");
  const std::size_t count = read_be32(image_bytes, 4, "image");
  const std::size_t rows = read_be32(image_bytes, 8, "image");
  const std::size_t cols = read_be32(image_bytes, 12, "image");
  const std::size_t label_count = read_be32(label_bytes, 4, "label");
  if (count != label_count)
    throw FormatError("IDX image count " + std::to_string(count) + " does not match label count " +
                      std::to_string(label_count));
  if (rows == 0 || cols == 0) throw FormatError("IDX images must have positive dimensions");
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() != 16 + count * pixels)
    throw FormatError(image_bytes.size() < 16 + count * pixels ? "truncated IDX image file"
                                                               : "IDX image file has trailing bytes");
  if (label_bytes.size() != 8 + count)
    throw FormatError(label_bytes.size() < 8 + count ? "truncated IDX label file" : "IDX label file has trailing bytes");

  ImageDataset data{rows, cols, {}, {}, std::move(source)};
  data.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor img(Shape{1, rows, cols});
    for (std::size_t p = 0; p < pixels; ++p)
      img[p] = static_cast<unsigned char>(image_bytes[16 + i * pixels + p]) / 255.0;
    data.images.push_back(std::move(img));
    const int label = static_cast<unsigned char>(label_bytes[8 + i]);
    if (label > 9) throw FormatError("IDX label " + std::to_string(label) + " outside 0-9");
    data.labels.push_back(label);
  }
  return data;
}

ImageDataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(io::read_file(images), io::read_file(labels), images.filename().string());
}

std::pair<std::string, std::string> emit_idx(const ImageDataset& data) {
  if (data.labels.size() != data.images.size()) throw Error("image and label counts differ");
  std::string images, labels;
  append_be32(images, kImageMagic);
  append_be32(images, static_cast<std::uint32_t>(data.size()));
  append_be32(images, static_cast<std::uint32_t>(data.rows));
  append_be32(images, static_cast<std::uint32_t>(data.cols));
  append_be32(labels, kLabelMagic);
  append_be32(labels, static_cast<std::uint32_t>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.images[i].data())
      images += static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    labels += static_cast<char>(data.labels[i]);
  }
  return {images, labels};
}

ImageDataset synthetic_digits(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ImageDataset data{28, 28, {}, balanced_labels(n, rng), "synthetic-digits"};
  data.images.reserve(n);
  for (int label : data.labels) {
    Pose pose{rng.uniform(0.8, 1.05), rng.uniform(-0.25, 0.25), rng.uniform(-0.2, 0.2), rng.uniform(-0.06, 0.06),
              rng.uniform(-0.06, 0.06)};
    const double half_width = rng.uniform(0.9, 1.7);
    const double peak = rng.uniform(0.85, 1.0);
    data.images.push_back(render_strokes(digit_strokes(label), pose, half_width, peak));
  }
  return data;
}

ImageDataset synthetic_fashion(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ImageDataset data{28, 28, {}, balanced_labels(n, rng), "synthetic-fashion"};
  data.images.reserve(n);
  for (int label : data.labels) {
    Pose pose{rng.uniform(0.85, 1.05), 0.0, 0.0, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    const double brightness = rng.uniform(0.15, 1.0);
    const double depth = rng.uniform(0.0, 0.4);
    const double freq = rng.uniform(2.0, 6.0);
    const double angle = rng.uniform(0.0, M_PI);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    data.images.push_back(render_filled(garment_shapes(label), pose, brightness, depth, freq, angle, phase));
  }
  return data;
}

double concept_loopiness(int label) {
  if (label < 0 || label > 9) throw Error("digit label " + std::to_string(label) + " outside 0-9");
  return label == 0 || label == 6 || label == 8 || label == 9 ? 1.0 : 0.0;
}

double concept_lightness(const Tensor& image, double threshold) {
  std::size_t bright = 0;
  for (double v : image.data()) bright += v > threshold;
  return static_cast<double>(bright) / static_cast<double>(image.size());
}

ConceptFunction loopiness_concept() {
  return {"loopiness", ConceptKind::Binary, [](const Tensor&, std::optional<int> label) {
            if (!label) throw Error("loopiness needs the digit label");
            return concept_loopiness(*label);
          }};
}

ConceptFunction lightness_concept() {
  return {"lightness", ConceptKind::Scalar,
          [](const Tensor& image, std::optional<int>) { return concept_lightness(image); }};
}

}  // namespace conceptbp
