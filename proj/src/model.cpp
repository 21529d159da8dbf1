#include "conceptbp/model.hpp"

#include <cmath>
#include <sstream>

#include "conceptbp/io.hpp"
#include "conceptbp/random.hpp"

namespace conceptbp {

namespace {

constexpr const char* kMagic = "conceptbp-model v1";

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Reshape: return "reshape";
    case LayerKind::RowSum: return "rowsum";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "relu") return LayerKind::Relu;
  if (s == "sigmoid") return LayerKind::Sigmoid;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "reshape") return LayerKind::Reshape;
  if (s == "rowsum") return LayerKind::RowSum;
  throw FormatError("unknown layer kind '" + s + "'");
}

Shape with_batch(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

Model::Model(Shape input_shape, std::vector<Layer> layers, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), seed_(seed) {
  infer_shapes();
  Rng rng(seed_);
  Shape in = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.kind == LayerKind::Dense) {
      const double r = std::sqrt(1.0 / static_cast<double>(in[0]));
      Tensor w(Shape{in[0], l.units});
      Tensor b(Shape{l.units});
      for (auto& v : w.data()) v = rng.uniform(-r, r);
      for (auto& v : b.data()) v = rng.uniform(-r, r);
      params_.push_back({l.name + ".weight", std::move(w)});
      params_.push_back({l.name + ".bias", std::move(b)});
    } else if (l.kind == LayerKind::Conv2d) {
      const std::size_t fan_in = in[0] * l.kernel * l.kernel;
      const double r = std::sqrt(1.0 / static_cast<double>(fan_in));
      Tensor w(Shape{l.units, in[0], l.kernel, l.kernel});
      Tensor b(Shape{l.units});
      for (auto& v : w.data()) v = rng.uniform(-r, r);
      for (auto& v : b.data()) v = rng.uniform(-r, r);
      params_.push_back({l.name + ".weight", std::move(w)});
      params_.push_back({l.name + ".bias", std::move(b)});
    }
    in = layer_shapes_[i];
  }
}

void Model::infer_shapes() {
  if (input_shape_.empty() || shape_size(input_shape_) == 0)
    throw ShapeError("model input shape must be non-empty");
  layer_shapes_.clear();
  Shape in = input_shape_;
  std::map<std::string, int> seen{{kInputTap, 1}};
  for (const auto& l : layers_) {
    if (l.name.empty()) throw ConfigError("layer names must not be empty");
    if (seen[l.name]++) throw ConfigError("duplicate layer name '" + l.name + "'");
    Shape out;
    switch (l.kind) {
      case LayerKind::Dense:
        if (in.size() != 1)
          throw ShapeError("dense layer '" + l.name + "' needs a flat input, got " + shape_string(in));
        if (l.units == 0) throw ConfigError("dense layer '" + l.name + "' needs units > 0");
        out = {l.units};
        break;
      case LayerKind::Conv2d:
        if (in.size() != 3)
          throw ShapeError("conv2d layer '" + l.name + "' needs [C,H,W] input, got " + shape_string(in));
        if (l.units == 0 || l.kernel % 2 == 0)
          throw ConfigError("conv2d layer '" + l.name + "' needs channels > 0 and an odd kernel");
        out = {l.units, in[1], in[2]};
        break;
      case LayerKind::Relu:
      case LayerKind::Sigmoid:
        out = in;
        break;
      case LayerKind::Flatten:
        out = {shape_size(in)};
        break;
      case LayerKind::RowSum:
        if (in.size() != 3)
          throw ShapeError("rowsum layer '" + l.name + "' needs [C,H,W] input, got " + shape_string(in));
        out = {in[0], in[1]};
        break;
      case LayerKind::Reshape:
        if (shape_size(l.shape) != shape_size(in) || l.shape.empty())
          throw ShapeError("reshape layer '" + l.name + "' cannot map " + shape_string(in) + " to " +
                           shape_string(l.shape));
        out = l.shape;
        break;
    }
    layer_shapes_.push_back(out);
    in = out;
  }
}

const Shape& Model::output_shape() const {
  return layer_shapes_.empty() ? input_shape_ : layer_shapes_.back();
}

const Shape& Model::tap_shape(const std::string& tap) const {
  if (tap == kInputTap) return input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == tap) return layer_shapes_[i];
  throw Error("unknown layer tap '" + tap + "'");
}

std::vector<std::string> Model::taps() const {
  std::vector<std::string> out{kInputTap};
  for (const auto& l : layers_) out.push_back(l.name);
  return out;
}

bool Model::has_tap(const std::string& tap) const {
  if (tap == kInputTap) return true;
  for (const auto& l : layers_)
    if (l.name == tap) return true;
  return false;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Model::Emission Model::emit(Graph& graph, NodeId input, bool trainable, const std::string& prefix,
                            const std::optional<std::string>& stop_at) const {
  const auto& ishape = graph.shape(input);
  if (ishape.size() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), ishape.begin() + 1))
    throw ShapeError("model expects input [N, " + shape_string(input_shape_) + "], got " +
                     shape_string(ishape));
  if (stop_at && !has_tap(*stop_at)) throw Error("unknown layer tap '" + *stop_at + "'");
  const std::size_t batch = ishape[0];

  auto param = [&](const std::string& name) {
    for (const auto& p : params_)
      if (p.name == name)
        return trainable ? graph.parameter(prefix + name, p.value)
                         : graph.constant(p.value, prefix + name);
    throw Error("missing parameter '" + name + "'");
  };

  Emission em;
  NodeId x = input;
  em.taps[kInputTap] = x;
  if (stop_at && *stop_at == kInputTap) {
    em.output = x;
    return em;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::Dense:
        x = graph.matmul(x, param(l.name + ".weight"));
        x = graph.bias_add(x, param(l.name + ".bias"), 1);
        break;
      case LayerKind::Conv2d:
        x = graph.conv2d(x, param(l.name + ".weight"));
        x = graph.bias_add(x, param(l.name + ".bias"), 1);
        break;
      case LayerKind::Relu:
        x = graph.relu(x);
        break;
      case LayerKind::Sigmoid:
        x = graph.sigmoid(x);
        break;
      case LayerKind::Flatten:
      case LayerKind::Reshape:
        x = graph.reshape(x, with_batch(batch, layer_shapes_[i]));
        break;
      case LayerKind::RowSum: {
        const auto& in = graph.shape(x);
        const std::size_t width = in.back();
        x = graph.reshape(x, Shape{shape_size(in) / width, width});
        x = graph.matmul(x, graph.constant(Tensor(Shape{width, 1}, 1.0)));
        x = graph.reshape(x, with_batch(batch, layer_shapes_[i]));
        break;
      }
    }
    em.taps[l.name] = x;
    if (stop_at && *stop_at == l.name) break;
  }
  em.output = x;
  return em;
}

Graph Model::graph(std::size_t batch) const {
  Graph g;
  auto x = g.input("x", with_batch(batch, input_shape_));
  auto em = emit(g, x, false);
  for (const auto& [name, id] : em.taps) g.mark_tap(name, id);
  g.mark_output("y", em.output);
  return g;
}

Tensor Model::forward(const Tensor& batch) const {
  Graph g;
  auto x = g.input("x", batch.shape());
  auto em = emit(g, x, false);
  Forward fwd(g, {{"x", batch}});
  return fwd.value(em.output);
}

Tensor Model::activations(const std::string& tap, const Tensor& batch) const {
  if (!has_tap(tap)) throw Error("unknown layer tap '" + tap + "'");
  Graph g;
  auto x = g.input("x", batch.shape());
  auto em = emit(g, x, false, {}, tap);
  Forward fwd(g, {{"x", batch}});
  return fwd.value(em.taps.at(tap));
}

Tensor Model::activations_at(const std::string& tap, const Tensor& sample) const {
  if (sample.shape() != input_shape_)
    throw ShapeError("sample shape " + shape_string(sample.shape()) + " does not match model input " +
                     shape_string(input_shape_));
  auto batch = sample.reshaped(with_batch(1, input_shape_));
  return activations(tap, batch).reshaped(tap_shape(tap));
}

std::pair<Model, Model> Model::split(const std::string& tap) const {
  if (!has_tap(tap)) throw Error("unknown layer tap '" + tap + "'");
  std::size_t cut = 0;
  if (tap != kInputTap)
    while (layers_[cut].name != tap) ++cut;
  if (tap != kInputTap) ++cut;

  Model head, tail;
  head.input_shape_ = input_shape_;
  head.layers_.assign(layers_.begin(), layers_.begin() + static_cast<long>(cut));
  head.seed_ = seed_;
  head.infer_shapes();
  tail.input_shape_ = tap_shape(tap);
  tail.layers_.assign(layers_.begin() + static_cast<long>(cut), layers_.end());
  tail.seed_ = seed_;
  tail.infer_shapes();
  for (const auto& p : params_) {
    const std::string layer = p.name.substr(0, p.name.rfind('.'));
    bool in_head = false;
    for (const auto& l : head.layers_) in_head |= l.name == layer;
    (in_head ? head : tail).params_.push_back(p);
  }
  return {std::move(head), std::move(tail)};
}

Layer parse_layer(const std::vector<std::string>& t) {
  if (t.size() < 2) throw FormatError("malformed layer line");
  Layer l{parse_kind(t[0]), t[1]};
  if (l.kind == LayerKind::Dense) {
    if (t.size() != 3) throw FormatError("malformed dense layer line");
    l.units = io::parse_u64(t[2]);
  } else if (l.kind == LayerKind::Conv2d) {
    if (t.size() != 4) throw FormatError("malformed conv2d layer line");
    l.units = io::parse_u64(t[2]);
    l.kernel = io::parse_u64(t[3]);
  } else if (l.kind == LayerKind::Reshape) {
    for (std::size_t k = 2; k < t.size(); ++k) l.shape.push_back(io::parse_u64(t[k]));
  } else if (t.size() != 2) {
    throw FormatError("unexpected arguments for layer '" + t[1] + "'");
  }
  return l;
}

std::string format_layer(const Layer& l) {
  std::ostringstream h;
  h << kind_name(l.kind) << ' ' << l.name;
  if (l.kind == LayerKind::Dense) h << ' ' << l.units;
  if (l.kind == LayerKind::Conv2d) h << ' ' << l.units << ' ' << l.kernel;
  if (l.kind == LayerKind::Reshape)
    for (auto d : l.shape) h << ' ' << d;
  return h.str();
}

std::string Model::serialize() const {
  std::ostringstream h;
  h << kMagic << '\n';
  h << "seed " << seed_ << '\n';
  h << "input";
  for (auto d : input_shape_) h << ' ' << d;
  h << '\n';
  h << "layers " << layers_.size() << '\n';
  for (const auto& l : layers_) {
    h << format_layer(l) << '\n';
  }
  h << "params " << params_.size() << '\n';
  for (const auto& p : params_) {
    h << p.name;
    for (auto d : p.value.shape()) h << ' ' << d;
    h << '\n';
  }
  h << "blob float64-le " << parameter_count() << '\n';
  std::string out = h.str();
  for (const auto& p : params_) io::append_le_doubles(out, p.value.data());
  return out;
}

Model Model::deserialize(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    auto end = bytes.find('\n', pos);
    if (end == std::string::npos) throw FormatError("truncated model header");
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  auto expect = [](const std::vector<std::string>& t, const char* key, std::size_t min_size) {
    if (t.empty() || t[0] != key || t.size() < min_size)
      throw FormatError(std::string("malformed model header, expected '") + key + "'");
  };

  if (next_line() != kMagic) throw FormatError("not a conceptbp model file");
  Model m;
  auto t = io::split_whitespace(next_line());
  expect(t, "seed", 2);
  m.seed_ = io::parse_u64(t[1]);
  t = io::split_whitespace(next_line());
  expect(t, "input", 2);
  for (std::size_t i = 1; i < t.size(); ++i) m.input_shape_.push_back(io::parse_u64(t[i]));
  t = io::split_whitespace(next_line());
  expect(t, "layers", 2);
  const auto nlayers = io::parse_u64(t[1]);
  for (std::size_t i = 0; i < nlayers; ++i) {
    t = io::split_whitespace(next_line());
    Layer l = parse_layer(t);
    m.layers_.push_back(std::move(l));
  }
  m.infer_shapes();
  t = io::split_whitespace(next_line());
  expect(t, "params", 2);
  const auto nparams = io::parse_u64(t[1]);
  std::vector<std::pair<std::string, Shape>> specs;
  for (std::size_t i = 0; i < nparams; ++i) {
    t = io::split_whitespace(next_line());
    if (t.size() < 2) throw FormatError("malformed param line");
    Shape s;
    for (std::size_t k = 1; k < t.size(); ++k) s.push_back(io::parse_u64(t[k]));
    specs.emplace_back(t[0], s);
  }
  t = io::split_whitespace(next_line());
  expect(t, "blob", 3);
  const auto total = io::parse_u64(t[2]);
  auto values = io::read_le_doubles(std::string_view(bytes).substr(pos), total);
  if (bytes.size() - pos != total * 8) throw FormatError("trailing bytes after model blob");
  std::size_t offset = 0;
  for (auto& [name, s] : specs) {
    const auto n = shape_size(s);
    if (offset + n > values.size()) throw FormatError("parameter blob too short");
    std::vector<double> data(values.begin() + static_cast<long>(offset),
                             values.begin() + static_cast<long>(offset + n));
    m.params_.push_back({name, Tensor(s, std::move(data))});
    offset += n;
  }
  if (offset != values.size()) throw FormatError("parameter blob size mismatch");

  // The parameter table must match the architecture.
  Model fresh(m.input_shape_, m.layers_, m.seed_);
  if (fresh.params_.size() != m.params_.size()) throw FormatError("parameter count mismatch");
  for (std::size_t i = 0; i < m.params_.size(); ++i)
    if (fresh.params_[i].name != m.params_[i].name ||
        fresh.params_[i].value.shape() != m.params_[i].value.shape())
      throw FormatError("parameter '" + m.params_[i].name + "' does not match the architecture");
  return m;
}

void Model::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

Model Model::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

bool operator==(const Model& a, const Model& b) { return a.serialize() == b.serialize(); }

Tensor stack(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw ShapeError("cannot stack zero samples");
  Shape s = with_batch(samples.size(), samples[0].shape());
  std::vector<double> data;
  data.reserve(shape_size(s));
  for (const auto& t : samples) {
    if (t.shape() != samples[0].shape()) throw ShapeError("stack: inconsistent sample shapes");
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor unstack(const Tensor& batch, std::size_t i) {
  if (batch.rank() < 2) throw ShapeError("unstack needs a batch tensor");
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const auto n = shape_size(s);
  if (i >= batch.dim(0)) throw ShapeError("unstack index out of range");
  std::vector<double> data(batch.values().begin() + static_cast<long>(i * n),
                           batch.values().begin() + static_cast<long>((i + 1) * n));
  return Tensor(std::move(s), std::move(data));
}

Tensor slice_rows(const Tensor& batch, std::size_t begin, std::size_t end) {
  if (begin >= end || end > batch.dim(0)) throw ShapeError("slice_rows range out of bounds");
  Shape s = batch.shape();
  const auto n = batch.size() / s[0];
  s[0] = end - begin;
  std::vector<double> data(batch.values().begin() + static_cast<long>(begin * n),
                           batch.values().begin() + static_cast<long>(end * n));
  return Tensor(std::move(s), std::move(data));
}

Tensor gather_rows(const Tensor& batch, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ShapeError("gather_rows needs at least one row");
  Shape s = batch.shape();
  const auto n = batch.size() / s[0];
  s[0] = rows.size();
  std::vector<double> data;
  data.reserve(rows.size() * n);
  for (auto r : rows) {
    if (r >= batch.dim(0)) throw ShapeError("gather_rows index out of range");
    data.insert(data.end(), batch.values().begin() + static_cast<long>(r * n),
                batch.values().begin() + static_cast<long>((r + 1) * n));
  }
  return Tensor(std::move(s), std::move(data));
}

}  // namespace conceptbp
