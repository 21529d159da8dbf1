#include "conceptbp/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace conceptbp {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign(double x) { return (x > 0) - (x < 0); }

constexpr double kBceClamp = 1e-12;

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

struct ConvDims {
  std::size_t n, c, h, w, o, k, pad;
};

ConvDims conv_dims(const Shape& x, const Shape& w) {
  return {x[0], x[1], x[2], x[3], w[0], w[2], w[2] / 2};
}

// Patch matrix [N*H*W, C*K*K] for a same-padded stride-1 convolution.
Tensor im2col(const Tensor& x, const ConvDims& d) {
  Tensor cols(Shape{d.n * d.h * d.w, d.c * d.k * d.k});
  const std::size_t ckk = d.c * d.k * d.k;
  auto out = cols.data();
  auto in = x.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.h; ++i)
      for (std::size_t j = 0; j < d.w; ++j) {
        double* row = &out[((n * d.h + i) * d.w + j) * ckk];
        for (std::size_t c = 0; c < d.c; ++c)
          for (std::size_t ki = 0; ki < d.k; ++ki) {
            const long si = static_cast<long>(i + ki) - static_cast<long>(d.pad);
            for (std::size_t kj = 0; kj < d.k; ++kj) {
              const long sj = static_cast<long>(j + kj) - static_cast<long>(d.pad);
              double v = 0.0;
              if (si >= 0 && si < static_cast<long>(d.h) && sj >= 0 && sj < static_cast<long>(d.w))
                v = in[((n * d.c + c) * d.h + si) * d.w + sj];
              row[(c * d.k + ki) * d.k + kj] = v;
            }
          }
      }
  return cols;
}

void col2im_add(const Tensor& cols, const ConvDims& d, Tensor& gx) {
  const std::size_t ckk = d.c * d.k * d.k;
  auto in = cols.data();
  auto out = gx.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.h; ++i)
      for (std::size_t j = 0; j < d.w; ++j) {
        const double* row = &in[((n * d.h + i) * d.w + j) * ckk];
        for (std::size_t c = 0; c < d.c; ++c)
          for (std::size_t ki = 0; ki < d.k; ++ki) {
            const long si = static_cast<long>(i + ki) - static_cast<long>(d.pad);
            if (si < 0 || si >= static_cast<long>(d.h)) continue;
            for (std::size_t kj = 0; kj < d.k; ++kj) {
              const long sj = static_cast<long>(j + kj) - static_cast<long>(d.pad);
              if (sj < 0 || sj >= static_cast<long>(d.w)) continue;
              out[((n * d.c + c) * d.h + si) * d.w + sj] += row[(c * d.k + ki) * d.k + kj];
            }
          }
      }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::BiasAdd: return "bias_add";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Pow: return "pow";
    case Op::Abs: return "abs";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::L1Norm: return "l1_norm";
    case Op::L2NormSq: return "l2_norm_sq";
    case Op::L2Norm: return "l2_norm";
    case Op::Reshape: return "reshape";
    case Op::Concat: return "concat";
    case Op::SumPlanes: return "sum_planes";
    case Op::RepeatPlanes: return "repeat_planes";
    case Op::Binarize: return "binarize";
    case Op::PlaneArgmaxBinarize: return "plane_argmax_binarize";
    case Op::Bce: return "bce";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Construction

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw Error("node id out of range");
  return nodes_[id.index];
}

NodeId Graph::push(Node n) {
  for (auto a : n.args) node(a);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::leaf_node(Op op, const std::string& name, Shape shape, std::optional<Tensor> value) {
  if (name.empty()) throw Error("leaf name must not be empty");
  if (leaves_.count(name)) throw Error("duplicate leaf name '" + name + "'");
  if (shape.empty() || shape_size(shape) == 0)
    throw ShapeError("leaf '" + name + "' has invalid shape " + shape_string(shape));
  Node n{op, {}, std::move(shape), 0.0, 0, name, std::move(value)};
  auto id = push(std::move(n));
  leaves_[name] = id;
  return id;
}

NodeId Graph::input(const std::string& name, Shape shape) {
  return leaf_node(Op::Input, name, std::move(shape), std::nullopt);
}

NodeId Graph::parameter(const std::string& name, Tensor init) {
  Shape s = init.shape();
  return leaf_node(Op::Parameter, name, std::move(s), std::move(init));
}

NodeId Graph::constant(Tensor value, const std::string& name) {
  Shape s = value.shape();
  std::string n = name.empty() ? "const#" + std::to_string(nodes_.size()) : name;
  return leaf_node(Op::Constant, n, std::move(s), std::move(value));
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_same(shape(a), shape(b), "add");
  return push({Op::Add, {a, b}, shape(a)});
}

NodeId Graph::sub(NodeId a, NodeId b) {
  require_same(shape(a), shape(b), "sub");
  return push({Op::Sub, {a, b}, shape(a)});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_same(shape(a), shape(b), "mul");
  return push({Op::Mul, {a, b}, shape(a)});
}

NodeId Graph::scale(NodeId a, double factor) { return push({Op::Scale, {a}, shape(a), factor}); }

NodeId Graph::add_scalar(NodeId a, double offset) {
  return push({Op::AddScalar, {a}, shape(a), offset});
}

NodeId Graph::bias_add(NodeId x, NodeId b, std::size_t axis) {
  const auto& xs = shape(x);
  if (axis >= xs.size()) throw ShapeError("bias_add axis out of range");
  if (shape(b) != Shape{xs[axis]})
    throw ShapeError("bias_add: bias shape " + shape_string(shape(b)) + " does not match axis " +
                     std::to_string(axis) + " of " + shape_string(xs));
  return push({Op::BiasAdd, {x, b}, xs, 0.0, axis});
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const auto& as = shape(a);
  const auto& bs = shape(b);
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw ShapeError("matmul: incompatible shapes " + shape_string(as) + " x " + shape_string(bs));
  return push({Op::MatMul, {a, b}, Shape{as[0], bs[1]}});
}

NodeId Graph::conv2d(NodeId x, NodeId w) {
  const auto& xs = shape(x);
  const auto& ws = shape(w);
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0)
    throw ShapeError("conv2d: incompatible shapes " + shape_string(xs) + " * " + shape_string(ws));
  return push({Op::Conv2d, {x, w}, Shape{xs[0], ws[0], xs[2], xs[3]}});
}

NodeId Graph::sigmoid(NodeId a) { return push({Op::Sigmoid, {a}, shape(a)}); }
NodeId Graph::relu(NodeId a) { return push({Op::Relu, {a}, shape(a)}); }
NodeId Graph::pow(NodeId a, double exponent) { return push({Op::Pow, {a}, shape(a), exponent}); }
NodeId Graph::abs(NodeId a) { return push({Op::Abs, {a}, shape(a)}); }
NodeId Graph::sum(NodeId a) { return push({Op::Sum, {a}, Shape{1}}); }
NodeId Graph::mean(NodeId a) { return push({Op::Mean, {a}, Shape{1}}); }
NodeId Graph::l1_norm(NodeId a) { return push({Op::L1Norm, {a}, Shape{1}}); }
NodeId Graph::l2_norm_sq(NodeId a) { return push({Op::L2NormSq, {a}, Shape{1}}); }
NodeId Graph::l2_norm(NodeId a) { return push({Op::L2Norm, {a}, Shape{1}}); }

NodeId Graph::reshape(NodeId a, Shape s) {
  if (shape_size(s) != shape_size(shape(a)) || s.empty())
    throw ShapeError("reshape: cannot reshape " + shape_string(shape(a)) + " to " + shape_string(s));
  return push({Op::Reshape, {a}, std::move(s)});
}

NodeId Graph::concat(NodeId a, NodeId b) {
  auto as = shape(a);
  const auto& bs = shape(b);
  if (as.size() != bs.size() || !std::equal(as.begin() + 1, as.end(), bs.begin() + 1))
    throw ShapeError("concat: incompatible shapes " + shape_string(as) + " and " + shape_string(bs));
  as[0] += bs[0];
  return push({Op::Concat, {a, b}, as});
}

NodeId Graph::sum_planes(NodeId a) {
  auto s = shape(a);
  s[0] = 1;
  return push({Op::SumPlanes, {a}, s});
}

NodeId Graph::repeat_planes(NodeId a, std::size_t count) {
  auto s = shape(a);
  if (s[0] != 1 || count == 0) throw ShapeError("repeat_planes expects a leading dimension of 1");
  s[0] = count;
  return push({Op::RepeatPlanes, {a}, s, 0.0, count});
}

NodeId Graph::binarize(NodeId a) { return push({Op::Binarize, {a}, shape(a)}); }

NodeId Graph::plane_argmax_binarize(NodeId a) {
  if (shape(a).size() < 2) throw ShapeError("plane_argmax_binarize expects rank >= 2");
  return push({Op::PlaneArgmaxBinarize, {a}, shape(a)});
}

NodeId Graph::bce(NodeId p, NodeId t) {
  require_same(shape(p), shape(t), "bce");
  return push({Op::Bce, {p, t}, Shape{1}});
}

void Graph::mark_tap(const std::string& name, NodeId n) {
  node(n);
  if (taps_.count(name)) throw Error("duplicate tap name '" + name + "'");
  taps_[name] = n;
}

void Graph::mark_output(const std::string& name, NodeId n) {
  node(n);
  if (outputs_.count(name)) throw Error("duplicate output name '" + name + "'");
  outputs_[name] = n;
}

NodeId Graph::leaf(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw Error("no leaf named '" + name + "' in graph");
  return it->second;
}

NodeId Graph::tap(const std::string& name) const {
  auto it = taps_.find(name);
  if (it == taps_.end()) throw Error("unknown layer tap '" + name + "'");
  return it->second;
}

NodeId Graph::output(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw Error("unknown output '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Forward

Forward::Forward(const Graph& graph, const Bindings& bindings) : graph_(&graph) {
  const auto& nodes = graph.nodes_;
  values_.resize(nodes.size());
  aux_.resize(nodes.size());
  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    const auto& n = nodes[idx];
    auto arg = [&](std::size_t k) -> const Tensor& { return values_[n.args[k].index]; };
    Tensor out;
    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
      case Op::Constant: {
        auto it = bindings.find(n.name);
        if (it != bindings.end()) {
          if (it->second.shape() != n.shape)
            throw ShapeError("binding '" + n.name + "' has shape " +
                             shape_string(it->second.shape()) + ", expected " +
                             shape_string(n.shape));
          out = it->second;
        } else if (n.value) {
          out = *n.value;
        } else {
          throw Error("missing binding for input '" + n.name + "'");
        }
        break;
      }
      case Op::Add: {
        out = arg(0);
        const auto& b = arg(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        break;
      }
      case Op::Sub: {
        out = arg(0);
        const auto& b = arg(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
        break;
      }
      case Op::Mul: {
        out = arg(0);
        const auto& b = arg(1);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
        break;
      }
      case Op::Scale:
        out = arg(0);
        for (auto& v : out.data()) v *= n.scalar;
        break;
      case Op::AddScalar:
        out = arg(0);
        for (auto& v : out.data()) v += n.scalar;
        break;
      case Op::BiasAdd: {
        out = arg(0);
        const auto& b = arg(1);
        std::size_t inner = 1;
        for (std::size_t a = n.axis + 1; a < n.shape.size(); ++a) inner *= n.shape[a];
        const std::size_t dim = n.shape[n.axis];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[(i / inner) % dim];
        break;
      }
      case Op::MatMul: {
        const auto& a = arg(0);
        const auto& b = arg(1);
        out = Tensor(n.shape);
        as_matrix(out, n.shape[0], n.shape[1]).noalias() =
            as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1));
        break;
      }
      case Op::Conv2d: {
        const auto& x = arg(0);
        const auto& w = arg(1);
        const auto d = conv_dims(x.shape(), w.shape());
        Tensor cols = im2col(x, d);
        const std::size_t rows = d.n * d.h * d.w;
        const std::size_t ckk = d.c * d.k * d.k;
        RowMatrix res = as_matrix(cols, rows, ckk) * as_matrix(w, d.o, ckk).transpose();
        out = Tensor(n.shape);
        auto o = out.data();
        for (std::size_t b = 0; b < d.n; ++b)
          for (std::size_t p = 0; p < d.h * d.w; ++p)
            for (std::size_t c = 0; c < d.o; ++c)
              o[(b * d.o + c) * d.h * d.w + p] =
                  res(static_cast<Eigen::Index>(b * d.h * d.w + p), static_cast<Eigen::Index>(c));
        aux_[idx] = std::move(cols);
        break;
      }
      case Op::Sigmoid:
        out = arg(0);
        for (auto& v : out.data()) v = sigmoid_scalar(v);
        break;
      case Op::Relu:
        out = arg(0);
        for (auto& v : out.data()) v = v > 0 ? v : 0.0;
        break;
      case Op::Pow:
        out = arg(0);
        for (auto& v : out.data()) v = std::pow(v, n.scalar);
        break;
      case Op::Abs:
        out = arg(0);
        for (auto& v : out.data()) v = std::abs(v);
        break;
      case Op::Sum:
      case Op::Mean: {
        double s = 0.0;
        for (double v : arg(0).data()) s += v;
        if (n.op == Op::Mean) s /= static_cast<double>(arg(0).size());
        out = Tensor::scalar(s);
        break;
      }
      case Op::L1Norm: {
        double s = 0.0;
        for (double v : arg(0).data()) s += std::abs(v);
        out = Tensor::scalar(s);
        break;
      }
      case Op::L2NormSq:
      case Op::L2Norm: {
        double s = 0.0;
        for (double v : arg(0).data()) s += v * v;
        out = Tensor::scalar(n.op == Op::L2Norm ? std::sqrt(s) : s);
        break;
      }
      case Op::Reshape:
        out = arg(0).reshaped(n.shape);
        break;
      case Op::Concat: {
        std::vector<double> data(arg(0).values());
        data.insert(data.end(), arg(1).values().begin(), arg(1).values().end());
        out = Tensor(n.shape, std::move(data));
        break;
      }
      case Op::SumPlanes: {
        const auto& a = arg(0);
        out = Tensor(n.shape);
        const std::size_t inner = out.size();
        for (std::size_t p = 0; p < a.dim(0); ++p)
          for (std::size_t i = 0; i < inner; ++i) out[i] += a[p * inner + i];
        break;
      }
      case Op::RepeatPlanes: {
        const auto& a = arg(0);
        out = Tensor(n.shape);
        for (std::size_t p = 0; p < n.axis; ++p)
          std::copy(a.data().begin(), a.data().end(), out.data().begin() + p * a.size());
        break;
      }
      case Op::Binarize:
        out = arg(0);
        for (auto& v : out.data()) v = v > 0.5 ? 1.0 : 0.0;
        break;
      case Op::PlaneArgmaxBinarize: {
        const auto& a = arg(0);
        out = Tensor(n.shape);
        const std::size_t planes = n.shape[0];
        const std::size_t inner = a.size() / planes;
        for (std::size_t i = 0; i < inner; ++i) {
          std::size_t best = 0;
          for (std::size_t p = 1; p < planes; ++p)
            if (a[p * inner + i] > a[best * inner + i]) best = p;
          if (a[best * inner + i] > 0.5) out[best * inner + i] = 1.0;
        }
        break;
      }
      case Op::Bce: {
        const auto& p = arg(0);
        const auto& t = arg(1);
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
          s -= t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q);
        }
        out = Tensor::scalar(s / static_cast<double>(p.size()));
        break;
      }
    }
    if (!out.all_finite())
      throw NumericError("non-finite value produced by " + std::string(op_name(n.op)) +
                         " node #" + std::to_string(idx) + (n.name.empty() ? "" : " '" + n.name + "'"));
    values_[idx] = std::move(out);
  }
}

// ---------------------------------------------------------------------------
// Backward

std::vector<Tensor> Forward::backward(NodeId output, const std::vector<NodeId>& wrt) const {
  const auto& nodes = graph_->nodes_;
  if (output.index >= nodes.size()) throw Error("output node out of range");
  if (nodes[output.index].shape != Shape{1} && shape_size(nodes[output.index].shape) != 1)
    throw ShapeError("gradient requires a scalar output, got shape " +
                     shape_string(nodes[output.index].shape));

  // Only propagate through nodes that depend on a requested leaf.
  std::vector<char> needed(nodes.size(), 0);
  for (auto w : wrt) {
    if (w.index >= nodes.size()) throw Error("gradient requested for node not in graph");
    needed[w.index] = 1;
  }
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (auto a : nodes[i].args)
      if (needed[a.index]) needed[i] = 1;

  std::vector<std::optional<Tensor>> grads(nodes.size());
  auto accumulate = [&](NodeId id) -> Tensor& {
    auto& g = grads[id.index];
    if (!g) g = Tensor(nodes[id.index].shape, 0.0);
    return *g;
  };

  grads[output.index] = Tensor(nodes[output.index].shape, 1.0);

  for (std::size_t idx = output.index + 1; idx-- > 0;) {
    if (!grads[idx] || !needed[idx]) continue;
    const auto& n = nodes[idx];
    const Tensor& g = *grads[idx];
    const Tensor& y = values_[idx];
    auto val = [&](std::size_t k) -> const Tensor& { return values_[n.args[k].index]; };
    auto want = [&](std::size_t k) { return needed[n.args[k].index] != 0; };

    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
      case Op::Constant:
        break;
      case Op::Add:
      case Op::Sub: {
        const double sb = n.op == Op::Add ? 1.0 : -1.0;
        if (want(0)) {
          auto& ga = accumulate(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (want(1)) {
          auto& gb = accumulate(n.args[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sb * g[i];
        }
        break;
      }
      case Op::Mul: {
        const auto& a = val(0);
        const auto& b = val(1);
        if (want(0)) {
          auto& ga = accumulate(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        }
        if (want(1)) {
          auto& gb = accumulate(n.args[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        }
        break;
      }
      case Op::Scale: {
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
        break;
      }
      case Op::AddScalar:
      case Op::Binarize:
      case Op::PlaneArgmaxBinarize: {
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::BiasAdd: {
        if (want(0)) {
          auto& gx = accumulate(n.args[0]);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (want(1)) {
          auto& gb = accumulate(n.args[1]);
          std::size_t inner = 1;
          for (std::size_t a = n.axis + 1; a < n.shape.size(); ++a) inner *= n.shape[a];
          const std::size_t dim = n.shape[n.axis];
          for (std::size_t i = 0; i < g.size(); ++i) gb[(i / inner) % dim] += g[i];
        }
        break;
      }
      case Op::MatMul: {
        const auto& a = val(0);
        const auto& b = val(1);
        const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
        if (want(0)) {
          auto& ga = accumulate(n.args[0]);
          as_matrix(ga, m, k).noalias() += as_matrix(g, m, cols) * as_matrix(b, k, cols).transpose();
        }
        if (want(1)) {
          auto& gb = accumulate(n.args[1]);
          as_matrix(gb, k, cols).noalias() += as_matrix(a, m, k).transpose() * as_matrix(g, m, cols);
        }
        break;
      }
      case Op::Conv2d: {
        const auto& x = val(0);
        const auto& w = val(1);
        const auto d = conv_dims(x.shape(), w.shape());
        const std::size_t rows = d.n * d.h * d.w;
        const std::size_t ckk = d.c * d.k * d.k;
        RowMatrix grows(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d.o));
        for (std::size_t b = 0; b < d.n; ++b)
          for (std::size_t p = 0; p < d.h * d.w; ++p)
            for (std::size_t c = 0; c < d.o; ++c)
              grows(static_cast<Eigen::Index>(b * d.h * d.w + p), static_cast<Eigen::Index>(c)) =
                  g[(b * d.o + c) * d.h * d.w + p];
        if (want(1)) {
          auto& gw = accumulate(n.args[1]);
          as_matrix(gw, d.o, ckk).noalias() += grows.transpose() * as_matrix(aux_[idx], rows, ckk);
        }
        if (want(0)) {
          Tensor gcols(Shape{rows, ckk});
          as_matrix(gcols, rows, ckk).noalias() = grows * as_matrix(w, d.o, ckk);
          col2im_add(gcols, d, accumulate(n.args[0]));
        }
        break;
      }
      case Op::Sigmoid: {
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::Relu: {
        const auto& a = val(0);
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a[i] > 0) ga[i] += g[i];
        break;
      }
      case Op::Pow: {
        const auto& a = val(0);
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * n.scalar * std::pow(a[i], n.scalar - 1.0);
        break;
      }
      case Op::Abs: {
        const auto& a = val(0);
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sign(a[i]);
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        auto& ga = accumulate(n.args[0]);
        const double s = n.op == Op::Mean ? g[0] / static_cast<double>(ga.size()) : g[0];
        for (auto& v : ga.data()) v += s;
        break;
      }
      case Op::L1Norm: {
        const auto& a = val(0);
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0] * sign(a[i]);
        break;
      }
      case Op::L2NormSq: {
        const auto& a = val(0);
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += 2.0 * g[0] * a[i];
        break;
      }
      case Op::L2Norm: {
        if (y[0] == 0.0) break;  // subgradient 0 at the origin
        const auto& a = val(0);
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0] * a[i] / y[0];
        break;
      }
      case Op::Reshape: {
        auto& ga = accumulate(n.args[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::Concat: {
        const std::size_t split = val(0).size();
        if (want(0)) {
          auto& ga = accumulate(n.args[0]);
          for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
        }
        if (want(1)) {
          auto& gb = accumulate(n.args[1]);
          for (std::size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
        }
        break;
      }
      case Op::SumPlanes: {
        auto& ga = accumulate(n.args[0]);
        const std::size_t inner = g.size();
        for (std::size_t p = 0; p < ga.dim(0); ++p)
          for (std::size_t i = 0; i < inner; ++i) ga[p * inner + i] += g[i];
        break;
      }
      case Op::RepeatPlanes: {
        auto& ga = accumulate(n.args[0]);
        const std::size_t inner = ga.size();
        for (std::size_t p = 0; p < n.axis; ++p)
          for (std::size_t i = 0; i < inner; ++i) ga[i] += g[p * inner + i];
        break;
      }
      case Op::Bce: {
        if (!want(0)) break;
        const auto& p = val(0);
        const auto& t = val(1);
        auto& gp = accumulate(n.args[0]);
        const double inv = g[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
          gp[i] += inv * (q - t[i]) / (q * (1.0 - q));
        }
        break;
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (auto w : wrt) {
    if (grads[w.index]) {
      if (!grads[w.index]->all_finite())
        throw NumericError("non-finite gradient for node #" + std::to_string(w.index));
      result.push_back(*grads[w.index]);
    } else {
      result.emplace_back(nodes[w.index].shape, 0.0);
    }
  }
  return result;
}

std::map<std::string, Tensor> evaluate(const Graph& graph, const Bindings& bindings) {
  Forward fwd(graph, bindings);
  std::map<std::string, Tensor> result;
  for (const auto& [name, id] : graph.taps()) result[name] = fwd.value(id);
  for (const auto& [name, id] : graph.outputs()) result[name] = fwd.value(id);
  return result;
}

std::map<std::string, Tensor> gradient(const Graph& graph, const Bindings& bindings,
                                       const std::vector<std::string>& wrt,
                                       const std::string& output) {
  NodeId out;
  if (graph.outputs().count(output))
    out = graph.output(output);
  else
    out = graph.tap(output);
  std::vector<NodeId> ids;
  for (const auto& name : wrt) ids.push_back(graph.leaf(name));
  Forward fwd(graph, bindings);
  auto grads = fwd.backward(out, ids);
  std::map<std::string, Tensor> result;
  for (std::size_t i = 0; i < wrt.size(); ++i) result[wrt[i]] = std::move(grads[i]);
  return result;
}

}  // namespace conceptbp
