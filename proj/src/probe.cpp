#include "conceptbp/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "conceptbp/io.hpp"
#include "conceptbp/random.hpp"

namespace conceptbp {

std::string concept_kind_name(ConceptKind kind) {
  return kind == ConceptKind::Binary ? "binary" : "scalar";
}

ConceptKind parse_concept_kind(const std::string& name) {
  if (name == "binary") return ConceptKind::Binary;
  if (name == "scalar") return ConceptKind::Scalar;
  throw ConfigError("unknown concept kind '" + name + "' (expected binary or scalar)");
}

ProbeDataset build_probe_dataset(const Model& model, const std::string& tap, const Tensor& samples,
                                 std::span<const int> labels, const ConceptFunction& concept_fn) {
  if (samples.rank() < 2 || samples.dim(0) == 0) throw Error("probe dataset needs at least one sample");
  if (!labels.empty() && labels.size() != samples.dim(0))
    throw Error("label count does not match sample count");
  if (!model.has_tap(tap)) throw Error("unknown layer tap '" + tap + "'");
  const std::size_t n = samples.dim(0);
  const std::size_t dim = shape_size(model.tap_shape(tap));

  ProbeDataset out;
  std::vector<double> acts;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    auto chunk = slice_rows(samples, start, end);
    auto a = model.activations(tap, chunk);
    for (std::size_t i = start; i < end; ++i) {
      const auto sample = unstack(chunk, i - start);
      double value = 0.0;
      try {
        value = concept_fn.evaluate(sample, labels.empty() ? std::nullopt : std::optional<int>(labels[i]));
      } catch (const std::exception&) {
        ++out.skipped;
        continue;
      }
      const bool valid = concept_fn.kind == ConceptKind::Binary ? (value == 0.0 || value == 1.0)
                                                                 : std::isfinite(value);
      if (!valid) {
        ++out.skipped;
        continue;
      }
      out.labels.push_back(value);
      out.indices.push_back(i);
      acts.insert(acts.end(), a.values().begin() + static_cast<long>((i - start) * dim),
                  a.values().begin() + static_cast<long>((i - start + 1) * dim));
    }
  }
  if (out.labels.empty()) throw DegenerateConceptError("concept evaluator rejected every sample");
  out.activations = Tensor(Shape{out.labels.size(), dim}, std::move(acts));
  return out;
}

double Probe::predict(const Tensor& activation) const {
  if (activation.size() != weights.size())
    throw ShapeError("probe expects " + std::to_string(weights.size()) + " activations, got " +
                     std::to_string(activation.size()));
  double z = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * activation[i];
  if (kind == ConceptKind::Scalar) return z;
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

NodeId Probe::emit(Graph& graph, NodeId activation) const {
  const auto& s = graph.shape(activation);
  if (s.empty() || s[0] != 1 || shape_size(s) != weights.size())
    throw ShapeError("probe expects a [1, ...] activation with " + std::to_string(weights.size()) +
                     " elements, got " + shape_string(s));
  auto flat = graph.reshape(activation, Shape{1, weights.size()});
  auto w = graph.constant(weights.reshaped({weights.size(), 1}));
  auto b = graph.constant(Tensor::scalar(bias));
  auto z = graph.bias_add(graph.matmul(flat, w), b, 1);
  if (kind == ConceptKind::Binary) z = graph.sigmoid(z);
  return graph.reshape(z, Shape{1});
}

std::string Probe::serialize() const {
  std::ostringstream os;
  os << "conceptbp-probe v1\n";
  os << "kind " << concept_kind_name(kind) << '\n';
  os << "tap " << (tap.empty() ? "-" : tap) << '\n';
  os << "lambda " << io::format_double(lambda) << '\n';
  os << "bias " << io::format_double(bias) << '\n';
  os << "weights " << weights.size() << '\n';
  for (double w : weights.data()) os << io::format_double(w) << '\n';
  return os.str();
}

Probe Probe::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto field = [&](const char* key) {
    if (!std::getline(is, line)) throw FormatError(std::string("probe file truncated before '") + key + "'");
    auto t = io::split_whitespace(line);
    if (t.size() != 2 || t[0] != key) throw FormatError(std::string("expected '") + key + "' line in probe file");
    return t[1];
  };
  if (!std::getline(is, line) || line != "conceptbp-probe v1") throw FormatError("not a conceptbp probe file");
  Probe p;
  try {
    p.kind = parse_concept_kind(field("kind"));
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  p.tap = field("tap");
  if (p.tap == "-") p.tap.clear();
  p.lambda = io::parse_double(field("lambda"));
  p.bias = io::parse_double(field("bias"));
  const auto n = io::parse_u64(field("weights"));
  if (n == 0) throw FormatError("probe has no weights");
  std::vector<double> w;
  w.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw FormatError("probe weights truncated");
    w.push_back(io::parse_double(line));
  }
  p.weights = Tensor(Shape{n}, std::move(w));
  return p;
}

void Probe::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

Probe Probe::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Average ranks over ties (Mann-Whitney U).
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] > 0.5) {
      pos += 1;
      rank_sum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) return 0.5;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

double r_squared(std::span<const double> predictions, std::span<const double> targets) {
  const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_res += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  if (ss_tot == 0) return ss_res == 0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

ProbeFit train_probe(const ProbeDataset& data, ConceptKind kind, double lambda, const TrainConfig& config,
                     const std::string& tap) {
  config.validate();
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("probe lambda must be >= 0");
  const std::size_t n = data.labels.size();
  if (n < 2) throw DegenerateConceptError("probe training needs at least two samples");
  if (kind == ConceptKind::Binary) {
    const bool has0 = std::find(data.labels.begin(), data.labels.end(), 0.0) != data.labels.end();
    const bool has1 = std::find(data.labels.begin(), data.labels.end(), 1.0) != data.labels.end();
    if (!has0 || !has1) throw DegenerateConceptError("binary concept has a single class; cannot train a probe");
  }
  const std::size_t dim = data.activations.dim(1);

  auto [train_idx, test_idx] = holdout_split(n, config.seed);
  const std::size_t n_train = train_idx.size();
  const std::size_t n_test = test_idx.size();

  Tensor labels(Shape{n, 1}, data.labels);
  Tensor weights(Shape{dim, 1}, 0.0);
  Tensor bias(Shape{1}, 0.0);

  auto build = [&](std::size_t batch) {
    Graph g;
    auto a = g.input("a", {batch, dim});
    auto y = g.input("y", {batch, 1});
    auto w = g.parameter("w", weights);
    auto b = g.parameter("b", bias);
    auto z = g.bias_add(g.matmul(a, w), b, 1);
    if (kind == ConceptKind::Binary) z = g.sigmoid(z);
    auto fit = g.scale(g.l2_norm_sq(g.sub(z, y)), 1.0 / static_cast<double>(batch));
    auto penalty = g.scale(g.add(g.l1_norm(w), g.l1_norm(b)), lambda);
    g.mark_output("loss", g.add(fit, penalty));
    return g;
  };

  ProbeReport report;
  report.kind = kind;
  report.train_size = n_train;
  report.test_size = n_test;

  std::map<std::size_t, Graph> graphs;
  Optimizer opt(config.optimizer, config.learning_rate);
  Rng rng(config.seed);
  const std::size_t bs = std::min(config.batch_size, n_train);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double total = 0.0;
    for (std::size_t start = 0; start < n_train; start += bs) {
      const std::size_t end = std::min(n_train, start + bs);
      std::vector<std::size_t> rows(train_idx.begin() + static_cast<long>(start),
                                    train_idx.begin() + static_cast<long>(end));
      auto it = graphs.find(rows.size());
      if (it == graphs.end()) it = graphs.emplace(rows.size(), build(rows.size())).first;
      const Graph& g = it->second;
      Bindings b{{"a", gather_rows(data.activations, rows)}, {"y", gather_rows(labels, rows)},
                 {"w", weights}, {"b", bias}};
      Forward fwd(g, b);
      const auto loss = g.output("loss");
      total += fwd.value(loss).item() * static_cast<double>(rows.size());
      auto grads = fwd.backward(loss, {g.leaf("w"), g.leaf("b")});
      opt.step({&weights, &bias}, grads);
      if (!weights.all_finite() || !bias.all_finite())
        throw TrainingDiverged("probe training diverged at epoch " + std::to_string(epoch));
    }
    report.loss_curve.push_back(total / static_cast<double>(n_train));
  }

  ProbeFit fit;
  fit.probe.kind = kind;
  fit.probe.tap = tap;
  fit.probe.lambda = lambda;
  fit.probe.bias = bias.item();
  fit.probe.weights = weights.reshaped({dim});

  std::vector<double> preds, truth;
  for (auto i : test_idx) {
    preds.push_back(fit.probe.predict(unstack(data.activations, i)));
    truth.push_back(data.labels[i]);
  }
  if (kind == ConceptKind::Binary) {
    std::size_t correct = 0, positives = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      correct += (preds[i] > 0.5) == (truth[i] > 0.5);
      positives += truth[i] > 0.5;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
    report.auc = roc_auc(preds, truth);
    const double share = static_cast<double>(positives) / static_cast<double>(preds.size());
    report.base_rate = std::max(share, 1.0 - share);
  } else {
    report.r2 = r_squared(preds, truth);
  }
  for (double w : fit.probe.weights.data()) report.l1_mass += std::abs(w);
  fit.report = std::move(report);
  return fit;
}

}  // namespace conceptbp
