#include "conceptbp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "conceptbp/board.hpp"
#include "conceptbp/io.hpp"
#include "conceptbp/reports.hpp"

namespace conceptbp::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::Toy: return "toy";
    case Kind::Housing: return "housing";
    case Kind::Digits: return "digits";
    case Kind::Fashion: return "fashion";
    case Kind::Chess: return "chess";
  }
  return "unknown";
}

Kind parse_kind(const std::string& name) {
  for (Kind k : {Kind::Toy, Kind::Housing, Kind::Digits, Kind::Fashion, Kind::Chess})
    if (kind_name(k) == name) return k;
  throw ConfigError("unknown pipeline '" + name + "' (expected toy, housing, digits, fashion or chess)");
}

std::vector<Layer> parse_architecture(const std::vector<std::string>& specs) {
  std::vector<Layer> layers;
  for (const auto& spec : specs) {
    try {
      layers.push_back(parse_layer(io::split_whitespace(spec)));
    } catch (const Error& e) {
      throw ConfigError("bad layer spec '" + spec + "': " + e.what());
    }
  }
  return layers;
}

namespace {

// ---- defaults ---------------------------------------------------------------

std::vector<Layer> image_autoencoder_layers() {
  return parse_architecture({"flatten flat", "dense enc 128", "relu enc_relu", "dense latent 16", "dense dec 128",
                             "relu dec_relu", "dense px 784", "sigmoid px_sig", "reshape img 1 28 28"});
}

Config defaults(Kind kind) {
  Config c;
  c.pipeline = kind;
  c.probe.train = {.learning_rate = 1e-2, .batch_size = 64, .epochs = 100};
  c.sweep_lambda2 = {0.1, 0.75, 5.0};
  auto& m = c.maximise;
  switch (kind) {
    case Kind::Toy:
      c.data.samples = 200;
      c.probe.tap = "input";
      c.probe.lambda = 0.0;
      m.config.target = 1.0;
      m.count = 1;
      break;
    case Kind::Housing:
      c.data.samples = 5000;
      c.architecture = parse_architecture(
          {"dense h1 32", "relu h1_relu", "dense hidden 16", "relu hidden_relu", "dense out 1"});
      c.train = {.learning_rate = 1e-3, .batch_size = 32, .epochs = 40};
      c.probe.tap = "hidden_relu";
      m.target_offset = 0.1;
      m.config.lambda2 = 0.01;
      m.count = 20;
      break;
    case Kind::Digits:
      c.data.samples = 10000;
      c.architecture = image_autoencoder_layers();
      c.train = {.learning_rate = 1e-3, .batch_size = 64, .epochs = 20};
      c.probe.tap = "latent";
      m.config.target = 1.0;
      m.config.lambda2 = 0.01;
      m.concept_absent = true;
      m.count = 20;
      break;
    case Kind::Fashion:
      c.data.samples = 6000;
      c.architecture = parse_architecture(
          {"flatten flat", "dense h1 64", "relu hidden", "dense logits 10", "sigmoid class"});
      c.autoencoder = image_autoencoder_layers();
      c.train = {.learning_rate = 1e-3, .batch_size = 64, .epochs = 15};
      c.autoencoder_train = {.learning_rate = 1e-3, .batch_size = 64, .epochs = 20};
      c.probe.tap = "hidden";
      m.target_offset = 0.2;
      m.config.lambda2 = 0.003;
      m.config.learning_rate = 0.05;
      m.count = 10;
      break;
    case Kind::Chess:
      c.data.samples = 4000;
      c.architecture = chess_architecture(0).layers();
      c.legality_architecture = legality_architecture(0).layers();
      c.train = {.learning_rate = 1e-3, .batch_size = 32, .epochs = 30};
      c.legality_train = {.learning_rate = 1e-3, .batch_size = 32, .epochs = 15};
      c.probe.tap = "hidden_relu";
      m.config.target = 1.0;
      m.config.lambda2 = 0.5;
      m.concept_absent = true;
      m.count = 20;
      break;
  }
  return c;
}

// ---- strict JSON reading ------------------------------------------------------

// Reads keys from one JSON object and rejects any it was not asked about.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + display() + "' must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }

  void read_nonneg(const std::string& key, double& out) {
    read(key, out);
    if (has(key) && !(std::isfinite(out) && out >= 0.0))
      throw ConfigError("config key '" + qualified(key) + "' must be a finite value >= 0");
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), qualified(key));
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + qualified(key) + "'");
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(Section& parent, const std::string& key, TrainConfig& out) {
  if (!parent.has(key)) return;
  auto s = parent.child(key);
  s.read("learning_rate", out.learning_rate);
  s.read("batch_size", out.batch_size);
  s.read("epochs", out.epochs);
  if (s.has("optimizer")) {
    std::string name;
    s.read("optimizer", name);
    out.optimizer = parse_optimizer(name);
  }
  s.finish();
  try {
    out.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config section '" + parent.qualified(key) + "': " + e.what());
  }
}

void read_layers(Section& parent, const std::string& key, std::vector<Layer>& out) {
  if (!parent.has(key)) return;
  std::vector<std::string> specs;
  parent.read(key, specs);
  out = parse_architecture(specs);
}

void read_maximise(Section& s, MaximiseSettings& m) {
  auto& c = m.config;
  s.read_nonneg("lambda1", c.lambda1);
  s.read_nonneg("lambda2", c.lambda2);
  if (s.has("target") && s.has("target_offset"))
    throw ConfigError("config keys '" + s.qualified("target") + "' and '" + s.qualified("target_offset") +
                      "' are mutually exclusive");
  if (s.has("target")) {
    s.read("target", c.target);
    m.target_offset.reset();
  }
  if (s.has("target_offset")) {
    double offset = 0.0;
    s.read("target_offset", offset);
    m.target_offset = offset;
  }
  s.read("max_steps", c.max_steps);
  s.read("learning_rate", c.learning_rate);
  s.read("tolerance", c.tolerance);
  s.read_nonneg("init_noise", c.init_noise);
  if (s.has("optimizer")) {
    std::string name;
    s.read("optimizer", name);
    c.optimizer = parse_optimizer(name);
  }
  s.read("samples", m.samples);
  s.read("count", m.count);
  s.read("concept_absent", m.concept_absent);
  s.finish();
  c.validate();
  if (m.samples.empty() && m.count == 0) throw ConfigError("config key 'maximise.count' must be >= 1");
}

}  // namespace

Config parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section s(root, "");
  if (!s.has("pipeline")) throw ConfigError("config key 'pipeline' is required");
  std::string name;
  s.read("pipeline", name);
  const Kind kind = parse_kind(name);
  Config c = defaults(kind);

  s.read("seed", c.seed);
  if (s.has("out_dir")) {
    std::string dir;
    s.read("out_dir", dir);
    c.out_dir = dir;
  }
  auto only_for = [&](const std::string& key, std::initializer_list<Kind> kinds) {
    if (root.contains(key) && std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
      throw ConfigError("config key '" + key + "' does not apply to pipeline '" + name + "'");
  };
  only_for("autoencoder", {Kind::Fashion});
  only_for("autoencoder_train", {Kind::Fashion});
  only_for("legality_architecture", {Kind::Chess});
  only_for("legality_train", {Kind::Chess});

  if (s.has("data")) {
    auto d = s.child("data");
    d.read("samples", c.data.samples);
    auto path_key = [&](const std::string& key, std::optional<fs::path>& out) {
      if (!d.has(key)) return;
      std::string p;
      d.read(key, p);
      out = p;
    };
    if (kind == Kind::Housing) path_key("csv", c.data.csv);
    if (kind == Kind::Digits || kind == Kind::Fashion) {
      path_key("idx_images", c.data.idx_images);
      path_key("idx_labels", c.data.idx_labels);
      if (c.data.idx_images.has_value() != c.data.idx_labels.has_value())
        throw ConfigError("config keys 'data.idx_images' and 'data.idx_labels' must be given together");
    }
    if (kind == Kind::Chess) d.read("legality_samples", c.data.legality_samples);
    d.finish();
  }
  if (c.data.samples < 10 && !c.data.csv && !c.data.idx_images)
    throw ConfigError("config key 'data.samples' must be >= 10");

  read_layers(s, "architecture", c.architecture);
  read_layers(s, "autoencoder", c.autoencoder);
  read_layers(s, "legality_architecture", c.legality_architecture);
  read_train(s, "train", c.train);
  read_train(s, "autoencoder_train", c.autoencoder_train);
  read_train(s, "legality_train", c.legality_train);

  if (s.has("probe")) {
    auto p = s.child("probe");
    p.read("tap", c.probe.tap);
    p.read_nonneg("lambda", c.probe.lambda);
    read_train(p, "train", c.probe.train);
    p.finish();
  }
  if (s.has("maximise")) {
    auto m = s.child("maximise");
    read_maximise(m, c.maximise);
  }
  if (s.has("sweep")) {
    auto w = s.child("sweep");
    if (w.has("lambda2")) w.read("lambda2", c.sweep_lambda2);
    w.finish();
    if (c.sweep_lambda2.empty()) throw ConfigError("config key 'sweep.lambda2' must not be empty");
    for (double v : c.sweep_lambda2)
      if (!(std::isfinite(v) && v >= 0.0)) throw ConfigError("config key 'sweep.lambda2' entries must be >= 0");
  }
  s.finish();
  return c;
}

Config load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  Config c = parse_config(text);
  // Data files are resolved against the config's own directory.
  const auto base = path.parent_path();
  for (auto* p : {&c.data.csv, &c.data.idx_images, &c.data.idx_labels})
    if (*p && p->value().is_relative()) *p = base / p->value();
  return c;
}

namespace {

// ---- data -------------------------------------------------------------------

struct Prepared {
  Tensor inputs;   // [N, ...input_shape]
  Tensor targets;  // training targets of the probed model
  LossKind loss = LossKind::SquaredError;
  std::vector<int> labels;
  std::optional<Normalization> normalization;
  std::vector<board::Board> boards;
  HoldoutSplit split;
  ConceptFunction concept_fn;

  std::size_t size() const { return inputs.shape()[0]; }
  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }
  std::optional<int> label(std::size_t i) const {
    return labels.empty() ? std::nullopt : std::optional<int>(labels[i]);
  }
  std::vector<int> gather_labels(const std::vector<std::size_t>& rows) const {
    std::vector<int> out;
    if (labels.empty()) return out;
    for (auto r : rows) out.push_back(labels[r]);
    return out;
  }
};

ConceptFunction first_coordinate_concept() {
  return {"first_coordinate", ConceptKind::Scalar, [](const Tensor& s, std::optional<int>) { return s[0]; }};
}

Tensor one_hot(const std::vector<int>& labels) {
  Tensor t(Shape{labels.size(), 10}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) t[i * 10 + static_cast<std::size_t>(labels[i])] = 1.0;
  return t;
}

Prepared prepare(const Config& c) {
  Prepared p;
  const std::size_t n = c.data.samples;
  switch (c.pipeline) {
    case Kind::Toy: {
      Rng rng(c.seed);
      p.inputs = Tensor(Shape{n, 2});
      for (auto& v : p.inputs.data()) v = rng.uniform(-2.0, 2.0);
      p.targets = p.inputs;
      p.concept_fn = first_coordinate_concept();
      break;
    }
    case Kind::Housing: {
      auto raw = c.data.csv ? load_tabular_csv(*c.data.csv) : synthetic_housing(n, c.seed);
      auto norm = normalize(raw);
      p.inputs = norm.features_tensor();
      p.targets = norm.target_tensor();
      p.normalization = norm.normalization;
      p.concept_fn = bedrooms_ratio_concept(*norm.normalization);
      break;
    }
    case Kind::Digits:
    case Kind::Fashion: {
      ImageDataset images;
      if (c.data.idx_images) {
        images = load_idx_images(*c.data.idx_images, *c.data.idx_labels);
        if (n > 0 && n < images.size()) images = images.subset(0, n);
      } else {
        images = c.pipeline == Kind::Digits ? synthetic_digits(n, c.seed) : synthetic_fashion(n, c.seed);
      }
      p.inputs = images.batch(0, images.size());
      p.labels = images.labels;
      if (c.pipeline == Kind::Digits) {
        p.targets = p.inputs;
        p.concept_fn = loopiness_concept();
      } else {
        p.targets = one_hot(images.labels);
        p.loss = LossKind::BinaryCrossEntropy;
        p.concept_fn = lightness_concept();
      }
      break;
    }
    case Kind::Chess: {
      auto data = generate_board_dataset(n, c.seed);
      p.inputs = data.encodings();
      p.targets = data.auxiliary();
      p.boards = std::move(data.boards);
      p.concept_fn = queen_threat_concept();
      break;
    }
  }
  if (p.size() < 2) throw Error("dataset needs at least two samples");
  p.split = holdout_split(p.size(), c.seed);
  return p;
}

// ---- artifacts ----------------------------------------------------------------

std::string fmt(double v) { return std::isfinite(v) ? io::format_double(v) : "nan"; }

std::string curve_csv(const std::vector<double>& curve, const std::string& manifest) {
  std::string out = "# manifest: " + manifest + "\nepoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out += std::to_string(i + 1) + "," + fmt(curve[i]) + "\n";
  return out;
}

ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

template <typename T>
ordered_json optional_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_floating_point_v<T>)
    return number(*v);
  else
    return *v;
}

fs::path stage_dir(const Invocation& inv, const std::string& stage) { return inv.out_root / stage; }

RunManifest manifest_for(const std::string& command, const Config& c, const Invocation& inv,
                         std::vector<std::string> inputs, const std::string& started) {
  RunManifest m;
  m.command = command;
  m.config_path = inv.config_path;
  m.seed = c.seed;
  m.inputs = std::move(inputs);
  m.started = started;
  m.finished = utc_timestamp();
  return m;
}

Model load_stage_model(const Invocation& inv, const std::string& stage, const std::string& name) {
  const auto path = stage_dir(inv, stage) / name;
  if (!fs::exists(path))
    throw Error("missing " + (fs::path(stage) / name).string() + " under " + inv.out_root.string() +
                " (run the '" + stage + "' command first)");
  return Model::load(path);
}

double per_pixel_mse(const Model& model, const Tensor& inputs) {
  const auto out = predict_batched(model, inputs);
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) sum += (out[i] - inputs[i]) * (out[i] - inputs[i]);
  return sum / static_cast<double>(out.size());
}

// Fresh legal and corrupted boards, disjoint in seed from the model's data.
// Half sparse generated positions, half opening-like dense ones, so the
// classifier has seen the full range of piece counts.
std::vector<board::Board> legality_boards(std::size_t n, std::uint64_t seed) {
  auto boards = board::generate_boards(n - n / 2, seed);
  auto dense = board::generate_opening_boards(n / 2, seed + 1);
  boards.insert(boards.end(), dense.begin(), dense.end());
  return boards;
}

std::pair<Tensor, Tensor> legality_data(const Config& c) {
  const auto legal = legality_boards(c.data.legality_samples, c.seed + 101);
  const auto sources = legality_boards(c.data.legality_samples, c.seed + 202);
  Rng rng(c.seed + 303);
  std::vector<Tensor> legal_rows, illegal_rows;
  for (const auto& b : legal) legal_rows.push_back(b.encode());
  for (std::size_t i = 0; i < sources.size(); ++i)
    illegal_rows.push_back(board::corrupt(sources[i], board::kCorruptions[i % board::kCorruptions.size()], rng));
  return {stack(legal_rows), stack(illegal_rows)};
}

}  // namespace

// ---- train --------------------------------------------------------------------

TrainSummary run_train(const Config& c, const Invocation& inv) {
  const auto started = utc_timestamp();
  const auto p = prepare(c);
  ArtifactDir dir(stage_dir(inv, "train"));
  TrainSummary summary;
  const std::string manifest = kManifestName;

  Model model(p.sample_shape(), c.architecture, c.seed);
  if (model.output_shape() != Shape(p.targets.shape().begin() + 1, p.targets.shape().end()))
    throw ConfigError("architecture output shape does not match the pipeline's training targets");
  const auto train_x = gather_rows(p.inputs, p.split.train), train_y = gather_rows(p.targets, p.split.train);
  const auto test_x = gather_rows(p.inputs, p.split.test), test_y = gather_rows(p.targets, p.split.test);
  if (model.parameter_count() > 0) {
    TrainConfig tc = c.train;
    tc.seed = c.seed;
    auto outcome = train_supervised(model, train_x, train_y, p.loss, tc);
    model = std::move(outcome.model);
    summary.loss_curve = std::move(outcome.loss_curve);
  }
  summary.held_out_loss = evaluate_loss(model, test_x, test_y, p.loss);
  dir.write("model.bin", model.serialize());
  dir.write("loss_curve.csv", curve_csv(summary.loss_curve, manifest));

  ordered_json metrics;
  metrics["manifest"] = manifest;
  metrics["pipeline"] = kind_name(c.pipeline);
  metrics["train_size"] = p.split.train.size();
  metrics["test_size"] = p.split.test.size();
  metrics["held_out_loss"] = number(summary.held_out_loss);

  if (c.pipeline == Kind::Digits) {
    if (!model.has_tap("latent")) throw ConfigError("digit autoencoder needs a layer named 'latent'");
    summary.reconstruction_mse = per_pixel_mse(model, test_x);
  }
  if (c.pipeline == Kind::Fashion) {
    Model ae(p.sample_shape(), c.autoencoder, c.seed + 1);
    if (!ae.has_tap("latent") || ae.output_shape() != p.sample_shape())
      throw ConfigError("fashion autoencoder needs a 'latent' layer and image-shaped output");
    TrainConfig tc = c.autoencoder_train;
    tc.seed = c.seed + 1;
    auto outcome = train_supervised(ae, train_x, train_x, LossKind::SquaredError, tc);
    summary.reconstruction_mse = per_pixel_mse(outcome.model, test_x);
    dir.write("autoencoder.bin", outcome.model.serialize());
    dir.write("autoencoder_loss_curve.csv", curve_csv(outcome.loss_curve, manifest));
    std::size_t correct = 0;
    const auto scores = predict_batched(model, test_x);
    for (std::size_t i = 0; i < p.split.test.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < 10; ++k)
        if (scores[i * 10 + k] > scores[i * 10 + best]) best = k;
      correct += static_cast<int>(best) == p.labels[p.split.test[i]];
    }
    metrics["classifier_accuracy"] = static_cast<double>(correct) / static_cast<double>(p.split.test.size());
  }
  if (summary.reconstruction_mse) metrics["reconstruction_mse_per_pixel"] = number(*summary.reconstruction_mse);

  if (c.pipeline == Kind::Chess) {
    auto [legal, illegal] = legality_data(c);
    TrainConfig tc = c.legality_train;
    tc.seed = c.seed + 2;
    Model arch({board::kPlanes, board::kSize, board::kSize}, c.legality_architecture, tc.seed);
    if (arch.output_shape() != Shape{1}) throw ConfigError("legality classifier must output one score");
    auto fit = train_legality_classifier(legal, illegal, tc, arch);
    summary.legality_accuracy = fit.held_out_accuracy;
    summary.start_position_illegality = illegality_score(fit.model, board::Board::starting_position().encode());
    summary.warning = fit.warning;
    dir.write("legality.bin", fit.model.serialize());
    dir.write("legality_loss_curve.csv", curve_csv(fit.loss_curve, manifest));
    metrics["legality_accuracy"] = fit.held_out_accuracy;
    metrics["legality_test_size"] = fit.test_size;
    metrics["start_position_illegality"] = number(*summary.start_position_illegality);
    if (fit.warning) metrics["warning"] = *fit.warning;
  }
  dir.write("metrics.json", metrics.dump(2) + "\n");
  dir.write_manifest(manifest_for("train", c, inv, {}, started));
  return summary;
}

// ---- probe ----------------------------------------------------------------------

ProbeReport run_probe(const Config& c, const Invocation& inv) {
  const auto started = utc_timestamp();
  const auto p = prepare(c);
  const auto model = load_stage_model(inv, "train", "model.bin");
  if (!model.has_tap(c.probe.tap)) {
    std::string known;
    for (const auto& t : model.taps()) known += (known.empty() ? "" : ", ") + t;
    throw ConfigError("unknown layer tap '" + c.probe.tap + "' (model taps: " + known + ")");
  }
  // The probe never sees the held-out pool that maximisation draws from.
  const auto rows = gather_rows(p.inputs, p.split.train);
  const auto labels = p.gather_labels(p.split.train);
  const auto data = build_probe_dataset(model, c.probe.tap, rows, labels, p.concept_fn);
  TrainConfig tc = c.probe.train;
  tc.seed = c.seed;
  auto fit = train_probe(data, p.concept_fn.kind, c.probe.lambda, tc, c.probe.tap);

  ArtifactDir dir(stage_dir(inv, "probe"));
  dir.write("probe.txt", fit.probe.serialize());
  const auto& r = fit.report;
  ordered_json report;
  report["manifest"] = kManifestName;
  report["concept"] = p.concept_fn.name;
  report["kind"] = concept_kind_name(r.kind);
  report["tap"] = c.probe.tap;
  report["lambda"] = c.probe.lambda;
  report["accuracy"] = optional_json(r.accuracy);
  report["auc"] = optional_json(r.auc);
  report["r2"] = optional_json(r.r2);
  if (r.kind == ConceptKind::Binary) report["base_rate"] = number(r.base_rate);
  report["l1_mass"] = number(r.l1_mass);
  report["train_size"] = r.train_size;
  report["test_size"] = r.test_size;
  report["skipped_samples"] = data.skipped;
  ordered_json curve = ordered_json::array();
  for (double v : r.loss_curve) curve.push_back(number(v));
  report["loss_curve"] = curve;
  dir.write("probe_report.json", report.dump(2) + "\n");
  dir.write_manifest(manifest_for("probe", c, inv, {"train/model.bin"}, started));
  return r;
}

// ---- maximise / sweep -------------------------------------------------------------

namespace {

struct MaximiseContext {
  const Config& config;
  Prepared data;
  Model model;
  Probe probe;
  std::unique_ptr<ModalityAdapter> adapter;
  std::vector<std::string> inputs;  // upstream artifacts for the manifest
  std::vector<std::size_t> selected;  // positions in the held-out pool
};

MaximiseContext load_context(const Config& c, const Invocation& inv) {
  MaximiseContext ctx{c, prepare(c), load_stage_model(inv, "train", "model.bin"), {}, {}, {}, {}};
  const auto probe_path = stage_dir(inv, "probe") / "probe.txt";
  if (!fs::exists(probe_path))
    throw Error("missing probe/probe.txt under " + inv.out_root.string() + " (run the 'probe' command first)");
  ctx.probe = Probe::load(probe_path);
  ctx.inputs = {"probe/probe.txt", "train/model.bin"};
  switch (c.pipeline) {
    case Kind::Toy:
    case Kind::Housing:
      ctx.adapter = std::make_unique<TabularAdapter>(ctx.data.sample_shape().at(0));
      break;
    case Kind::Digits: {
      auto [enc, dec] = ctx.model.split("latent");
      ctx.adapter = std::make_unique<ImageAdapter>(enc, dec);
      break;
    }
    case Kind::Fashion: {
      auto ae = load_stage_model(inv, "train", "autoencoder.bin");
      auto [enc, dec] = ae.split("latent");
      ctx.adapter = std::make_unique<ImageAdapter>(enc, dec);
      ctx.inputs.push_back("train/autoencoder.bin");
      break;
    }
    case Kind::Chess:
      ctx.adapter = std::make_unique<BoardAdapter>(load_stage_model(inv, "train", "legality.bin"));
      ctx.inputs.push_back("train/legality.bin");
      break;
  }
  std::sort(ctx.inputs.begin(), ctx.inputs.end());

  const auto& pool = ctx.data.split.test;
  const auto& m = c.maximise;
  if (!m.samples.empty()) {
    for (auto k : m.samples) {
      if (k >= pool.size())
        throw ConfigError("maximise sample " + std::to_string(k) + " is outside the held-out pool of " +
                          std::to_string(pool.size()));
      ctx.selected.push_back(k);
    }
    return ctx;
  }
  for (std::size_t k = 0; k < pool.size() && ctx.selected.size() < m.count; ++k) {
    if (m.concept_absent) {
      const auto i = pool[k];
      try {
        if (ctx.data.concept_fn.evaluate(unstack(ctx.data.inputs, i), ctx.data.label(i)) >= 0.5) continue;
      } catch (const Error&) {
        continue;  // the concept is undefined here, e.g. no queen on the board
      }
    }
    ctx.selected.push_back(k);
  }
  if (ctx.selected.empty()) throw Error("no eligible held-out samples to maximise");
  return ctx;
}

std::size_t count_ones(const Tensor& t) {
  std::size_t n = 0;
  for (double v : t.data()) n += v == 1.0;
  return n;
}

std::vector<unsigned char> quantize(const Tensor& image) {
  std::vector<unsigned char> out;
  for (double v : image.data()) out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255)));
  return out;
}

SampleRun run_one(const MaximiseContext& ctx, std::size_t pool_index, double lambda2) {
  const auto& c = ctx.config;
  SampleRun run;
  run.pool_index = pool_index;
  run.data_index = ctx.data.split.test[pool_index];
  run.sample = unstack(ctx.data.inputs, run.data_index);
  const auto label = ctx.data.label(run.data_index);
  try {
    run.concept_before = ctx.data.concept_fn.evaluate(run.sample, label);
  } catch (const Error&) {
    run.concept_before = NAN;
  }
  run.config = c.maximise.config;
  run.config.lambda2 = lambda2;
  run.config.seed = c.seed + pool_index;
  if (c.maximise.target_offset)
    run.config.target = ctx.probe.predict(ctx.model.activations_at(ctx.probe.tap, run.sample)) +
                        *c.maximise.target_offset;
  run.result = maximise(ctx.model, ctx.probe, *ctx.adapter, run.sample, run.config);
  const auto& after = run.result.perturbed;

  switch (c.pipeline) {
    case Kind::Toy:
    case Kind::Housing:
    case Kind::Fashion:
      run.concept_after = ctx.data.concept_fn.evaluate(after, label);
      break;
    case Kind::Digits:
      break;  // loopiness is a property of the digit's label, not of the pixels
    case Kind::Chess: {
      const auto b = board::Board::decode(after);
      run.legal_after = board::is_legal(b);
      try {
        run.concept_after = board::queen_threat(b);
      } catch (const Error&) {
        run.concept_after = 0.0;  // the queen is gone, so it is not threatened
      }
      if (run.result.status != RunStatus::Diverged) {
        const auto masks =
            static_cast<const BoardAdapter&>(*ctx.adapter).effective_masks(run.sample, run.result.perturbation);
        run.pieces_added = count_ones(masks.add);
        run.pieces_removed = count_ones(masks.remove);
      }
      break;
    }
  }
  if (c.pipeline == Kind::Digits || c.pipeline == Kind::Fashion) {
    const auto recon = static_cast<const ImageAdapter&>(*ctx.adapter).reconstruct(run.sample);
    const auto a = quantize(recon), b = quantize(after);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
    run.pixels_changed = changed;
  }
  return run;
}

std::string sample_name(const SampleRun& run) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%03zu", run.pool_index);
  return buf;
}

std::string board_artifact(const board::Board& b, const std::string& manifest, const Model& classifier,
                           const std::vector<std::string>& extra) {
  std::string out = "# manifest: " + manifest + "\n";
  const auto violations = board::legality_violations(b);
  out += std::string("# legal: ") + (violations.empty() ? "yes" : "no") + "\n";
  for (const auto& v : violations) out += "# violation: " + v + "\n";
  std::string threat;
  try {
    threat = board::queen_threat(b) > 0.5 ? "yes" : "no";
  } catch (const Error&) {
    threat = "no queen";
  }
  out += "# queen threatened: " + threat + "\n";
  out += "# classifier P(illegal): " + fmt(illegality_score(classifier, b.encode())) + "\n";
  for (const auto& line : extra) out += "# " + line + "\n";
  return out + b.to_text();
}

std::vector<std::string> mask_lines(const Tensor& mask, const char* verb) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 1.0) continue;
    const auto plane = i / board::kSquares;
    const int sq = static_cast<int>(i % board::kSquares);
    lines.push_back(std::string(verb) + " " + board::piece_char(board::piece_of_plane(plane)) +
                    board::square_name(sq));
  }
  return lines;
}

void write_runs(ArtifactDir& dir, const std::string& prefix, const MaximiseContext& ctx,
                const std::vector<SampleRun>& runs) {
  const auto& c = ctx.config;
  const bool tabular = c.pipeline == Kind::Toy || c.pipeline == Kind::Housing;
  const bool images = c.pipeline == Kind::Digits || c.pipeline == Kind::Fashion;
  const bool boards = c.pipeline == Kind::Chess;
  const auto ref = [&](const std::string& name) { return ArtifactDir::manifest_path_from(prefix + name); };

  std::string summary = "# manifest: " + ref("summary.csv") + "\n";
  summary += "sample,data_index,status,steps,target,initial_probe,final_probe,distance,concept_before,concept_after";
  if (images) summary += ",pixels_changed";
  if (boards) summary += ",legal_after,added,removed";
  summary += "\n";

  std::string deltas;
  if (tabular) {
    deltas = "# manifest: " + ref("deltas.csv") + "\n# deltas in original feature units\nsample,status,probe_before,probe_after";
    if (c.pipeline == Kind::Housing)
      for (const auto& f : kHousingFeatures) deltas += "," + f;
    else
      deltas += ",x0,x1";
    deltas += "\n";
  }

  for (const auto& run : runs) {
    const auto name = sample_name(run);
    const auto& r = run.result;
    ordered_json report = ordered_json::parse(run_report_json(r, run.config, run.sample));
    ordered_json j;
    j["manifest"] = ref(name + ".json");
    j["sample"] = run.pool_index;
    j["data_index"] = run.data_index;
    j["concept_before"] = number(run.concept_before);
    j["concept_after"] = optional_json(run.concept_after);
    if (run.pixels_changed) j["pixels_changed"] = *run.pixels_changed;
    if (run.legal_after) j["legal_after"] = *run.legal_after;
    for (auto& [key, value] : report.items()) j[key] = value;

    summary += std::to_string(run.pool_index) + "," + std::to_string(run.data_index) + "," +
               status_name(r.status) + "," + std::to_string(r.trajectory.size()) + "," + fmt(run.config.target) +
               "," + fmt(r.initial_probe) + "," + fmt(r.probe_output) + "," + fmt(r.distance) + "," +
               fmt(run.concept_before) + "," + (run.concept_after ? fmt(*run.concept_after) : "");
    if (images) summary += "," + (run.pixels_changed ? std::to_string(*run.pixels_changed) : "");
    if (boards)
      summary += "," + std::string(run.legal_after ? (*run.legal_after ? "yes" : "no") : "") + "," +
                 (run.pieces_added ? std::to_string(*run.pieces_added) : "") + "," +
                 (run.pieces_removed ? std::to_string(*run.pieces_removed) : "");
    summary += "\n";

    if (tabular) {
      Tensor before = run.sample, after = r.perturbed;
      if (ctx.data.normalization) {
        const auto& n = *ctx.data.normalization;
        before = n.invert(before);
        after = n.invert(after);
      }
      deltas += std::to_string(run.pool_index) + "," + status_name(r.status) + "," + fmt(r.initial_probe) + "," +
                fmt(r.probe_output);
      for (std::size_t i = 0; i < before.size(); ++i) deltas += "," + fmt(after[i] - before[i]);
      deltas += "\n";
    }
    if (images) {
      const auto& adapter = static_cast<const ImageAdapter&>(*ctx.adapter);
      const auto caption = [&](const std::string& what) {
        return "manifest: " + ref(name + "_" + what + ".pgm") + "\n" + what + ", status " + status_name(r.status);
      };
      dir.write(prefix + name + "_original.pgm", format_pgm(run.sample, caption("original")));
      dir.write(prefix + name + "_reconstruction.pgm",
                format_pgm(adapter.reconstruct(run.sample), caption("reconstruction")));
      dir.write(prefix + name + "_maximised.pgm", format_pgm(r.perturbed, caption("maximised")));
    }
    if (boards) {
      const auto& adapter = static_cast<const BoardAdapter&>(*ctx.adapter);
      const auto before = board::Board::decode(run.sample), after = board::Board::decode(r.perturbed);
      std::vector<std::string> changes{"status: " + status_name(r.status)};
      if (r.status != RunStatus::Diverged) {
        const auto masks = adapter.effective_masks(run.sample, r.perturbation);
        for (auto& l : mask_lines(masks.remove, "removed")) changes.push_back(l);
        for (auto& l : mask_lines(masks.add, "added")) changes.push_back(l);
        ordered_json m;
        m["remove"] = masks.remove.data();
        m["add"] = masks.add.data();
        j["effective_masks"] = m;
      }
      dir.write(prefix + name + "_before.txt",
                board_artifact(before, ref(name + "_before.txt"), adapter.classifier(), {}));
      dir.write(prefix + name + "_after.txt",
                board_artifact(after, ref(name + "_after.txt"), adapter.classifier(), changes));
    }
    dir.write(prefix + name + ".json", j.dump(2) + "\n");
  }
  dir.write(prefix + "summary.csv", summary);
  if (tabular) dir.write(prefix + "deltas.csv", deltas);
}

}  // namespace

std::vector<SampleRun> run_maximise(const Config& c, const Invocation& inv) {
  const auto started = utc_timestamp();
  const auto ctx = load_context(c, inv);
  std::vector<SampleRun> runs;
  for (auto k : ctx.selected) runs.push_back(run_one(ctx, k, c.maximise.config.lambda2));
  ArtifactDir dir(stage_dir(inv, "maximise"));
  write_runs(dir, "", ctx, runs);
  dir.write_manifest(manifest_for("maximise", c, inv, ctx.inputs, started));
  return runs;
}

SweepSummary run_sweep(const Config& c, const Invocation& inv) {
  if (c.sweep_lambda2.empty()) throw ConfigError("config key 'sweep.lambda2' must not be empty");
  const auto started = utc_timestamp();
  const auto ctx = load_context(c, inv);
  ArtifactDir dir(stage_dir(inv, "sweep"));
  SweepSummary sweep;
  sweep.lambda2s = c.sweep_lambda2;
  std::string summary = "# manifest: " + std::string(kManifestName) + "\nlambda2,sample,status,final_probe,final_distance\n";
  for (std::size_t li = 0; li < c.sweep_lambda2.size(); ++li) {
    const double lambda2 = c.sweep_lambda2[li];
    std::vector<SampleRun> runs;
    for (auto k : ctx.selected) {
      try {
        runs.push_back(run_one(ctx, k, lambda2));
      } catch (const Error& e) {
        // A failed run is recorded; the remaining λ₂ values still run.
        SampleRun failed;
        failed.pool_index = k;
        failed.data_index = ctx.data.split.test[k];
        failed.sample = unstack(ctx.data.inputs, failed.data_index);
        failed.config = c.maximise.config;
        failed.config.lambda2 = lambda2;
        failed.result.status = RunStatus::Diverged;
        failed.result.message = e.what();
        failed.result.probe_output = NAN;
        failed.result.distance = NAN;
        failed.result.initial_probe = NAN;
        failed.result.perturbed = failed.sample;
        failed.concept_before = NAN;
        runs.push_back(std::move(failed));
      }
    }
    char prefix[64];
    std::snprintf(prefix, sizeof prefix, "lambda2_%02zu/", li);
    write_runs(dir, prefix, ctx, runs);
    for (const auto& run : runs)
      summary += fmt(lambda2) + "," + std::to_string(run.pool_index) + "," + status_name(run.result.status) + "," +
                 fmt(run.result.probe_output) + "," + fmt(run.result.distance) + "\n";
    sweep.runs.push_back(std::move(runs));
  }
  dir.write("summary.csv", summary);
  dir.write_manifest(manifest_for("sweep", c, inv, ctx.inputs, started));
  return sweep;
}

}  // namespace conceptbp::pipeline
