#include "conceptbp/adapters.hpp"

#include <algorithm>
#include <cmath>

namespace conceptbp {

namespace {

Shape batched(const Shape& s) {
  Shape out{1};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Evaluates the adapter's combine and distance for one perturbation.
std::pair<Tensor, double> evaluate_adapter(const ModalityAdapter& adapter, const Tensor& s,
                                           const Perturbation& perturbation) {
  Graph g;
  auto em = adapter.emit(g, s);
  g.mark_output("combined", em.combined);
  g.mark_output("distance", em.distance);
  Bindings b;
  for (const auto& [name, shape] : adapter.perturbation_shape(s)) {
    auto it = perturbation.find(name);
    if (it == perturbation.end()) throw Error("perturbation is missing '" + name + "'");
    if (it->second.shape() != shape)
      throw ShapeError("perturbation '" + name + "' must be " + shape_string(shape) + ", got " +
                       shape_string(it->second.shape()));
    b[name] = it->second;
  }
  auto out = evaluate(g, b);
  const auto& combined = out.at("combined");
  Shape sample(combined.shape().begin() + 1, combined.shape().end());
  return {combined.reshaped(sample), out.at("distance").item()};
}

Tensor piece_planes(const Tensor& s) {
  Tensor t(Shape{board::kPiecePlanes, board::kSize, board::kSize});
  std::copy_n(s.values().begin(), t.size(), t.data().begin());
  return t;
}

Tensor side_plane(const Tensor& s) {
  Tensor t(Shape{1, board::kSize, board::kSize});
  std::copy_n(s.values().begin() + static_cast<long>(board::kPiecePlanes * board::kSquares), t.size(),
              t.data().begin());
  return t;
}

Tensor canonical_board(const Tensor& s) {
  Shape expected{board::kPlanes, board::kSize, board::kSize};
  Tensor t = s.rank() == 4 && s.dim(0) == 1 ? s.reshaped(expected) : s;
  if (t.shape() != expected) throw ShapeError("board encoding must be [11,6,6], got " + shape_string(s.shape()));
  board::Board::decode(t);  // throws FormatError on invalid encodings
  return t;
}

}  // namespace

Perturbation ModalityAdapter::zero_effect(const Tensor& s) const {
  Perturbation p;
  for (const auto& [name, shape] : perturbation_shape(s)) p[name] = Tensor(shape, 0.0);
  return p;
}

Perturbation ModalityAdapter::init(const Tensor& s, Rng& rng, double noise) const {
  auto p = zero_effect(s);
  for (auto& [name, t] : p)
    for (auto& v : t.data()) v += rng.uniform(-noise, noise);
  return p;
}

Tensor ModalityAdapter::combine(const Tensor& s, const Perturbation& perturbation) const {
  return evaluate_adapter(*this, s, perturbation).first;
}

double ModalityAdapter::distance(const Tensor& s, const Perturbation& perturbation) const {
  return evaluate_adapter(*this, s, perturbation).second;
}

// ---- tabular ---------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> TabularAdapter::perturbation_shape(const Tensor& s) const {
  if (s.size() != dimension_)
    throw ShapeError("tabular sample must have " + std::to_string(dimension_) + " features, got " +
                     shape_string(s.shape()));
  return {{"delta", s.shape()}};
}

AdapterEmission TabularAdapter::emit(Graph& g, const Tensor& s) const {
  perturbation_shape(s);
  auto base = g.constant(s, "sample");
  auto delta = g.parameter("delta", Tensor(s.shape(), 0.0));
  auto combined = g.reshape(g.add(base, delta), batched(s.shape()));
  return {combined, g.l2_norm(delta)};
}

Tensor tabular_combine(const Tensor& s, const Tensor& delta) {
  return TabularAdapter(s.size()).combine(s, {{"delta", delta}});
}

double tabular_distance(const Tensor& s, const Tensor& delta) {
  return TabularAdapter(s.size()).distance(s, {{"delta", delta}});
}

// ---- image -----------------------------------------------------------------

ImageAdapter::ImageAdapter(Model encoder, Model decoder) : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  if (encoder_.output_shape() != decoder_.input_shape())
    throw ShapeError("encoder output " + shape_string(encoder_.output_shape()) + " does not match decoder input " +
                     shape_string(decoder_.input_shape()));
  if (decoder_.output_shape() != encoder_.input_shape())
    throw ShapeError("decoder output " + shape_string(decoder_.output_shape()) + " does not match encoder input " +
                     shape_string(encoder_.input_shape()));
}

std::vector<std::pair<std::string, Shape>> ImageAdapter::perturbation_shape(const Tensor& s) const {
  if (s.shape() != encoder_.input_shape())
    throw ShapeError("image sample must be " + shape_string(encoder_.input_shape()) + ", got " +
                     shape_string(s.shape()));
  return {{"latent", encoder_.output_shape()}};
}

AdapterEmission ImageAdapter::emit(Graph& g, const Tensor& s) const {
  perturbation_shape(s);
  const Tensor batch = s.reshaped(batched(s.shape()));
  auto z0 = g.constant(encoder_.forward(batch), "embedding");
  auto delta = g.parameter("latent", Tensor(encoder_.output_shape(), 0.0));
  auto z = g.add(z0, g.reshape(delta, batched(encoder_.output_shape())));
  auto decoded = decoder_.emit(g, z, false, "decoder.").output;
  auto original = g.constant(batch, "sample");
  return {decoded, g.l2_norm_sq(g.sub(decoded, original))};
}

Tensor ImageAdapter::reconstruct(const Tensor& s) const {
  const Tensor batch = s.reshaped(batched(s.shape()));
  return decoder_.forward(encoder_.forward(batch)).reshaped(s.shape());
}

Tensor image_combine(const Tensor& s, const Tensor& latent_delta, const Model& encoder, const Model& decoder) {
  return ImageAdapter(encoder, decoder).combine(s, {{"latent", latent_delta}});
}

double image_distance(const Tensor& s, const Tensor& latent_delta, const Model& encoder, const Model& decoder) {
  return ImageAdapter(encoder, decoder).distance(s, {{"latent", latent_delta}});
}

// ---- board -----------------------------------------------------------------

BoardAdapter::BoardAdapter(Model legality_classifier) : classifier_(std::move(legality_classifier)) {
  if (classifier_.input_shape() != Shape{board::kPlanes, board::kSize, board::kSize})
    throw ShapeError("legality classifier must take [11,6,6] boards");
  if (shape_size(classifier_.output_shape()) != 1) throw ShapeError("legality classifier must output one score");
}

std::vector<std::pair<std::string, Shape>> BoardAdapter::perturbation_shape(const Tensor& s) const {
  canonical_board(s);
  const Shape masks{board::kPiecePlanes, board::kSize, board::kSize};
  return {{kRemove, masks}, {kAdd, masks}};
}

namespace {

struct BoardNodes {
  NodeId combined, removed, added;
};

BoardNodes emit_board_combine(Graph& g, const Tensor& s) {
  const Tensor t = canonical_board(s);
  const Shape masks{board::kPiecePlanes, board::kSize, board::kSize};
  auto pieces = g.constant(piece_planes(t), "pieces");
  auto side = g.constant(side_plane(t), "side");
  auto raw_remove = g.parameter(BoardAdapter::kRemove, Tensor(masks, 0.0));
  auto raw_add = g.parameter(BoardAdapter::kAdd, Tensor(masks, 0.0));
  // Removals only where a piece stands; additions only on squares left vacant,
  // one plane per square.
  auto removed = g.mul(g.binarize(raw_remove), pieces);
  auto after = g.sub(pieces, removed);
  auto occupied = g.repeat_planes(g.sum_planes(after), board::kPiecePlanes);
  auto vacant = g.add_scalar(g.scale(occupied, -1.0), 1.0);
  auto added = g.mul(g.plane_argmax_binarize(raw_add), vacant);
  auto combined = g.reshape(g.concat(g.add(after, added), side), {1, board::kPlanes, board::kSize, board::kSize});
  return {combined, removed, added};
}

}  // namespace

AdapterEmission BoardAdapter::emit(Graph& g, const Tensor& s) const {
  auto nodes = emit_board_combine(g, s);
  auto score = g.reshape(classifier_.emit(g, nodes.combined, false, "legality.").output, {1});
  auto mass = g.add(g.l1_norm(nodes.added), g.l1_norm(nodes.removed));
  return {nodes.combined, g.add(score, mass)};
}

EffectiveMasks BoardAdapter::effective_masks(const Tensor& s, const Perturbation& perturbation) const {
  Graph g;
  auto nodes = emit_board_combine(g, s);
  g.mark_output("remove", nodes.removed);
  g.mark_output("add", nodes.added);
  auto out = evaluate(g, perturbation);
  return {out.at("remove"), out.at("add")};
}

Perturbation board_perturbation(const BoardMasks& masks) {
  return {{BoardAdapter::kRemove, masks.remove}, {BoardAdapter::kAdd, masks.add}};
}

Tensor board_combine(const Tensor& s, const BoardMasks& masks) {
  Graph g;
  auto nodes = emit_board_combine(g, s);
  g.mark_output("combined", nodes.combined);
  return evaluate(g, board_perturbation(masks)).at("combined").reshaped({board::kPlanes, board::kSize, board::kSize});
}

double board_distance(const Tensor& s, const BoardMasks& masks, const Model& classifier) {
  return BoardAdapter(classifier).distance(s, board_perturbation(masks));
}

Model legality_architecture(std::uint64_t seed) {
  return Model({board::kPlanes, board::kSize, board::kSize},
               {Layer::conv2d("conv1", 32, 3), Layer::relu("conv1_relu"), Layer::conv2d("conv2", 32, 3),
                Layer::relu("conv2_relu"), Layer::conv2d("conv3", 32, 3), Layer::relu("conv3_relu"),
                Layer::rowsum("ranks"), Layer::flatten("flat"), Layer::dense("hidden", 64),
                Layer::relu("hidden_relu"), Layer::dense("logit", 1), Layer::sigmoid("illegal")},
               seed);
}

LegalityFit train_legality_classifier(const Tensor& legal, const Tensor& illegal, const TrainConfig& config,
                                     std::optional<Model> initial, bool symmetries) {
  config.validate();
  const Shape sample{board::kPlanes, board::kSize, board::kSize};
  for (const auto* t : {&legal, &illegal})
    if (t->rank() != 4 || Shape(t->shape().begin() + 1, t->shape().end()) != sample)
      throw ShapeError("legality training data must be [N,11,6,6], got " + shape_string(t->shape()));
  const std::size_t n_legal = legal.dim(0), n_illegal = illegal.dim(0);

  std::vector<Tensor> rows;
  std::vector<double> labels;
  for (std::size_t i = 0; i < n_legal; ++i) {
    rows.push_back(unstack(legal, i));
    labels.push_back(0.0);
  }
  for (std::size_t i = 0; i < n_illegal; ++i) {
    rows.push_back(unstack(illegal, i));
    labels.push_back(1.0);
  }
  const Tensor inputs = stack(rows);
  const Tensor targets(Shape{labels.size(), 1}, labels);
  const auto split = holdout_split(labels.size(), config.seed);

  if (initial && (initial->input_shape() != sample || initial->output_shape() != Shape{1}))
    throw ShapeError("legality classifier must map [11,6,6] to a single score");
  LegalityFit fit{initial ? std::move(*initial) : legality_architecture(config.seed), {}, 0.0, split.test.size(),
                  std::nullopt};
  const double ratio = static_cast<double>(std::max(n_legal, n_illegal)) / static_cast<double>(std::min(n_legal, n_illegal));
  if (ratio > 100.0) fit.warning = "class imbalance " + std::to_string(ratio) + ":1 exceeds 100:1";

  std::vector<Tensor> train_rows;
  std::vector<double> train_labels;
  for (auto i : split.train) {
    train_rows.push_back(rows[i]);
    train_labels.push_back(labels[i]);
    if (!symmetries) continue;
    const auto swapped = board::swap_colours(rows[i]);
    for (const auto& t : {board::mirror_files(rows[i]), swapped, board::mirror_files(swapped)}) {
      train_rows.push_back(t);
      train_labels.push_back(labels[i]);
    }
  }
  auto outcome = train_supervised(fit.model, stack(train_rows), Tensor(Shape{train_labels.size(), 1}, train_labels),
                                  LossKind::BinaryCrossEntropy, config);
  fit.model = std::move(outcome.model);
  fit.loss_curve = std::move(outcome.loss_curve);
  const auto scores = predict_batched(fit.model, gather_rows(inputs, split.test));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.test.size(); ++i)
    correct += (scores[i] > 0.5) == (labels[split.test[i]] == 1.0);
  fit.held_out_accuracy = static_cast<double>(correct) / static_cast<double>(split.test.size());
  return fit;
}

double illegality_score(const Model& classifier, const Tensor& planes) {
  return classifier.forward(canonical_board(planes).reshaped({1, board::kPlanes, board::kSize, board::kSize})).item();
}

}  // namespace conceptbp
