#include "conceptbp/data.hpp"

namespace conceptbp {

Tensor BoardDataset::encodings() const {
  if (boards.empty()) throw Error("board dataset is empty");
  std::vector<Tensor> planes;
  planes.reserve(boards.size());
  for (const auto& b : boards) planes.push_back(b.encode());
  return stack(planes);
}

Tensor BoardDataset::auxiliary() const {
  if (boards.empty()) throw Error("board dataset is empty");
  std::vector<Tensor> rows;
  rows.reserve(boards.size());
  for (const auto& b : boards) rows.push_back(board::auxiliary_targets(b));
  return stack(rows);
}

BoardDataset generate_board_dataset(std::size_t n, std::uint64_t seed, const board::GenerateOptions& options) {
  return {board::generate_boards(n, seed, options)};
}

ConceptFunction queen_threat_concept() {
  return {"queen_threat", ConceptKind::Binary, [](const Tensor& planes, std::optional<int>) {
            return board::queen_threat(board::Board::decode(planes));
          }};
}

Model chess_architecture(std::uint64_t seed) {
  return Model({board::kPlanes, board::kSize, board::kSize},
               {Layer::conv2d("conv1", 8, 3), Layer::relu("conv1_relu"), Layer::conv2d("conv2", 8, 3),
                Layer::relu("conv2_relu"), Layer::flatten("flat"), Layer::dense("hidden", 64),
                Layer::relu("hidden_relu"), Layer::dense("aux", board::kAuxTargets)},
               seed);
}

ChessModelFit train_chess_model(const BoardDataset& data, const TrainConfig& config) {
  config.validate();
  const auto inputs = data.encodings();
  const auto targets = data.auxiliary();
  const auto split = holdout_split(data.boards.size(), config.seed);
  auto outcome = train_supervised(chess_architecture(config.seed), gather_rows(inputs, split.train),
                                  gather_rows(targets, split.train), LossKind::SquaredError, config);
  const double held_out = evaluate_loss(outcome.model, gather_rows(inputs, split.test),
                                        gather_rows(targets, split.test), LossKind::SquaredError);
  return {std::move(outcome.model), std::move(outcome.loss_curve), held_out};
}

}  // namespace conceptbp
