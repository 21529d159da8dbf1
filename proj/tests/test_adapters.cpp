#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "conceptbp/adapters.hpp"
#include "conceptbp/data.hpp"

using namespace conceptbp;
using conceptbp::testing::random_tensor;

namespace {

// A "classifier" whose score is exactly zero on every board.
Model zero_classifier() {
  Model m({11, 6, 6}, {Layer::flatten("flat"), Layer::dense("out", 1)}, 0);
  for (auto& p : m.parameters()) p.value.fill(0.0);
  return m;
}

std::size_t at(std::size_t plane, int sq) { return plane * 36 + static_cast<std::size_t>(sq); }

BoardMasks zero_masks() {
  return {Tensor(Shape{10, 6, 6}, 0.0), Tensor(Shape{10, 6, 6}, 0.0)};
}

}  // namespace

TEST_CASE("tabular combine and distance") {
  auto s = Tensor::vector({1, 2});
  CHECK(tabular_combine(s, Tensor::vector({0, 0})) == s);
  CHECK(tabular_distance(s, Tensor::vector({0, 0})) == 0.0);
  CHECK(tabular_combine(s, Tensor::vector({3, 4})) == Tensor::vector({4, 6}));
  CHECK(tabular_distance(s, Tensor::vector({3, 4})) == 5.0);
  CHECK_THROWS_AS(tabular_combine(s, Tensor::vector({1, 2, 3})), ShapeError);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_tensor(rng, {6});
    auto d = random_tensor(rng, {6});
    auto c = tabular_combine(a, d);
    double norm = 0.0;
    for (int i = 0; i < 6; ++i) {
      CHECK(std::abs(c[i] - (a[i] + d[i])) < 1e-12);
      norm += d[i] * d[i];
    }
    CHECK(std::abs(tabular_distance(a, d) - std::sqrt(norm)) < 1e-12);
    // Exactly linear in s*: combine(s, 2d) - combine(s, d) == d.
    Tensor d2 = d;
    for (auto& v : d2.data()) v *= 2;
    auto c2 = tabular_combine(a, d2);
    for (int i = 0; i < 6; ++i) CHECK(std::abs((c2[i] - c[i]) - d[i]) < 1e-12);
    CHECK(tabular_distance(a, d) > 0.0);
  }
}

TEST_CASE("image adapter at zero perturbation reproduces the reconstruction") {
  Model identity_enc({1, 4, 4}, {}, 0), identity_dec({1, 4, 4}, {}, 0);
  Rng rng(4);
  auto s = random_tensor(rng, {1, 4, 4});
  CHECK(image_distance(s, Tensor(Shape{1, 4, 4}, 0.0), identity_enc, identity_dec) == 0.0);
  CHECK(image_combine(s, Tensor(Shape{1, 4, 4}, 0.0), identity_enc, identity_dec) == s);

  Model enc({1, 4, 4}, {Layer::flatten("flat"), Layer::dense("z", 3)}, 5);
  Model dec({3}, {Layer::dense("up", 16), Layer::sigmoid("px"), Layer::reshape("img", {1, 4, 4})}, 6);
  ImageAdapter adapter(enc, dec);
  auto zero = adapter.zero_effect(s);
  auto recon = adapter.reconstruct(s);
  CHECK(adapter.combine(s, zero) == recon);
  double err = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) err += (recon[i] - s[i]) * (recon[i] - s[i]);
  CHECK(adapter.distance(s, zero) == doctest::Approx(err).epsilon(1e-14));
  CHECK_THROWS_AS(ImageAdapter(enc, enc), ShapeError);
  CHECK_THROWS_AS(adapter.combine(random_tensor(rng, {1, 5, 5}), zero), ShapeError);
}

TEST_CASE("moving a trained autoencoder's latent coordinate moves the image away") {
  auto digits = synthetic_digits(300, 7);
  Model ae({1, 28, 28},
           {Layer::flatten("flat"), Layer::dense("latent", 8), Layer::dense("up", 784), Layer::sigmoid("px"),
            Layer::reshape("img", {1, 28, 28})},
           8);
  auto batch = digits.batch(0, 300);
  TrainConfig cfg{.learning_rate = 1e-2, .batch_size = 30, .epochs = 80, .seed = 9};
  auto trained = train_supervised(ae, batch, batch, LossKind::SquaredError, cfg).model;
  auto [enc, dec] = trained.split("latent");
  ImageAdapter adapter(enc, dec);
  // E(s) is not the exact latent minimiser of the reconstruction error, so a
  // unit step occasionally lowers it; the decoded image must always change.
  int farther = 0, total = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& s = digits.images[k];
    const auto recon = adapter.reconstruct(s);
    const double baseline = adapter.distance(s, adapter.zero_effect(s));
    for (std::size_t j = 0; j < 8; ++j) {
      auto p = adapter.zero_effect(s);
      p["latent"][j] += 1.0;
      CHECK(max_abs_diff(adapter.combine(s, p), recon) > 1e-3);
      farther += adapter.distance(s, p) > baseline;
      ++total;
    }
  }
  CHECK(farther >= total * 9 / 10);
}

TEST_CASE("board combine examples") {
  using namespace board;
  auto start = Board::starting_position().encode();
  CHECK(board_combine(start, zero_masks()) == start);

  // Remove the white rook on a1.
  auto masks = zero_masks();
  const Piece rook{PieceType::Rook, Color::White};
  masks.remove[at(plane_of(rook), square(0, 0))] = 0.9;
  auto removed = Board::decode(board_combine(start, masks));
  CHECK_FALSE(removed.at(square(0, 0)).has_value());
  CHECK(removed.occupied() == 23);

  // A removal mask over an empty square or the wrong plane does nothing.
  auto stray = zero_masks();
  stray.remove[at(plane_of(rook), square(0, 2))] = 0.9;
  stray.remove[at(plane_of(Piece{PieceType::Queen, Color::White}), square(0, 0))] = 0.9;
  CHECK(board_combine(start, stray) == start);

  // Additions onto occupied squares are suppressed.
  auto onto = zero_masks();
  onto.add[at(plane_of(Piece{PieceType::Queen, Color::Black}), square(3, 0))] = 0.9;
  CHECK(board_combine(start, onto) == start);

  // ...but allowed once the occupant is removed, and on vacant squares.
  onto.remove[at(plane_of(Piece{PieceType::King, Color::White}), square(3, 0))] = 0.9;
  onto.add[at(plane_of(rook), square(2, 3))] = 0.7;
  onto.add[at(plane_of(Piece{PieceType::Knight, Color::Black}), square(2, 3))] = 0.8;
  auto swapped = Board::decode(board_combine(start, onto));
  CHECK(swapped.at(square(3, 0)) == Piece{PieceType::Queen, Color::Black});
  CHECK(swapped.at(square(2, 3)) == Piece{PieceType::Knight, Color::Black});  // the stronger activation wins

  CHECK_THROWS_AS(board_combine(Tensor(Shape{11, 6, 6}, 1.0), zero_masks()), FormatError);
}

TEST_CASE("board distance examples") {
  using namespace board;
  auto start = Board::starting_position().encode();
  CHECK(board_distance(start, zero_masks(), zero_classifier()) == 0.0);

  auto classifier = legality_architecture(3);
  CHECK(board_distance(start, zero_masks(), classifier) == doctest::Approx(illegality_score(classifier, start)));

  auto masks = zero_masks();
  masks.remove[at(plane_of(Piece{PieceType::Pawn, Color::White}), square(4, 1))] = 1.0;
  masks.add[at(plane_of(Piece{PieceType::Knight, Color::White}), square(4, 3))] = 1.0;
  CHECK(board_distance(start, masks, zero_classifier()) == 2.0);
}

TEST_CASE("board combine keeps every encoding one-hot-or-empty (10k random mask pairs)") {
  using namespace board;
  BoardAdapter adapter(zero_classifier());
  auto boards = generate_boards(100, 31);
  Rng rng(37);
  std::size_t changed = 0;
  for (const auto& b : boards) {
    const auto s = b.encode();
    Graph g;
    auto em = adapter.emit(g, s);
    g.mark_output("combined", em.combined);
    for (int trial = 0; trial < 100; ++trial) {
      // Mix of sparse and dense raw masks, including values straddling 0.5.
      const double density = rng.uniform(0.0, 1.0);
      Perturbation p;
      for (const char* name : {BoardAdapter::kRemove, BoardAdapter::kAdd}) {
        Tensor raw(Shape{10, 6, 6});
        for (auto& v : raw.data()) v = rng.bernoulli(density) ? rng.uniform(0.0, 1.5) : rng.uniform(-1.0, 0.5);
        p[name] = raw;
      }
      auto out = evaluate(g, p).at("combined").reshaped({11, 6, 6});
      Board after = Board::decode(out);  // throws if not binary or multi-hot
      CHECK(after.side_to_move() == b.side_to_move());
      auto eff = adapter.effective_masks(s, p);
      for (std::size_t i = 0; i < eff.remove.size(); ++i) {
        REQUIRE((eff.remove[i] == 0.0 || eff.remove[i] == 1.0));
        REQUIRE((eff.add[i] == 0.0 || eff.add[i] == 1.0));
        if (eff.remove[i] == 1.0) REQUIRE(s[i] == 1.0);
      }
      for (int sq = 0; sq < kSquares; ++sq) {
        double adds = 0.0;
        for (std::size_t plane = 0; plane < 10; ++plane) adds += eff.add[at(plane, sq)];
        REQUIRE(adds <= 1.0);
        if (adds == 1.0) {
          double remaining = 0.0;
          for (std::size_t plane = 0; plane < 10; ++plane) remaining += s[at(plane, sq)] - eff.remove[at(plane, sq)];
          REQUIRE(remaining == 0.0);
        }
      }
      changed += !(out == s);
    }
  }
  CHECK(changed > 5000);
}

TEST_CASE("mask gradients pass straight through the binarization") {
  using namespace board;
  BoardAdapter adapter(legality_architecture(5));
  auto s = generate_boards(1, 41)[0].encode();
  Graph g;
  auto em = adapter.emit(g, s);
  g.mark_output("d", em.distance);
  auto grads = gradient(g, adapter.zero_effect(s), {BoardAdapter::kRemove, BoardAdapter::kAdd}, "d");
  // d‖s⁻‖₁/d raw⁻ is 1 wherever a piece stands (plus the classifier's share).
  double nonzero = 0.0;
  for (double v : grads.at(BoardAdapter::kRemove).data()) nonzero += v != 0.0;
  CHECK(nonzero > 0);
  for (double v : grads.at(BoardAdapter::kAdd).data()) CHECK(std::isfinite(v));
}

TEST_CASE("legality classifier separates a duplicated pair") {
  using namespace board;
  auto legal_board = generate_boards(1, 43)[0];
  Rng rng(44);
  auto illegal = corrupt(legal_board, Corruption::ExtraKing, rng);
  std::vector<Tensor> legal_rows(8, legal_board.encode()), illegal_rows(8, illegal);
  TrainConfig cfg{.learning_rate = 1e-2, .batch_size = 4, .epochs = 30, .seed = 45};
  auto fit = train_legality_classifier(stack(legal_rows), stack(illegal_rows), cfg);
  CHECK(illegality_score(fit.model, legal_board.encode()) < 0.5);
  CHECK(illegality_score(fit.model, illegal) > 0.5);
  CHECK(fit.held_out_accuracy == 1.0);
  CHECK_FALSE(fit.warning.has_value());
}
