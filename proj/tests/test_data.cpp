#include <cmath>

#include "doctest.h"
#include "conceptbp/data.hpp"

using namespace conceptbp;

namespace {

std::string csv_header() { return "MedInc,HAge,AveRms,AveBedrms,Pop,AveOcp,Target\n"; }

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 8) & 0xff),
          static_cast<char>(v & 0xff)};
}

}  // namespace

TEST_CASE("two-row CSV statistics match hand arithmetic") {
  auto data = parse_tabular_csv(csv_header() + "1,10,4,1,100,2,1.5\n3,30,6,2,300,4,2.5\n");
  REQUIRE(data.size() == 2);
  CHECK(data.target == std::vector<double>{1.5, 2.5});
  auto n = normalize(data);
  REQUIRE(n.normalization);
  CHECK(n.normalization->mean == std::vector<double>{2, 20, 5, 1.5, 200, 3});
  CHECK(n.normalization->std == std::vector<double>{1, 10, 1, 0.5, 100, 1});
  CHECK(n.rows[0] == std::vector<double>{-1, -1, -1, -1, -1, -1});
  CHECK(n.target == data.target);
}

TEST_CASE("constant column is clamped to unit std and normalizes to zero") {
  auto data = parse_tabular_csv(csv_header() + "1,7,4,1,100,2,1\n3,7,6,2,300,4,2\n5,7,1,1,5,3,3\n");
  auto n = normalize(data);
  CHECK(n.normalization->std[1] == 1.0);
  for (const auto& r : n.rows) CHECK(r[1] == 0.0);
}

TEST_CASE("normalize is idempotent and invertible") {
  auto data = synthetic_housing(300, 4);
  auto once = normalize(data);
  auto twice = normalize(once);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(std::abs(twice.rows[i][j] - once.rows[i][j]) < 1e-9);
      CHECK(std::abs(denormalize(once).rows[i][j] - data.rows[i][j]) < 1e-9);
      CHECK(std::abs(denormalize(twice).rows[i][j] - data.rows[i][j]) < 1e-9);
    }
  auto row = data.features_tensor();
  auto first = Tensor::vector({row[0], row[1], row[2], row[3], row[4], row[5]});
  CHECK(max_abs_diff(once.normalization->invert(once.normalization->apply(first)), first) < 1e-12);
}

TEST_CASE("CSV errors name the problem") {
  CHECK_THROWS_WITH_AS(parse_tabular_csv("MedInc,HAge,AveRms,AveBedrms,Pop,Target\n1,2,3,4,5,6\n"),
                       doctest::Contains("AveOcp"), FormatError);
  CHECK_THROWS_WITH_AS(parse_tabular_csv(csv_header() + "1,2,3,abc,5,6,7\n"), doctest::Contains("AveBedrms"),
                       FormatError);
  CHECK_THROWS_AS(parse_tabular_csv(csv_header() + "1,2,3\n"), FormatError);
  auto data = synthetic_housing(20, 1);
  auto back = parse_tabular_csv(format_tabular_csv(data));
  CHECK(back.rows == data.rows);
  CHECK(back.target == data.target);
}

TEST_CASE("bedrooms ratio concept") {
  auto row = [](double bedrooms, double occupancy) { return Tensor::vector({3, 20, 5, bedrooms, 900, occupancy}); };
  CHECK(concept_bedrooms_ratio(row(1, 1)) == 1.0);
  CHECK(concept_bedrooms_ratio(row(0, 3)) == 0.0);
  CHECK(concept_bedrooms_ratio(row(2, 4)) == 0.5);
  CHECK_THROWS_AS(concept_bedrooms_ratio(row(1, 0)), Error);

  auto data = normalize(synthetic_housing(50, 2));
  auto concept_fn = bedrooms_ratio_concept(*data.normalization);
  auto original = denormalize(data);
  auto s = Tensor::vector({data.rows[7][0], data.rows[7][1], data.rows[7][2], data.rows[7][3], data.rows[7][4],
                           data.rows[7][5]});
  CHECK(concept_fn.evaluate(s, std::nullopt) ==
        doctest::Approx(original.rows[7][kAveBedrms] / original.rows[7][kAveOcp]).epsilon(1e-12));
}

TEST_CASE("synthetic housing is seeded and plausible") {
  auto a = synthetic_housing(500, 9);
  CHECK(a.rows == synthetic_housing(500, 9).rows);
  CHECK_FALSE(a.rows == synthetic_housing(500, 10).rows);
  for (const auto& r : a.rows) {
    CHECK(r[kAveOcp] >= 1.0);
    CHECK(r[kAveBedrms] > 0.0);
    CHECK(r[kAveBedrms] < r[2]);
  }
}

TEST_CASE("hand-built IDX fixture parses to known pixels") {
  std::string images = be32(0x803) + be32(2) + be32(2) + be32(3);
  for (int v : {0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6}) images += static_cast<char>(v);
  std::string labels = be32(0x801) + be32(2) + std::string{7, 0};
  auto data = parse_idx(images, labels);
  REQUIRE(data.size() == 2);
  CHECK(data.rows == 2);
  CHECK(data.cols == 3);
  CHECK(data.labels == std::vector<int>{7, 0});
  CHECK(data.images[0].shape() == Shape{1, 2, 3});
  CHECK(data.images[0][1] == 1.0);
  CHECK(data.images[0][2] == 0.2);
  CHECK(data.images[1][5] == 6.0 / 255.0);
  auto [img_out, lbl_out] = emit_idx(data);
  CHECK(img_out == images);
  CHECK(lbl_out == labels);

  auto empty = parse_idx(be32(0x803) + be32(0) + be32(28) + be32(28), be32(0x801) + be32(0));
  CHECK(empty.size() == 0);

  CHECK_THROWS_AS(parse_idx(images, be32(0x801) + be32(3) + std::string{1, 2, 3}), FormatError);
  CHECK_THROWS_AS(parse_idx(images.substr(0, images.size() - 1), labels), FormatError);
  CHECK_THROWS_AS(parse_idx(labels, labels), FormatError);
  CHECK_THROWS_AS(parse_idx(images.substr(0, 10), labels), FormatError);
}

TEST_CASE("IDX round-trips synthetic data byte-identically") {
  auto digits = synthetic_digits(40, 3);
  auto [img, lbl] = emit_idx(digits);
  auto back = parse_idx(img, lbl);
  auto [img2, lbl2] = emit_idx(back);
  CHECK(img2 == img);
  CHECK(lbl2 == lbl);
  CHECK(back.labels == digits.labels);
}

TEST_CASE("loopiness follows the closed-loop digits") {
  CHECK(concept_loopiness(8) == 1.0);
  CHECK(concept_loopiness(1) == 0.0);
  CHECK(concept_loopiness(9) == 1.0);
  CHECK(concept_loopiness(0) == 1.0);
  CHECK(concept_loopiness(6) == 1.0);
  for (int d : {2, 3, 4, 5, 7}) CHECK(concept_loopiness(d) == 0.0);
  CHECK_THROWS_AS(concept_loopiness(10), Error);
  CHECK_THROWS_AS(loopiness_concept().evaluate(Tensor(), std::nullopt), Error);
}

TEST_CASE("lightness counts pixels above the threshold") {
  CHECK(concept_lightness(Tensor(Shape{1, 28, 28}, 0.0)) == 0.0);
  CHECK(concept_lightness(Tensor(Shape{1, 28, 28}, 1.0)) == 1.0);
  Tensor half(Shape{1, 28, 28}, 0.0);
  for (std::size_t i = 0; i < half.size() / 2; ++i) half[i] = 0.9;
  CHECK(concept_lightness(half) == 0.5);
  Tensor edge(Shape{1, 2, 2}, {0.3, 0.3000001, 0.0, 1.0});
  CHECK(concept_lightness(edge) == 0.5);
}

TEST_CASE("synthetic image sets are seeded, balanced and in range") {
  for (auto* make : {&synthetic_digits, &synthetic_fashion}) {
    auto a = make(200, 5);
    auto b = make(200, 5);
    CHECK(a.labels == b.labels);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i] == b.images[i]);
    std::vector<int> counts(10, 0);
    for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
    for (int c : counts) CHECK(c == 20);
    for (const auto& img : a.images) {
      double total = 0.0;
      for (double v : img.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(total > 10.0);
    }
    CHECK(a.batch(0, 8).shape() == Shape{8, 1, 28, 28});
  }
  // Lightness actually varies across the fashion set.
  auto f = synthetic_fashion(200, 6);
  double lo = 1.0, hi = 0.0;
  for (const auto& img : f.images) {
    lo = std::min(lo, concept_lightness(img));
    hi = std::max(hi, concept_lightness(img));
  }
  CHECK(lo < 0.1);
  CHECK(hi > 0.5);
}

TEST_CASE("board dataset and queen threat concept") {
  auto data = generate_board_dataset(30, 2);
  CHECK(data.encodings().shape() == Shape{30, 11, 6, 6});
  CHECK(data.auxiliary().shape() == Shape{30, board::kAuxTargets});
  auto concept_fn = queen_threat_concept();
  for (const auto& b : data.boards) {
    if (b.find({board::PieceType::Queen, b.side_to_move()}).empty())
      CHECK_THROWS_AS(concept_fn.evaluate(b.encode(), std::nullopt), Error);
    else
      CHECK(concept_fn.evaluate(b.encode(), std::nullopt) == board::queen_threat(b));
  }
}
