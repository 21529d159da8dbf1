#include <algorithm>
#include <cmath>

#include "conceptbp/data.hpp"
#include "conceptbp/io.hpp"
#include "conceptbp/random.hpp"

namespace conceptbp {

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    auto cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

Normalization fit_statistics(const std::vector<std::vector<double>>& rows, std::size_t dim) {
  Normalization n{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  if (rows.empty()) return n;
  const double count = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[j];
    mean /= count;
    double var = 0.0;
    for (const auto& r : rows) var += (r[j] - mean) * (r[j] - mean);
    const double sd = std::sqrt(var / count);
    n.mean[j] = mean;
    n.std[j] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

}  // namespace

Tensor Normalization::apply(const Tensor& row) const {
  if (row.size() != mean.size()) throw ShapeError("normalization expects " + std::to_string(mean.size()) + " features");
  Tensor out = row;
  for (std::size_t j = 0; j < mean.size(); ++j) out[j] = (row[j] - mean[j]) / std[j];
  return out;
}

Tensor Normalization::invert(const Tensor& row) const {
  if (row.size() != mean.size()) throw ShapeError("normalization expects " + std::to_string(mean.size()) + " features");
  Tensor out = row;
  for (std::size_t j = 0; j < mean.size(); ++j) out[j] = row[j] * std[j] + mean[j];
  return out;
}

Tensor TabularDataset::features_tensor() const {
  if (rows.empty()) throw Error("tabular dataset is empty");
  Tensor t(Shape{rows.size(), features.size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < features.size(); ++j) t[i * features.size() + j] = rows[i][j];
  return t;
}

Tensor TabularDataset::target_tensor() const {
  if (target.empty()) throw Error("tabular dataset is empty");
  return Tensor(Shape{target.size(), 1}, target);
}

TabularDataset parse_tabular_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty() && line.front() != '#') lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  if (lines.empty()) throw FormatError("CSV has no header row");
  auto header = split_csv_line(lines[0]);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("CSV is missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> feature_cols;
  for (const auto& f : kHousingFeatures) feature_cols.push_back(column(f));
  const std::size_t target_col = column(kTargetColumn);

  TabularDataset data;
  data.features.assign(kHousingFeatures.begin(), kHousingFeatures.end());
  for (std::size_t li = 1; li < lines.size(); ++li) {
    auto cells = split_csv_line(lines[li]);
    if (cells.size() != header.size())
      throw FormatError("CSV row " + std::to_string(li) + " has " + std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    auto number = [&](std::size_t col) {
      try {
        double v = io::parse_double(cells[col]);
        if (!std::isfinite(v)) throw FormatError("non-finite");
        return v;
      } catch (const Error&) {
        throw FormatError("CSV row " + std::to_string(li) + " column '" + std::string(header[col]) +
                          "' is not numeric: '" + std::string(cells[col]) + "'");
      }
    };
    std::vector<double> row;
    for (auto c : feature_cols) row.push_back(number(c));
    data.rows.push_back(std::move(row));
    data.target.push_back(number(target_col));
  }
  return data;
}

TabularDataset load_tabular_csv(const std::filesystem::path& path) { return parse_tabular_csv(io::read_file(path)); }

std::string format_tabular_csv(const TabularDataset& data) {
  std::string out;
  for (const auto& f : data.features) out += f + ",";
  out += kTargetColumn + "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.rows[i]) out += io::format_double(v) + ",";
    out += io::format_double(data.target[i]) + "\n";
  }
  return out;
}

TabularDataset normalize(const TabularDataset& data) {
  const std::size_t dim = data.features.size();
  const auto stats = fit_statistics(data.rows, dim);
  TabularDataset out = data;
  for (auto& r : out.rows)
    for (std::size_t j = 0; j < dim; ++j) r[j] = (r[j] - stats.mean[j]) / stats.std[j];
  if (data.normalization) {
    Normalization composed = *data.normalization;
    for (std::size_t j = 0; j < dim; ++j) {
      composed.mean[j] += composed.std[j] * stats.mean[j];
      composed.std[j] *= stats.std[j];
    }
    out.normalization = composed;
  } else {
    out.normalization = stats;
  }
  return out;
}

TabularDataset denormalize(const TabularDataset& data) {
  if (!data.normalization) return data;
  TabularDataset out = data;
  const auto& n = *data.normalization;
  for (auto& r : out.rows)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = r[j] * n.std[j] + n.mean[j];
  out.normalization.reset();
  return out;
}

TabularDataset synthetic_housing(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TabularDataset data;
  data.features.assign(kHousingFeatures.begin(), kHousingFeatures.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double income = std::clamp(std::exp(1.25 + 0.45 * rng.normal()), 0.5, 15.0);
    const double age = static_cast<double>(1 + rng.below(52));
    const double rooms = std::max(1.5, 3.6 + 0.35 * income + 0.6 * rng.normal());
    const double bedrooms = std::max(0.5, rooms * std::clamp(0.2 + 0.045 * rng.normal(), 0.1, 0.35));
    const double occupancy = std::clamp(std::exp(std::log(2.8) + 0.3 * rng.normal()), 1.0, 8.0);
    const double households = std::exp(std::log(400.0) + 0.6 * rng.normal());
    const double population = std::round(occupancy * households);
    const double ratio = bedrooms / occupancy;
    const double value =
        0.42 * income + 0.006 * age + 1.6 * ratio - 0.12 * occupancy + 0.15 * rng.normal();
    data.rows.push_back({income, age, rooms, bedrooms, population, occupancy});
    data.target.push_back(std::clamp(value, 0.15, 5.0));
  }
  return data;
}

double concept_bedrooms_ratio(const Tensor& row) {
  if (row.size() != kHousingFeatures.size()) throw ShapeError("housing row must have 6 features");
  if (row[kAveOcp] == 0.0) throw Error("zero occupancy: bedrooms ratio undefined");
  return row[kAveBedrms] / row[kAveOcp];
}

ConceptFunction bedrooms_ratio_concept(const Normalization& normalization) {
  return {"bedrooms_ratio", ConceptKind::Scalar, [normalization](const Tensor& s, std::optional<int>) {
            return concept_bedrooms_ratio(normalization.invert(s));
          }};
}

}  // namespace conceptbp
