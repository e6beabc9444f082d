#include "scdsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>

namespace scdsc::metrics {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DimensionError("label vectors differ in length: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

std::vector<Label> distinct(std::span<const Label> labels) {
  std::vector<Label> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::size_t position(const std::vector<Label>& ids, Label value) {
  return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), value) - ids.begin());
}

}  // namespace

ContingencyTable ContingencyTable::build(std::span<const Label> predicted, std::span<const Label> truth) {
  check_lengths(predicted.size(), truth.size());
  ContingencyTable table;
  table.predicted_ids = distinct(predicted);
  table.true_ids = distinct(truth);
  table.counts.assign(table.predicted_ids.size(), std::vector<std::size_t>(table.true_ids.size(), 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    ++table.counts[position(table.predicted_ids, predicted[i])][position(table.true_ids, truth[i])];
  }
  table.total = predicted.size();
  return table;
}

std::vector<std::ptrdiff_t> max_weight_assignment(const std::vector<std::vector<std::size_t>>& weights) {
  const std::size_t rows = weights.size();
  const std::size_t cols = rows == 0 ? 0 : weights.front().size();
  const std::size_t n = std::max(rows, cols);
  std::size_t top = 0;
  for (const auto& row : weights) {
    for (std::size_t w : row) top = std::max(top, w);
  }
  // Minimise cost = top - weight on the zero-padded square matrix.
  auto cost = [&](std::size_t i, std::size_t j) -> long long {
    const std::size_t w = (i < rows && j < cols) ? weights[i][j] : 0;
    return static_cast<long long>(top) - static_cast<long long>(w);
  };

  // Shortest augmenting path with potentials, 1-based with a sentinel column 0.
  constexpr long long inf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<long long> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      long long delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long long cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::ptrdiff_t> match(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = owner[j] - 1;
    if (i < rows && j - 1 < cols) match[i] = static_cast<std::ptrdiff_t>(j - 1);
  }
  return match;
}

std::vector<Label> match_labels(std::span<const Label> predicted, std::span<const Label> truth) {
  const ContingencyTable table = ContingencyTable::build(predicted, truth);
  const std::vector<std::ptrdiff_t> match = max_weight_assignment(table.counts);
  std::vector<Label> out(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const std::ptrdiff_t col = match[position(table.predicted_ids, predicted[i])];
    out[i] = col < 0 ? 0 : table.true_ids[static_cast<std::size_t>(col)];
  }
  return out;
}

double overall_accuracy(std::span<const Label> predicted, std::span<const Label> truth) {
  check_lengths(predicted.size(), truth.size());
  if (truth.empty()) return 0.0;
  const std::vector<Label> matched = match_labels(predicted, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += matched[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double nmi(std::span<const Label> predicted, std::span<const Label> truth) {
  const ContingencyTable table = ContingencyTable::build(predicted, truth);
  if (table.total == 0) return 0.0;
  const auto n = static_cast<double>(table.total);
  std::vector<double> row_mass(table.predicted_ids.size(), 0.0);
  std::vector<double> col_mass(table.true_ids.size(), 0.0);
  for (std::size_t i = 0; i < row_mass.size(); ++i) {
    for (std::size_t j = 0; j < col_mass.size(); ++j) {
      row_mass[i] += static_cast<double>(table.counts[i][j]);
      col_mass[j] += static_cast<double>(table.counts[i][j]);
    }
  }
  auto entropy = [n](const std::vector<double>& mass) {
    double h = 0.0;
    for (double m : mass) {
      if (m > 0.0) h -= (m / n) * std::log(m / n);
    }
    return h;
  };
  const double h_pred = entropy(row_mass);
  const double h_true = entropy(col_mass);
  if (h_pred + h_true == 0.0) return 1.0;  // both single-cluster, hence identical partitions
  double mutual = 0.0;
  for (std::size_t i = 0; i < row_mass.size(); ++i) {
    for (std::size_t j = 0; j < col_mass.size(); ++j) {
      const double c = static_cast<double>(table.counts[i][j]);
      if (c > 0.0) mutual += (c / n) * std::log(c * n / (row_mass[i] * col_mass[j]));
    }
  }
  return std::clamp(2.0 * mutual / (h_pred + h_true), 0.0, 1.0);
}

double kappa(std::span<const Label> matched, std::span<const Label> truth) {
  check_lengths(matched.size(), truth.size());
  if (truth.empty()) return 0.0;
  const auto n = static_cast<double>(truth.size());
  std::map<Label, std::pair<double, double>> marginals;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    marginals[matched[i]].first += 1.0;
    marginals[truth[i]].second += 1.0;
    agree += matched[i] == truth[i] ? 1 : 0;
  }
  const double observed = static_cast<double>(agree) / n;
  double expected = 0.0;
  for (const auto& [label, mass] : marginals) expected += (mass.first / n) * (mass.second / n);
  if (expected >= 1.0) return agree == truth.size() ? 1.0 : 0.0;
  return (observed - expected) / (1.0 - expected);
}

Evaluation evaluate(std::span<const Label> predicted, std::span<const Label> truth) {
  check_lengths(predicted.size(), truth.size());
  Evaluation eval;
  eval.matched = match_labels(predicted, truth);
  std::size_t hits = 0;
  std::map<Label, std::pair<std::size_t, std::size_t>> per_class;  // support, hits
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& entry = per_class[truth[i]];
    ++entry.first;
    if (eval.matched[i] == truth[i]) {
      ++entry.second;
      ++hits;
    }
  }
  eval.oa = truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size());
  eval.nmi = nmi(predicted, truth);
  eval.kappa = kappa(eval.matched, truth);
  for (const auto& [label, entry] : per_class) {
    eval.per_class.push_back({label, entry.first, static_cast<double>(entry.second) / static_cast<double>(entry.first)});
  }
  return eval;
}

std::span<const Rgb> default_palette() {
  static constexpr std::array<Rgb, 16> palette{{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},  {145, 30, 180},
      {70, 240, 240},  {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
      {170, 110, 40},  {128, 0, 0},     {170, 255, 195}, {0, 0, 128},
  }};
  return palette;
}

void export_map(const std::filesystem::path& path, std::span<const Label> labels, const HsiCube& cube,
                std::span<const Rgb> palette) {
  if (labels.size() != cube.masked_count()) {
    throw DimensionError("export_map: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(cube.masked_count()) + " masked pixels");
  }
  const Label largest = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  if (largest > palette.size()) {
    throw ConfigError("export_map: palette has " + std::to_string(palette.size()) + " colours but labels reach " +
                      std::to_string(largest));
  }
  std::vector<char> pixels(cube.pixel_count() * 3, 0);
  std::size_t next = 0;
  for (std::size_t p = 0; p < cube.pixel_count(); ++p) {
    if (!cube.mask()[p]) continue;
    const Label id = labels[next++];
    const Rgb colour = id == 0 ? Rgb{255, 255, 255} : palette[id - 1];
    pixels[3 * p] = static_cast<char>(colour.r);
    pixels[3 * p + 1] = static_cast<char>(colour.g);
    pixels[3 * p + 2] = static_cast<char>(colour.b);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << cube.width() << ' ' << cube.height() << "\n255\n";
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace scdsc::metrics
