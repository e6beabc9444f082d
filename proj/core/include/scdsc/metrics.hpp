#pragma once

// Clustering accuracy against ground truth: overall accuracy under an optimal
// one-to-one cluster/class matching, normalized mutual information and
// Cohen's kappa, plus cluster-map rendering.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scdsc/hsi.hpp"

namespace scdsc::metrics {

using Label = std::size_t;

/// Counts of (predicted id, true id) pairs over the evaluated samples.
struct ContingencyTable {
  std::vector<Label> predicted_ids;  // sorted distinct predicted labels (rows)
  std::vector<Label> true_ids;       // sorted distinct true labels (columns)
  std::vector<std::vector<std::size_t>> counts;
  std::size_t total = 0;

  static ContingencyTable build(std::span<const Label> predicted, std::span<const Label> truth);
};

/// Maximum-weight one-to-one assignment of rows to columns (Kuhn-Munkres).
/// Returns, for every row, the matched column or -1 when rows outnumber
/// columns.
std::vector<std::ptrdiff_t> max_weight_assignment(const std::vector<std::vector<std::size_t>>& weights);

/// Relabels predictions onto true ids through the optimal matching; clusters
/// left unmatched map to 0, which is never a valid class.
std::vector<Label> match_labels(std::span<const Label> predicted, std::span<const Label> truth);

double overall_accuracy(std::span<const Label> predicted, std::span<const Label> truth);

/// 2 I(G; Ghat) / (H(G) + H(Ghat)) with natural logarithms. When both
/// partitions are a single cluster the score is 1.
double nmi(std::span<const Label> predicted, std::span<const Label> truth);

/// (P_o - P_e) / (1 - P_e) on already matched labels. When P_e = 1 the score
/// is 1 for identical labelings and 0 otherwise.
double kappa(std::span<const Label> matched, std::span<const Label> truth);

struct ClassAccuracy {
  Label label = 0;
  std::size_t support = 0;
  double accuracy = 0.0;
};

struct Evaluation {
  double oa = 0.0;
  double nmi = 0.0;
  double kappa = 0.0;
  std::vector<ClassAccuracy> per_class;
  std::vector<Label> matched;
};

Evaluation evaluate(std::span<const Label> predicted, std::span<const Label> truth);

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Sixteen fixed colours; class id c (1-based) is drawn with entry c - 1.
std::span<const Rgb> default_palette();

/// Writes a binary P6 pixmap: masked pixels take the colour of their class id
/// (labels are in masked raster order), unmasked pixels are black and masked
/// pixels with id 0 (unmatched cluster) are white. Throws ConfigError when the
/// palette has fewer entries than the largest id.
void export_map(const std::filesystem::path& path, std::span<const Label> labels, const HsiCube& cube,
                std::span<const Rgb> palette);

}  // namespace scdsc::metrics
