#pragma once

// First-neighbor agglomerative clustering, used to build mini-clusters.
//
// Each round links every node to its first (nearest) neighbor; connected
// components of the resulting graph become the next round's nodes, placed at
// the mean of their original samples.

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "scdsc/hsi.hpp"

namespace scdsc::finch {

enum class Metric { cosine, euclidean };

std::string_view metric_name(Metric metric);
/// Accepts "cosine" or "euclidean"; throws ConfigError otherwise.
Metric parse_metric(std::string_view name);

/// Source of first-neighbor vectors. The exact backend is O(n^2); an
/// approximate index can be substituted behind this interface.
class NeighborBackend {
 public:
  virtual ~NeighborBackend() = default;
  /// kappa[i] = argmin over j != i of dist(i, j), ties to the smallest j.
  virtual std::vector<std::size_t> first_neighbors(const MatrixD& points, Metric metric) const = 0;
};

class ExactNeighbors final : public NeighborBackend {
 public:
  std::vector<std::size_t> first_neighbors(const MatrixD& points, Metric metric) const override;
};

std::vector<std::size_t> first_neighbors(const MatrixD& points, Metric metric);

struct MiniClusterPartition {
  /// Cluster id of every original sample, contiguous in [0, clusters()).
  std::vector<std::size_t> index;
  std::vector<std::vector<std::size_t>> members;
  int iteration = 1;
  /// clusters() x d means of the original samples; empty when produced
  /// directly from a neighbor vector.
  MatrixD centroids;

  std::size_t clusters() const { return members.size(); }
  std::size_t samples() const { return index.size(); }
};

/// Connected components of the graph with an edge (i, j) whenever
/// j = kappa[i], kappa[j] = i or kappa[i] = kappa[j]. Cluster ids follow the
/// order in which samples first appear.
MiniClusterPartition adjacency_components(std::span<const std::size_t> kappa);

struct PartitionHierarchy {
  std::vector<MiniClusterPartition> levels;
  /// Mean over clusters of the average squared Euclidean distance between
  /// members and their centroid, one entry per level.
  std::vector<double> mean_variance;

  std::size_t depth() const { return levels.size(); }
};

/// Runs merging rounds until one cluster remains or `max_iters` levels exist.
PartitionHierarchy finch_hierarchy(const MatrixD& points, Metric metric, int max_iters,
                                   const NeighborBackend& backend = ExactNeighbors{});

/// Partition at depth `iteration` (1-based); RangeError if the hierarchy is
/// shallower.
const MiniClusterPartition& select_partition(const PartitionHierarchy& hierarchy, int iteration = 2);

}  // namespace scdsc::finch
