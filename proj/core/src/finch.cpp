#include "scdsc/finch.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

namespace scdsc::finch {

std::string_view metric_name(Metric metric) { return metric == Metric::cosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "euclidean") return Metric::euclidean;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected cosine or euclidean)");
}

std::vector<std::size_t> ExactNeighbors::first_neighbors(const MatrixD& points, Metric metric) const {
  const Eigen::Index n = points.rows();
  if (n < 2) throw ContractError("first_neighbors: need at least 2 points");

  MatrixD work = points;
  Eigen::VectorXd sq_norm(n);
  if (metric == Metric::cosine) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double norm = work.row(i).norm();
      if (norm > 0.0) work.row(i) /= norm;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) sq_norm[i] = work.row(i).squaredNorm();

  std::vector<std::size_t> kappa(static_cast<std::size_t>(n));
  constexpr Eigen::Index block = 256;
  MatrixD gram;
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index rows = std::min(block, n - start);
    gram.noalias() = work.middleRows(start, rows) * work.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index i = start + r;
      double best = std::numeric_limits<double>::infinity();
      Eigen::Index best_j = -1;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double d = metric == Metric::cosine ? 1.0 - gram(r, j) : sq_norm[i] + sq_norm[j] - 2.0 * gram(r, j);
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      kappa[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best_j);
    }
  }
  return kappa;
}

std::vector<std::size_t> first_neighbors(const MatrixD& points, Metric metric) {
  return ExactNeighbors{}.first_neighbors(points, metric);
}

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

/// Relabels arbitrary ids to 0..l-1 in order of first appearance.
MiniClusterPartition from_labels(const std::vector<std::size_t>& raw) {
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> remap(raw.empty() ? 0 : *std::max_element(raw.begin(), raw.end()) + 1, unset);
  MiniClusterPartition part;
  part.index.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::size_t& id = remap[raw[i]];
    if (id == unset) {
      id = part.members.size();
      part.members.emplace_back();
    }
    part.index[i] = id;
    part.members[id].push_back(i);
  }
  return part;
}

void fill_centroids(MiniClusterPartition& part, const MatrixD& points) {
  part.centroids = MatrixD::Zero(static_cast<Eigen::Index>(part.clusters()), points.cols());
  for (std::size_t c = 0; c < part.clusters(); ++c) {
    for (std::size_t i : part.members[c]) part.centroids.row(static_cast<Eigen::Index>(c)) += points.row(static_cast<Eigen::Index>(i));
    part.centroids.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(part.members[c].size());
  }
}

double mean_variance(const MiniClusterPartition& part, const MatrixD& points) {
  double total = 0.0;
  for (std::size_t c = 0; c < part.clusters(); ++c) {
    double spread = 0.0;
    for (std::size_t i : part.members[c]) {
      spread += (points.row(static_cast<Eigen::Index>(i)) - part.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
    }
    total += spread / static_cast<double>(part.members[c].size());
  }
  return total / static_cast<double>(part.clusters());
}

}  // namespace

MiniClusterPartition adjacency_components(std::span<const std::size_t> kappa) {
  const std::size_t n = kappa.size();
  DisjointSets sets(n);
  // Edges j = kappa[i] and kappa[j] = i are the same undirected link; the
  // shared-neighbor rule kappa[i] = kappa[j] is implied transitively through
  // the common neighbor, so linking every i to kappa[i] covers all three.
  for (std::size_t i = 0; i < n; ++i) {
    if (kappa[i] >= n) throw ContractError("adjacency_components: neighbor index out of range");
    sets.unite(i, kappa[i]);
  }
  std::vector<std::size_t> roots(n);
  for (std::size_t i = 0; i < n; ++i) roots[i] = sets.find(i);
  MiniClusterPartition part = from_labels(roots);
  part.iteration = 1;
  return part;
}

PartitionHierarchy finch_hierarchy(const MatrixD& points, Metric metric, int max_iters,
                                   const NeighborBackend& backend) {
  if (points.rows() < 2) throw ContractError("finch_hierarchy: need at least 2 points");
  if (max_iters < 1) throw ContractError("finch_hierarchy: max_iters must be >= 1");

  PartitionHierarchy hierarchy;
  MiniClusterPartition level = adjacency_components(backend.first_neighbors(points, metric));
  level.iteration = 1;
  fill_centroids(level, points);

  while (true) {
    hierarchy.mean_variance.push_back(mean_variance(level, points));
    hierarchy.levels.push_back(level);
    if (level.clusters() == 1 || static_cast<int>(hierarchy.depth()) >= max_iters) break;

    const MiniClusterPartition merged = adjacency_components(backend.first_neighbors(level.centroids, metric));
    std::vector<std::size_t> propagated(points.rows());
    for (std::size_t i = 0; i < propagated.size(); ++i) propagated[i] = merged.index[level.index[i]];
    MiniClusterPartition next = from_labels(propagated);
    next.iteration = level.iteration + 1;
    fill_centroids(next, points);
    level = std::move(next);
  }
  return hierarchy;
}

const MiniClusterPartition& select_partition(const PartitionHierarchy& hierarchy, int iteration) {
  if (iteration < 1 || static_cast<std::size_t>(iteration) > hierarchy.depth()) {
    throw RangeError("select_partition: iteration " + std::to_string(iteration) + " requested but hierarchy has " +
                     std::to_string(hierarchy.depth()) + " levels");
  }
  return hierarchy.levels[static_cast<std::size_t>(iteration) - 1];
}

}  // namespace scdsc::finch
