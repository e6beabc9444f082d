#pragma once

// Subspace bases D = [D_1 ... D_k], soft assignments, basis dissimilarity and
// K-means + SVD initialisation.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "scdsc/autodiff.hpp"
#include "scdsc/hsi.hpp"
#include "scdsc/rng.hpp"

namespace scdsc {

/// Shape parameters shared by every basis computation.
struct BasisShape {
  std::size_t clusters = 0;  // k
  std::size_t rank = 5;      // r, basis vectors per subspace
  double theta = 0.1;        // smoothing constant, > 0

  std::size_t columns() const { return clusters * rank; }
};

struct BasisSet {
  /// d x (k * r); block j occupies columns [j*r, (j+1)*r).
  MatrixF basis;
  BasisShape shape;

  std::size_t latent_dim() const { return static_cast<std::size_t>(basis.rows()); }
  MatrixF block(std::size_t j) const {
    return basis.middleCols(static_cast<Eigen::Index>(j * shape.rank), static_cast<Eigen::Index>(shape.rank));
  }
};

/// s_ij = (||h_i D_j|| + theta r) / sum_j (||h_i D_j|| + theta r).
template <typename T>
ad::Value<T> soft_assign(const ad::Value<T>& latent, const ad::Value<T>& basis, const BasisShape& shape);

/// Gradient-free soft assignment, n x k.
MatrixD soft_assign(const MatrixF& latent, const BasisSet& bases);

/// ||D^T D (.) O||_F^2 + ||D^T D (.) I - I||_F^2 where O zeroes the r x r
/// diagonal blocks.
template <typename T>
ad::Value<T> dissimilarity_loss(const ad::Value<T>& basis, const BasisShape& shape);

double dissimilarity_loss(const BasisSet& bases);

/// Row-wise argmax with ties to the smallest column.
std::vector<std::size_t> argmax_rows(const MatrixD& assignments);

struct KMeansOptions {
  std::size_t clusters = 0;
  int restarts = 10;
  int max_iterations = 300;
  double tolerance = 1e-6;
};

struct KMeansResult {
  std::vector<std::size_t> labels;
  MatrixD centroids;
  double inertia = 0.0;
};

/// k-means++ seeding and Lloyd iterations, best of `restarts` by inertia.
/// Throws DegenerateInputError when there are fewer distinct rows than
/// clusters.
KMeansResult kmeans(const MatrixD& points, const KMeansOptions& options, Rng& rng);

/// For every cluster j, D_j is the top-r right singular vectors of the stacked
/// member rows. Rank-deficient clusters are completed with random orthonormal
/// directions drawn from `rng`. Throws InitializationError on an empty cluster.
BasisSet init_bases(const MatrixD& latent, std::span<const std::size_t> labels, const BasisShape& shape, Rng& rng);

/// Checkpoint section: "SCDSC-D 1", a "bases d k r theta" line, then the
/// d x (k*r) matrix as row-major little-endian float32.
void write_bases(std::ostream& out, const BasisSet& bases);
BasisSet read_bases(std::istream& in);

}  // namespace scdsc
