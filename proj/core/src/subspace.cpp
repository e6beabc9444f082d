#include "scdsc/subspace.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "scdsc/binary_io.hpp"

namespace scdsc {

namespace {

void check_shape(const BasisShape& shape, ad::Index basis_cols) {
  if (shape.clusters == 0 || shape.rank == 0) throw ContractError("basis shape needs k >= 1 and r >= 1");
  if (!(shape.theta > 0.0)) throw ContractError("basis smoothing constant theta must be > 0");
  if (static_cast<std::size_t>(basis_cols) != shape.columns()) {
    throw DimensionError("basis has " + std::to_string(basis_cols) + " columns, expected k*r = " +
                         std::to_string(shape.columns()));
  }
}

}  // namespace

template <typename T>
ad::Value<T> soft_assign(const ad::Value<T>& latent, const ad::Value<T>& basis, const BasisShape& shape) {
  check_shape(shape, basis.cols());
  const ad::Index n = latent.rows();
  const auto k = static_cast<ad::Index>(shape.clusters);
  const auto r = static_cast<ad::Index>(shape.rank);
  // Row i of H D holds h_i D_1, ..., h_i D_k side by side; viewing it as k
  // rows of length r turns the block norms into plain row norms.
  const ad::Value<T> projections = ad::reshape(ad::matmul(latent, basis), n * k, r);
  const ad::Value<T> alignment = ad::reshape(ad::row_l2norm(projections), n, k);
  return ad::row_normalize(ad::add_scalar(alignment, static_cast<T>(shape.theta * static_cast<double>(shape.rank))));
}

MatrixD soft_assign(const MatrixF& latent, const BasisSet& bases) {
  ad::Tape<double> tape;
  const auto h = tape.constant(latent.cast<double>());
  const auto d = tape.constant(bases.basis.cast<double>());
  return soft_assign(h, d, bases.shape).data();
}

template <typename T>
ad::Value<T> dissimilarity_loss(const ad::Value<T>& basis, const BasisShape& shape) {
  check_shape(shape, basis.cols());
  ad::Tape<T>& tape = *basis.tape();
  const auto cols = static_cast<ad::Index>(shape.columns());
  const auto r = static_cast<ad::Index>(shape.rank);
  ad::Matrix<T> off_block = ad::Matrix<T>::Ones(cols, cols);
  for (ad::Index j = 0; j < cols; j += r) off_block.block(j, j, r, r).setZero();
  const ad::Value<T> off = tape.constant(std::move(off_block));
  const ad::Value<T> eye = tape.constant(ad::Matrix<T>::Identity(cols, cols));

  const ad::Value<T> gram = ad::matmul(ad::transpose(basis), basis);
  const ad::Value<T> cross = ad::frobenius_sq(ad::hadamard(gram, off));
  const ad::Value<T> unit = ad::frobenius_sq(ad::sub(ad::hadamard(gram, eye), eye));
  return ad::add(cross, unit);
}

double dissimilarity_loss(const BasisSet& bases) {
  ad::Tape<double> tape;
  return dissimilarity_loss(tape.constant(bases.basis.cast<double>()), bases.shape).item();
}

std::vector<std::size_t> argmax_rows(const MatrixD& assignments) {
  std::vector<std::size_t> labels(static_cast<std::size_t>(assignments.rows()));
  for (ad::Index i = 0; i < assignments.rows(); ++i) {
    ad::Index best = 0;
    for (ad::Index j = 1; j < assignments.cols(); ++j) {
      if (assignments(i, j) > assignments(i, best)) best = j;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// K-means

namespace {

std::size_t count_distinct_rows(const MatrixD& points, std::size_t enough) {
  std::vector<ad::Index> order(static_cast<std::size_t>(points.rows()));
  for (ad::Index i = 0; i < points.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  auto less = [&](ad::Index a, ad::Index b) {
    for (ad::Index c = 0; c < points.cols(); ++c) {
      if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size() && distinct < enough; ++i) {
    if (less(order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

struct Assignment {
  std::size_t label;
  double distance;
};

Assignment nearest(const MatrixD& points, ad::Index i, const MatrixD& centroids) {
  Assignment best{0, std::numeric_limits<double>::infinity()};
  for (ad::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (points.row(i) - centroids.row(c)).squaredNorm();
    if (d < best.distance) best = {static_cast<std::size_t>(c), d};
  }
  return best;
}

MatrixD seed_plus_plus(const MatrixD& points, std::size_t k, Rng& rng) {
  const ad::Index n = points.rows();
  MatrixD centroids(static_cast<ad::Index>(k), points.cols());
  centroids.row(0) = points.row(static_cast<ad::Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  Eigen::VectorXd dist(n);
  for (ad::Index i = 0; i < n; ++i) dist[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = dist.sum();
    ad::Index chosen = n - 1;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (ad::Index i = 0; i < n; ++i) {
        target -= dist[i];
        if (target < 0.0 && dist[i] > 0.0) {
          chosen = i;
          break;
        }
      }
      // Round-off can leave target >= 0; fall back to the last positive weight.
      if (target >= 0.0) {
        for (ad::Index i = n - 1; i >= 0; --i) {
          if (dist[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
    }
    centroids.row(static_cast<ad::Index>(c)) = points.row(chosen);
    for (ad::Index i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (points.row(i) - centroids.row(static_cast<ad::Index>(c))).squaredNorm());
    }
  }
  return centroids;
}

KMeansResult lloyd(const MatrixD& points, MatrixD centroids, const KMeansOptions& options) {
  const ad::Index n = points.rows();
  const auto k = static_cast<std::size_t>(centroids.rows());
  KMeansResult result;
  result.labels.assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    std::vector<double> distance(static_cast<std::size_t>(n));
    for (ad::Index i = 0; i < n; ++i) {
      const Assignment a = nearest(points, i, centroids);
      result.labels[static_cast<std::size_t>(i)] = a.label;
      distance[static_cast<std::size_t>(i)] = a.distance;
    }
    MatrixD updated = MatrixD::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (ad::Index i = 0; i < n; ++i) {
      updated.row(static_cast<ad::Index>(result.labels[static_cast<std::size_t>(i)])) += points.row(i);
      ++counts[result.labels[static_cast<std::size_t>(i)]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        updated.row(static_cast<ad::Index>(c)) /= static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      const auto far = std::max_element(distance.begin(), distance.end()) - distance.begin();
      updated.row(static_cast<ad::Index>(c)) = points.row(far);
      distance[static_cast<std::size_t>(far)] = 0.0;
    }
    const double shift = (updated - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(updated);
    if (shift < options.tolerance) break;
  }
  result.inertia = 0.0;
  for (ad::Index i = 0; i < n; ++i) {
    const Assignment a = nearest(points, i, centroids);
    result.labels[static_cast<std::size_t>(i)] = a.label;
    result.inertia += a.distance;
  }
  result.centroids = std::move(centroids);
  return result;
}

}  // namespace

KMeansResult kmeans(const MatrixD& points, const KMeansOptions& options, Rng& rng) {
  const std::size_t k = options.clusters;
  if (k == 0) throw ContractError("kmeans: k must be >= 1");
  if (static_cast<std::size_t>(points.rows()) < k) throw ContractError("kmeans: fewer points than clusters");
  if (options.restarts < 1) throw ContractError("kmeans: restarts must be >= 1");
  if (count_distinct_rows(points, k) < k) {
    throw DegenerateInputError("kmeans: fewer distinct points than k = " + std::to_string(k));
  }
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int run = 0; run < options.restarts; ++run) {
    KMeansResult candidate = lloyd(points, seed_plus_plus(points, k, rng), options);
    if (candidate.inertia < best.inertia) best = std::move(candidate);
  }
  return best;
}

// ---------------------------------------------------------------------------
// SVD initialisation

BasisSet init_bases(const MatrixD& latent, std::span<const std::size_t> labels, const BasisShape& shape, Rng& rng) {
  const auto d = static_cast<std::size_t>(latent.cols());
  if (labels.size() != static_cast<std::size_t>(latent.rows())) throw DimensionError("init_bases: label count differs from rows");
  if (shape.clusters == 0 || shape.rank == 0) throw ContractError("init_bases: need k >= 1 and r >= 1");
  if (shape.rank > d) throw ContractError("init_bases: r exceeds the latent dimension");
  if (!(shape.theta > 0.0)) throw ContractError("init_bases: theta must be > 0");

  std::vector<std::vector<ad::Index>> members(shape.clusters);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= shape.clusters) throw ContractError("init_bases: label out of range");
    members[labels[i]].push_back(static_cast<ad::Index>(i));
  }

  MatrixD basis(static_cast<ad::Index>(d), static_cast<ad::Index>(shape.columns()));
  const auto r = static_cast<ad::Index>(shape.rank);
  for (std::size_t j = 0; j < shape.clusters; ++j) {
    if (members[j].empty()) throw InitializationError("init_bases: cluster " + std::to_string(j) + " is empty; re-seed");
    MatrixD stacked(static_cast<ad::Index>(members[j].size()), static_cast<ad::Index>(d));
    for (std::size_t m = 0; m < members[j].size(); ++m) stacked.row(static_cast<ad::Index>(m)) = latent.row(members[j][m]);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);
    const Eigen::VectorXd& sigma = svd.singularValues();
    const double tol = sigma.size() > 0 ? sigma[0] * static_cast<double>(std::max<std::size_t>(stacked.rows(), d)) *
                                              std::numeric_limits<double>::epsilon()
                                        : 0.0;
    ad::Index usable = 0;
    while (usable < std::min<ad::Index>(r, sigma.size()) && sigma[usable] > tol) ++usable;

    Eigen::MatrixXd block(static_cast<ad::Index>(d), r);
    block.leftCols(usable) = svd.matrixV().leftCols(usable);
    // Orthonormal completion for rank-deficient clusters.
    for (ad::Index c = usable; c < r; ++c) {
      Eigen::VectorXd v(static_cast<ad::Index>(d));
      for (int attempt = 0;; ++attempt) {
        for (ad::Index e = 0; e < v.size(); ++e) v[e] = standard_normal(rng);
        for (int pass = 0; pass < 2; ++pass) {
          for (ad::Index prev = 0; prev < c; ++prev) v -= block.col(prev).dot(v) * block.col(prev);
        }
        const double norm = v.norm();
        if (norm > 1e-8) {
          block.col(c) = v / norm;
          break;
        }
        if (attempt > 100) throw InitializationError("init_bases: orthonormal completion failed");
      }
    }
    basis.middleCols(static_cast<ad::Index>(j) * r, r) = block;
  }
  return BasisSet{basis.cast<float>(), shape};
}

// ---------------------------------------------------------------------------
// Checkpoint section

void write_bases(std::ostream& out, const BasisSet& bases) {
  std::ostringstream theta;
  theta << std::setprecision(17) << bases.shape.theta;
  out << "SCDSC-D 1\nbases " << bases.basis.rows() << ' ' << bases.shape.clusters << ' ' << bases.shape.rank << ' '
      << theta.str() << '\n';
  io::write_array(out, std::span<const float>(bases.basis.data(), static_cast<std::size_t>(bases.basis.size())));
}

BasisSet read_bases(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "SCDSC-D 1") throw IoError("checkpoint: missing SCDSC-D header");
  if (!std::getline(in, line)) throw IoError("checkpoint: missing bases line");
  std::istringstream fields(line);
  std::string key;
  std::size_t d = 0;
  BasisSet bases;
  if (!(fields >> key >> d >> bases.shape.clusters >> bases.shape.rank >> bases.shape.theta) || key != "bases") {
    throw IoError("checkpoint: malformed bases line");
  }
  std::vector<float> buffer;
  if (!io::read_array(in, d * bases.shape.columns(), buffer)) throw IoError("checkpoint: truncated bases payload");
  bases.basis = Eigen::Map<const MatrixF>(buffer.data(), static_cast<ad::Index>(d), static_cast<ad::Index>(bases.shape.columns()));
  return bases;
}

template ad::Value<float> soft_assign(const ad::Value<float>&, const ad::Value<float>&, const BasisShape&);
template ad::Value<double> soft_assign(const ad::Value<double>&, const ad::Value<double>&, const BasisShape&);
template ad::Value<float> dissimilarity_loss(const ad::Value<float>&, const BasisShape&);
template ad::Value<double> dissimilarity_loss(const ad::Value<double>&, const BasisShape&);

}  // namespace scdsc
