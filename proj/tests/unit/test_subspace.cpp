#include <doctest.h>

#include <Eigen/QR>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "scdsc/subspace.hpp"

using namespace scdsc;
using ad::Tape;

namespace {

MatrixD assign(const MatrixD& h, const MatrixD& d, const BasisShape& shape) {
  Tape<double> t;
  return soft_assign(t.constant(h), t.constant(d), shape).data();
}

double dissimilarity(const MatrixD& d, const BasisShape& shape) {
  Tape<double> t;
  return dissimilarity_loss(t.constant(d), shape).item();
}

/// Distinct standard basis columns e_0 ... e_{m-1} in R^d.
MatrixD standard_columns(Eigen::Index d, Eigen::Index m) { return MatrixD::Identity(d, m); }

MatrixD blob_points(std::size_t per_blob, std::vector<std::size_t>& ids, std::uint64_t seed) {
  Rng rng = substream(seed, "blob");
  MatrixD pts(static_cast<Eigen::Index>(2 * per_blob), 3);
  ids.clear();
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const double centre = i < per_blob ? -20.0 : 20.0;
    for (Eigen::Index c = 0; c < 3; ++c) pts(static_cast<Eigen::Index>(i), c) = centre + standard_normal(rng);
    ids.push_back(i < per_blob ? 0 : 1);
  }
  return pts;
}

}  // namespace

TEST_CASE("soft assignment") {
  SUBCASE("axis projection with vanishing theta") {
    const BasisShape shape{2, 1, 1e-12};
    const MatrixD s = assign(MatrixD{{1.0, 0.0}}, standard_columns(2, 2), shape);
    CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s(0, 1) < 1e-9);
  }

  SUBCASE("zero latent gives the uniform row") {
    const BasisShape shape{4, 2, 0.3};
    Rng rng = substream(1, "d");
    const MatrixD s = assign(MatrixD::Zero(3, 5), oracle::random_matrix(5, 8, rng), shape);
    CHECK(oracle::max_abs_diff(s, MatrixD::Constant(3, 4, 0.25)) < 1e-12);
  }

  SUBCASE("random instance matches the entrywise evaluation") {
    const BasisShape shape{3, 2, 0.1};
    Rng rng = substream(2, "sa");
    const MatrixD h = oracle::random_matrix(9, 7, rng);
    const MatrixD d = oracle::random_matrix(7, 6, rng);
    const MatrixD s = assign(h, d, shape);
    CHECK(oracle::max_abs_diff(s, oracle::soft_assign(h, d, 3, 2, 0.1)) < 1e-6);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-6);
      CHECK(s.row(i).minCoeff() > 0.0);
      CHECK(s.row(i).maxCoeff() < 1.0);
    }
  }

  SUBCASE("scaling the latent leaves assignments unchanged as theta vanishes") {
    const BasisShape shape{3, 2, 1e-14};
    Rng rng = substream(3, "sa");
    const MatrixD h = oracle::random_matrix(6, 7, rng);
    const MatrixD d = oracle::random_matrix(7, 6, rng);
    CHECK(oracle::max_abs_diff(assign(h, d, shape), assign(7.5 * h, d, shape)) < 1e-10);
  }

  SUBCASE("gradient-free overload agrees with the tape") {
    const BasisShape shape{2, 3, 0.1};
    Rng rng = substream(4, "sa");
    const MatrixD h = oracle::random_matrix(5, 6, rng);
    const MatrixD d = oracle::random_matrix(6, 6, rng);
    const BasisSet bases{d.cast<float>(), shape};
    CHECK(oracle::max_abs_diff(soft_assign(h.cast<float>(), bases), oracle::soft_assign(h, d, 2, 3, 0.1)) < 1e-5);
  }

  SUBCASE("invalid shapes") {
    Tape<double> t;
    CHECK_THROWS_AS(soft_assign(t.constant(MatrixD::Zero(1, 4)), t.constant(MatrixD::Zero(4, 5)), BasisShape{2, 2, 0.1}),
                    DimensionError);
    CHECK_THROWS_AS(soft_assign(t.constant(MatrixD::Zero(1, 4)), t.constant(MatrixD::Zero(4, 4)), BasisShape{2, 2, 0.0}),
                    ContractError);
  }
}

TEST_CASE("basis dissimilarity") {
  const BasisShape shape{3, 2, 0.1};
  CHECK(dissimilarity(standard_columns(8, 6), shape) == 0.0);
  CHECK(dissimilarity(2.0 * standard_columns(8, 6), shape) == doctest::Approx(9.0 * 3 * 2));

  Rng rng = substream(5, "dis");
  const MatrixD d = oracle::random_matrix(8, 6, rng);
  CHECK(std::abs(dissimilarity(d, shape) - oracle::dissimilarity(d, 2)) < 1e-6);
  CHECK(std::abs(dissimilarity_loss(BasisSet{d.cast<float>(), shape}) - oracle::dissimilarity(d, 2)) < 1e-4);

  SUBCASE("zero exactly at orthonormal columns") {
    const MatrixD q = Eigen::HouseholderQR<Eigen::MatrixXd>(oracle::random_matrix(8, 8, rng)).householderQ();
    const MatrixD orth = q.leftCols(6);
    CHECK(dissimilarity(orth, shape) < 1e-20);
    MatrixD bumped = orth;
    bumped(3, 4) += 1e-3;
    CHECK(dissimilarity(bumped, shape) > 0.0);
  }
}

TEST_CASE("argmax rows") {
  const MatrixD s{{0.2, 0.5, 0.3}, {0.4, 0.4, 0.2}};
  CHECK(argmax_rows(s) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("kmeans") {
  SUBCASE("two separated blobs") {
    std::vector<std::size_t> ids;
    const MatrixD pts = blob_points(30, ids, 6);
    Rng rng = substream(6, "kmeans");
    const auto result = kmeans(pts, KMeansOptions{2}, rng);
    CHECK(oracle::exhaustive_accuracy(result.labels, ids) == 1.0);
  }

  SUBCASE("k = 1 puts everything together at the mean") {
    Rng rng = substream(7, "kmeans");
    const MatrixD pts = oracle::random_matrix(20, 4, rng);
    const auto result = kmeans(pts, KMeansOptions{1}, rng);
    CHECK(std::set<std::size_t>(result.labels.begin(), result.labels.end()).size() == 1);
    CHECK(oracle::max_abs_diff(result.centroids, pts.colwise().mean()) < 1e-12);
  }

  SUBCASE("duplicate rows share labels") {
    Rng rng = substream(8, "kmeans");
    const MatrixD base = oracle::random_matrix(10, 3, rng);
    MatrixD pts(20, 3);
    pts << base, base;
    const auto result = kmeans(pts, KMeansOptions{3}, rng);
    for (std::size_t i = 0; i < 10; ++i) CHECK(result.labels[i] == result.labels[i + 10]);
  }

  SUBCASE("same seed, same labels") {
    std::vector<std::size_t> ids;
    const MatrixD pts = blob_points(15, ids, 9);
    Rng a = substream(3, "kmeans");
    Rng b = substream(3, "kmeans");
    CHECK(kmeans(pts, KMeansOptions{4}, a).labels == kmeans(pts, KMeansOptions{4}, b).labels);
  }

  SUBCASE("preconditions") {
    Rng rng = substream(9, "kmeans");
    CHECK_THROWS_AS(kmeans(MatrixD::Zero(3, 2), KMeansOptions{2}, rng), DegenerateInputError);
    CHECK_THROWS_AS(kmeans(MatrixD::Zero(1, 2), KMeansOptions{2}, rng), ContractError);
    CHECK_THROWS_AS(kmeans(MatrixD::Zero(3, 2), KMeansOptions{0}, rng), ContractError);
  }
}

TEST_CASE("basis initialisation") {
  SUBCASE("rank-one cluster recovers its direction") {
    Eigen::VectorXd u(4);
    u << 1, 2, -2, 4;
    u.normalize();
    MatrixD h(6, 4);
    for (Eigen::Index i = 0; i < 6; ++i) h.row(i) = u.transpose();
    const std::vector<std::size_t> labels(6, 0);
    Rng rng = substream(1, "basis");
    const BasisSet bases = init_bases(h, labels, BasisShape{1, 1, 0.1}, rng);
    CHECK(std::abs(std::abs(bases.basis.cast<double>().col(0).dot(u)) - 1.0) < 1e-6);
  }

  SUBCASE("members in a plane are reproduced exactly") {
    Rng rng = substream(2, "plane");
    const MatrixD frame = oracle::random_matrix(2, 5, rng);
    const MatrixD h = oracle::random_matrix(12, 2, rng) * frame;
    const std::vector<std::size_t> labels(12, 0);
    const BasisSet bases = init_bases(h, labels, BasisShape{1, 2, 0.1}, rng);
    const MatrixD d = bases.basis.cast<double>();
    CHECK((h - h * d * d.transpose()).norm() < 1e-5 * h.norm());
  }

  SUBCASE("random clusters match the SVD oracle") {
    Rng rng = substream(3, "svd");
    const MatrixD h = oracle::random_matrix(40, 12, rng);
    std::vector<std::size_t> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = i % 2;
    const BasisSet bases = init_bases(h, labels, BasisShape{2, 5, 0.1}, rng);
    for (std::size_t j = 0; j < 2; ++j) {
      const MatrixD block = bases.block(j).cast<double>();
      CHECK(oracle::max_abs_diff(block.transpose() * block, MatrixD::Identity(5, 5)) < 1e-6);
      MatrixD members(20, 12);
      for (Eigen::Index i = 0; i < 20; ++i) members.row(i) = h.row(2 * i + static_cast<Eigen::Index>(j));
      const auto sq = oracle::squared_singular_values(members);
      double top = 0.0;
      for (std::size_t c = 0; c < 5; ++c) top += sq[c];
      const double captured = (members * block).squaredNorm();
      CHECK(std::abs(captured - top) < 1e-5 * top);
    }
  }

  SUBCASE("rank-deficient clusters are completed orthonormally") {
    const MatrixD h = MatrixD::Ones(4, 8);
    const std::vector<std::size_t> labels(4, 0);
    Rng rng = substream(4, "basis");
    const MatrixD block = init_bases(h, labels, BasisShape{1, 5, 0.1}, rng).basis.cast<double>();
    CHECK(oracle::max_abs_diff(block.transpose() * block, MatrixD::Identity(5, 5)) < 1e-6);
  }

  SUBCASE("errors") {
    Rng rng = substream(5, "basis");
    const MatrixD h = MatrixD::Ones(4, 3);
    const std::vector<std::size_t> one_cluster(4, 0);
    CHECK_THROWS_AS(init_bases(h, one_cluster, BasisShape{2, 1, 0.1}, rng), InitializationError);
    CHECK_THROWS_AS(init_bases(h, one_cluster, BasisShape{1, 4, 0.1}, rng), ContractError);
    const std::vector<std::size_t> short_labels(3, 0);
    CHECK_THROWS_AS(init_bases(h, short_labels, BasisShape{1, 1, 0.1}, rng), DimensionError);
  }
}

TEST_CASE("bases section round trip") {
  Rng rng = substream(6, "io");
  const BasisSet bases{oracle::random_matrix(6, 4, rng).cast<float>(), BasisShape{2, 2, 0.25}};
  std::stringstream buffer;
  write_bases(buffer, bases);
  CHECK(buffer.str().rfind("SCDSC-D 1\nbases 6 2 2 0.25\n", 0) == 0);
  const BasisSet back = read_bases(buffer);
  CHECK(back.basis == bases.basis);
  CHECK(back.shape.theta == 0.25);
  std::stringstream truncated(buffer.str().substr(0, 30));
  CHECK_THROWS_AS(read_bases(truncated), IoError);
}
