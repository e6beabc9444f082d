#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "scdsc/constraints.hpp"

using namespace scdsc;
using ad::Tape;

namespace {

std::vector<PixelCoord> full_grid(std::uint32_t w, std::uint32_t h) {
  std::vector<PixelCoord> coords;
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) coords.push_back({x, y});
  }
  return coords;
}

/// A random subset of a w x h raster, in raster order.
std::vector<PixelCoord> sparse_grid(std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
  Rng rng = substream(seed, "mask");
  std::vector<PixelCoord> coords;
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      if (uniform01(rng) < 0.6) coords.push_back({x, y});
    }
  }
  return coords;
}

double row_entropy(const MatrixD& m, Eigen::Index p) {
  double e = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) e -= m(p, j) * std::log(m(p, j));
  return e;
}

double kl_value(const MatrixD& target, const MatrixD& q) {
  Tape<double> t;
  return kl_to_target(target, t.constant(q)).item();
}

}  // namespace

TEST_CASE("mini-cluster mean") {
  Rng rng = substream(1, "mcm");
  const MatrixD s = oracle::random_simplex_rows(6, 3, rng);

  SUBCASE("one cluster gives the mean row") {
    const auto groups = ad::GroupIndex::make(std::vector<std::size_t>(6, 0));
    CHECK(oracle::max_abs_diff(mini_cluster_mean(s, *groups), s.colwise().mean()) < 1e-12);
  }
  SUBCASE("singletons leave S unchanged") {
    const auto groups = ad::GroupIndex::make({0, 1, 2, 3, 4, 5});
    CHECK(oracle::max_abs_diff(mini_cluster_mean(s, *groups), s) < 1e-15);
  }
  SUBCASE("random partition matches the loop oracle") {
    const MatrixD big = oracle::random_simplex_rows(50, 4, rng);
    std::vector<std::size_t> index(50);
    for (auto& i : index) i = uniform_index(rng, 7);
    index[0] = 0;
    for (std::size_t g = 0; g < 7; ++g) index[g] = g;
    const auto groups = ad::GroupIndex::make(index);
    const MatrixD m = mini_cluster_mean(big, *groups);
    CHECK(oracle::max_abs_diff(m, oracle::group_mean(big, index, 7)) < 1e-6);
    Tape<double> t;
    CHECK(oracle::max_abs_diff(mini_cluster_mean(t.constant(big), groups).data(), m) < 1e-15);
    for (Eigen::Index p = 0; p < m.rows(); ++p) CHECK(std::abs(m.row(p).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("refine") {
  SUBCASE("uniform stays uniform") {
    CHECK(oracle::max_abs_diff(refine(MatrixD::Constant(4, 3, 1.0 / 3)), MatrixD::Constant(4, 3, 1.0 / 3)) < 1e-15);
  }
  SUBCASE("one-hot rows are fixed points") {
    const MatrixD m{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}};
    CHECK(refine(m) == m);
  }
  SUBCASE("two by two hand evaluation") {
    const MatrixD expected{{0.9143, 0.0857}, {0.2286, 0.7714}};
    CHECK(oracle::max_abs_diff(refine(MatrixD{{0.8, 0.2}, {0.4, 0.6}}), expected) < 1e-4);
  }
  SUBCASE("random instance matches the loop oracle and stays on the simplex") {
    Rng rng = substream(2, "refine");
    const MatrixD m = oracle::random_simplex_rows(30, 5, rng);
    const MatrixD r = refine(m);
    CHECK(oracle::max_abs_diff(r, oracle::refine(m)) < 1e-12);
    for (Eigen::Index p = 0; p < r.rows(); ++p) CHECK(std::abs(r.row(p).sum() - 1.0) < 1e-6);
  }
  SUBCASE("equal frequencies keep argmax and do not raise entropy") {
    // Rows paired with their column reversal give equal column sums.
    Rng rng = substream(3, "refine");
    const MatrixD half = oracle::random_simplex_rows(10, 2, rng);
    MatrixD m(20, 2);
    m << half, half.rowwise().reverse();
    const MatrixD r = refine(m);
    for (Eigen::Index p = 0; p < m.rows(); ++p) {
      Eigen::Index a = 0, b = 0;
      m.row(p).maxCoeff(&a);
      r.row(p).maxCoeff(&b);
      CHECK(a == b);
      CHECK(row_entropy(r, p) <= row_entropy(m, p) + 1e-12);
    }
  }
}

TEST_CASE("KL losses") {
  Rng rng = substream(4, "kl");
  const MatrixD m = oracle::random_simplex_rows(2, 2, rng);
  const MatrixD target = refine(m);
  CHECK(kl_value(m, m) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(kl_value(target, m) > 0.0);
  CHECK(std::abs(kl_value(target, m) - oracle::kl(target, m)) < 1e-8);

  Tape<double> t;
  const auto q = t.constant(m);
  CHECK(nonlocal_loss(q, target).item() == kl_value(target, m));
  CHECK(local_loss(q, target).item() == kl_value(target, m));
  CHECK(local_loss(q, m).item() == doctest::Approx(0.0).epsilon(1e-15));

  const MatrixD big = oracle::random_simplex_rows(40, 4, rng);
  const MatrixD other = oracle::random_simplex_rows(40, 4, rng);
  CHECK(std::abs(kl_value(other, big) - oracle::kl(other, big)) < 1e-8);
  CHECK_THROWS_AS(kl_value(MatrixD::Zero(2, 3), big), DimensionError);
}

TEST_CASE("non-local gradient on a sample is the mini-cluster gradient over its size") {
  Rng rng = substream(5, "eq");
  const std::vector<std::size_t> index{0, 1, 0, 2, 1, 0};
  const auto groups = ad::GroupIndex::make(index);
  const MatrixD s0 = oracle::random_simplex_rows(6, 3, rng);
  const MatrixD target = refine(oracle::random_simplex_rows(3, 3, rng));

  Tape<double> ts;
  auto s = ts.leaf(s0);
  ts.backward(nonlocal_loss(mini_cluster_mean(s, groups), target));

  Tape<double> tm;
  auto m = tm.leaf(mini_cluster_mean(s0, *groups));
  tm.backward(nonlocal_loss(m, target));

  const std::vector<double> size{3, 2, 1};
  for (std::size_t q = 0; q < index.size(); ++q) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(std::abs(s.grad()(static_cast<Eigen::Index>(q), j) - m.grad()(static_cast<Eigen::Index>(index[q]), j) / size[index[q]]) <
            1e-8);
    }
  }
}

TEST_CASE("spatial smoothing") {
  SUBCASE("constant S is a fixed point") {
    const auto coords = sparse_grid(6, 5, 1);
    const auto hood = spatial_neighborhood(coords, 6, 5, 3);
    const MatrixD s = MatrixD::Constant(static_cast<Eigen::Index>(coords.size()), 3, 1.0 / 3).eval();
    CHECK(oracle::max_abs_diff(spatial_smooth(s, *hood), s) < 1e-15);
    Tape<double> t;
    CHECK(std::abs(local_loss(t.constant(s), spatial_smooth(s, *hood)).item()) < 1e-12);
  }

  SUBCASE("isolated pixel keeps its own row") {
    const std::vector<PixelCoord> coords{{0, 0}, {4, 4}};
    const auto hood = spatial_neighborhood(coords, 5, 5, 3);
    const MatrixD s{{0.7, 0.3}, {0.1, 0.9}};
    CHECK(spatial_smooth(s, *hood) == s);
  }

  SUBCASE("full 3x3 grid matches the loop oracle") {
    const auto coords = full_grid(3, 3);
    const MatrixD s{{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.5, 0.5}, {0.2, 0.8},
                    {0.6, 0.4}, {0.1, 0.9}, {0.4, 0.6}, {0.7, 0.3}};
    const auto hood = spatial_neighborhood(coords, 3, 3, 3);
    const MatrixD f = spatial_smooth(s, *hood);
    CHECK(oracle::max_abs_diff(f, oracle::smooth(s, coords, 3, 3, 3)) < 1e-12);
    CHECK(f(4, 0) == doctest::Approx(s.col(0).mean()));
    CHECK(f(0, 0) == doctest::Approx((0.9 + 0.8 + 0.5 + 0.2) / 4));
  }

  SUBCASE("masked rasters and larger windows match the loop oracle") {
    for (std::size_t window : {3u, 5u, 7u}) {
      const auto coords = sparse_grid(11, 9, window);
      Rng rng = substream(window, "s");
      const MatrixD s = oracle::random_simplex_rows(static_cast<Eigen::Index>(coords.size()), 4, rng);
      const MatrixD f = spatial_smooth(s, *spatial_neighborhood(coords, 11, 9, window));
      CHECK(oracle::max_abs_diff(f, oracle::smooth(s, coords, 11, 9, window)) < 1e-12);
      for (Eigen::Index i = 0; i < f.rows(); ++i) CHECK(std::abs(f.row(i).sum() - 1.0) < 1e-6);
    }
  }

  SUBCASE("commutes with column permutations") {
    const auto coords = sparse_grid(8, 8, 4);
    Rng rng = substream(9, "perm");
    const MatrixD s = oracle::random_simplex_rows(static_cast<Eigen::Index>(coords.size()), 3, rng);
    const auto hood = spatial_neighborhood(coords, 8, 8, 5);
    MatrixD permuted(s.rows(), 3);
    permuted << s.col(2), s.col(0), s.col(1);
    const MatrixD f = spatial_smooth(s, *hood);
    MatrixD f_permuted(f.rows(), 3);
    f_permuted << f.col(2), f.col(0), f.col(1);
    CHECK(oracle::max_abs_diff(spatial_smooth(permuted, *hood), f_permuted) < 1e-15);
  }

  SUBCASE("window must be odd") {
    const auto coords = full_grid(3, 3);
    CHECK_THROWS_AS(spatial_neighborhood(coords, 3, 3, 4), ContractError);
  }
}
