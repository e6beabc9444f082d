#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "scdsc/autodiff.hpp"
#include "scdsc/constraints.hpp"
#include "scdsc/subspace.hpp"

using namespace scdsc;
using ad::Tape;
using ad::Value;

namespace {

MatrixD mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixD m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("forward examples") {
  Tape<double> t;
  auto a = t.constant(mat({{1, 0}}));
  auto b = t.constant(mat({{3}, {4}}));
  CHECK(ad::matmul(a, b).item() == 3.0);

  auto n = ad::row_l2norm(t.constant(mat({{3, 4}, {0, 0}})));
  CHECK(n.rows() == 2);
  CHECK(n.cols() == 1);
  CHECK(n.data()(0, 0) == doctest::Approx(5.0));
  CHECK(n.data()(1, 0) == 0.0);

  auto groups = ad::GroupIndex::make({0, 0, 1});
  auto m = ad::scatter_mean(t.constant(mat({{1}, {3}, {5}})), groups);
  CHECK(m.data()(0, 0) == doctest::Approx(2.0));
  CHECK(m.data()(1, 0) == doctest::Approx(5.0));
}

TEST_CASE("broadcasting add and sub") {
  Tape<double> t;
  auto a = t.constant(mat({{1, 2}, {3, 4}}));
  auto row = t.constant(mat({{10, 20}}));
  auto col = t.constant(mat({{1}, {2}}));
  CHECK(ad::add(a, row).data() == mat({{11, 22}, {13, 24}}));
  CHECK(ad::sub(a, col).data() == mat({{0, 1}, {1, 2}}));
}

TEST_CASE("shape errors name the op and both shapes") {
  Tape<double> t;
  auto a = t.constant(MatrixD::Zero(2, 3));
  auto b = t.constant(MatrixD::Zero(2, 3));
  try {
    ad::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("matmul") != std::string::npos);
    CHECK(what.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::hadamard(a, t.constant(MatrixD::Zero(3, 2))), DimensionError);
  CHECK_THROWS_AS(ad::reshape(a, 4, 2), DimensionError);
}

TEST_CASE("operands from different tapes are rejected") {
  Tape<double> t1, t2;
  auto a = t1.constant(MatrixD::Ones(1, 1));
  auto b = t2.constant(MatrixD::Ones(1, 1));
  CHECK_THROWS_AS(ad::add(a, b), ContractError);
}

TEST_CASE("backward contract") {
  SUBCASE("x^2 at 3 has gradient 6") {
    Tape<double> t;
    auto x = t.leaf(mat({{3}}));
    t.backward(ad::hadamard(x, x));
    CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
  }
  SUBCASE("non-scalar loss") {
    Tape<double> t;
    auto x = t.leaf(MatrixD::Ones(2, 1));
    CHECK_THROWS_AS(t.backward(x), ContractError);
  }
  SUBCASE("a tape is consumed once") {
    Tape<double> t;
    auto x = t.leaf(mat({{2}}));
    auto loss = ad::frobenius_sq(x);
    t.backward(loss);
    CHECK(t.consumed());
    CHECK_THROWS_AS(t.backward(loss), ContractError);
  }
  SUBCASE("no requires-grad leaves is a no-op") {
    Tape<double> t;
    auto x = t.constant(mat({{2}}));
    auto loss = ad::frobenius_sq(x);
    CHECK(t.node_count() == 0);
    CHECK_NOTHROW(t.backward(loss));
  }
  SUBCASE("leaves have no provenance, op outputs do") {
    Tape<double> t;
    auto x = t.leaf(mat({{2}}));
    auto y = ad::scale(x, 3.0);
    CHECK(x.is_leaf());
    CHECK_FALSE(y.is_leaf());
    for (std::size_t node = 0; node < t.node_count(); ++node) {
      for (std::size_t in : t.node_inputs(node)) CHECK(in < t.value_count());
    }
  }
  SUBCASE("gradient shape equals data shape") {
    Tape<double> t;
    auto w = t.leaf(MatrixD::Ones(3, 2));
    auto unused = t.leaf(MatrixD::Ones(4, 4));
    t.backward(ad::sum(ad::relu(w)));
    CHECK(w.grad().rows() == 3);
    CHECK(w.grad().cols() == 2);
    CHECK(unused.grad() == MatrixD::Zero(4, 4));
  }
}

TEST_CASE("KL at its minimum has no gradient along the simplex") {
  scdsc::Rng rng = substream(3, "kl");
  const MatrixD p = oracle::random_simplex_rows(4, 3, rng);
  Tape<double> t;
  auto q = t.leaf(p);
  t.backward(kl_to_target(p, q));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mean = q.grad().row(i).mean();
    CHECK((q.grad().row(i).array() - mean).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("grad_check examples") {
  scdsc::Rng rng = substream(5, "gradcheck");
  SUBCASE("Frobenius norm squared") {
    const std::vector<MatrixD> leaves{oracle::random_matrix(4, 4, rng)};
    auto r = ad::grad_check([](Tape<double>&, std::span<const Value<double>> v) { return ad::frobenius_sq(v[0]); },
                            leaves);
    CHECK(r.passed(1e-6));
  }
  SUBCASE("basis dissimilarity") {
    const BasisShape shape{3, 2, 0.1};
    const std::vector<MatrixD> leaves{oracle::random_matrix(6, 6, rng)};
    auto r = ad::grad_check(
        [&](Tape<double>&, std::span<const Value<double>> v) { return dissimilarity_loss(v[0], shape); }, leaves);
    CHECK(r.passed(1e-4));
  }
  SUBCASE("non-local KL with fixed target") {
    const MatrixD target = refine(oracle::random_simplex_rows(3, 4, rng));
    const std::vector<MatrixD> leaves{oracle::random_simplex_rows(3, 4, rng)};
    auto r = ad::grad_check(
        [&](Tape<double>&, std::span<const Value<double>> v) { return nonlocal_loss(v[0], target); }, leaves);
    CHECK(r.passed(1e-4));
  }
  SUBCASE("NaN is reported") {
    const std::vector<MatrixD> leaves{mat({{1.0, -1.0}})};
    auto r = ad::grad_check([](Tape<double>&, std::span<const Value<double>> v) { return ad::sum(ad::log(v[0])); },
                            leaves);
    CHECK_FALSE(r.finite);
    CHECK_FALSE(r.passed(1e-4));
    CHECK(r.worst_leaf == 0);
    CHECK(r.worst_entry == 0);
  }
}

TEST_CASE("analytic gradients agree with an independent finite-difference oracle") {
  scdsc::Rng rng = substream(11, "fd");
  const MatrixD a0 = oracle::random_matrix(3, 4, rng);
  const MatrixD b0 = oracle::random_matrix(4, 2, rng);
  auto builder = [](Tape<double>&, const Value<double>& a, const Value<double>& b) {
    auto h = ad::relu(ad::matmul(a, b));
    auto n = ad::row_normalize(ad::add_scalar(ad::row_l2norm(ad::matmul(a, b)), 0.5));
    return ad::add(ad::frobenius_sq(h), ad::sum(ad::log(ad::add_scalar(n, 1.0))));
  };
  Tape<double> t;
  auto a = t.leaf(a0);
  auto b = t.leaf(b0);
  t.backward(builder(t, a, b));
  const auto numeric = oracle::numeric_gradient(
      [&](const std::vector<MatrixD>& args) {
        Tape<double> tt;
        return builder(tt, tt.constant(args[0]), tt.constant(args[1])).item();
      },
      {a0, b0});
  CHECK(oracle::max_abs_diff(a.grad(), numeric[0]) < 1e-6);
  CHECK(oracle::max_abs_diff(b.grad(), numeric[1]) < 1e-6);
}

TEST_CASE("scatter-mean backward divides by the group size") {
  auto groups = ad::GroupIndex::make({0, 1, 0, 0});
  Tape<double> t;
  auto s = t.leaf(MatrixD::Ones(4, 2));
  auto m = ad::scatter_mean(s, groups);
  auto w = t.constant(mat({{1, 2}, {3, 4}}));
  t.backward(ad::sum(ad::hadamard(m, w)));
  CHECK(s.grad()(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(s.grad()(1, 1) == doctest::Approx(4.0));
  CHECK(s.grad()(3, 1) == doctest::Approx(2.0 / 3));
}

TEST_CASE("group index validation") {
  CHECK_THROWS_AS(ad::GroupIndex::make({0, 2}), ContractError);
  CHECK(ad::GroupIndex::make({1, 0, 1})->groups() == 2);
}

TEST_CASE("float tapes train, double tapes check") {
  Tape<float> t;
  auto x = t.leaf(ad::Matrix<float>::Constant(2, 2, 1.5f));
  t.backward(ad::frobenius_sq(x));
  CHECK(x.grad()(1, 1) == doctest::Approx(3.0f));
}
