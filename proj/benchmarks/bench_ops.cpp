#include <benchmark/benchmark.h>

#include "scdsc/constraints.hpp"
#include "scdsc/finch.hpp"
#include "scdsc/subspace.hpp"

namespace {

using scdsc::MatrixD;
using scdsc::MatrixF;

MatrixF random_f(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  scdsc::Rng rng = scdsc::substream(seed, "bench");
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(scdsc::standard_normal(rng));
  return m;
}

void BM_SoftAssign(benchmark::State& state) {
  const auto n = state.range(0);
  const std::size_t k = 8;
  const std::size_t r = 5;
  const MatrixF latent = random_f(n, static_cast<Eigen::Index>(k * r), 1);
  scdsc::BasisSet bases{random_f(static_cast<Eigen::Index>(k * r), static_cast<Eigen::Index>(k * r), 2), {k, r, 0.1}};
  for (auto _ : state) benchmark::DoNotOptimize(scdsc::soft_assign(latent, bases));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SoftAssign)->Arg(1 << 12)->Arg(1 << 14);

void BM_ScatterMean(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::size_t> index(n);
  for (std::size_t i = 0; i < n; ++i) index[i] = i % (n / 16);
  const auto groups = scdsc::ad::GroupIndex::make(index);
  const MatrixD s = random_f(static_cast<Eigen::Index>(n), 8, 3).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(scdsc::mini_cluster_mean(s, *groups));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ScatterMean)->Arg(1 << 12)->Arg(1 << 16);

void BM_MaskedFilter(benchmark::State& state) {
  const auto side = static_cast<std::uint32_t>(state.range(0));
  std::vector<scdsc::PixelCoord> coords;
  for (std::uint32_t y = 0; y < side; ++y) {
    for (std::uint32_t x = 0; x < side; ++x) {
      if ((x * 7 + y * 3) % 5 != 0) coords.push_back({x, y});
    }
  }
  const auto nb = scdsc::spatial_neighborhood(coords, side, side, 7);
  const MatrixD s = random_f(static_cast<Eigen::Index>(coords.size()), 8, 4).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(scdsc::spatial_smooth(s, *nb));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(coords.size()));
}
BENCHMARK(BM_MaskedFilter)->Arg(64)->Arg(256);

void BM_FirstNeighbors(benchmark::State& state) {
  const MatrixD points = random_f(state.range(0), 64, 5).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(scdsc::finch::first_neighbors(points, scdsc::finch::Metric::cosine));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FirstNeighbors)->Arg(1 << 10)->Arg(1 << 12);

}  // namespace
