#include "scdsc/constraints.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace scdsc {

template <typename T>
ad::Value<T> mini_cluster_mean(const ad::Value<T>& assignments, std::shared_ptr<const ad::GroupIndex> partition) {
  return ad::scatter_mean(assignments, std::move(partition));
}

MatrixD mini_cluster_mean(const MatrixD& assignments, const ad::GroupIndex& partition) {
  ad::Tape<double> tape;
  auto shared = std::make_shared<const ad::GroupIndex>(partition);
  return mini_cluster_mean(tape.constant(assignments), std::move(shared)).data();
}

MatrixD refine(const MatrixD& mini_assignments) {
  const Eigen::RowVectorXd frequency = mini_assignments.colwise().sum();
  for (ad::Index j = 0; j < frequency.size(); ++j) {
    if (!(frequency[j] > 0.0)) throw ContractError("refine: column " + std::to_string(j) + " has zero frequency");
  }
  MatrixD sharpened = mini_assignments.cwiseAbs2().array().rowwise() / frequency.array();
  const Eigen::VectorXd row_total = sharpened.rowwise().sum();
  for (ad::Index p = 0; p < sharpened.rows(); ++p) {
    if (!(row_total[p] > 0.0)) throw ContractError("refine: row " + std::to_string(p) + " has no mass");
    sharpened.row(p) /= row_total[p];
  }
  return sharpened;
}

template <typename T>
ad::Value<T> kl_to_target(const MatrixD& target, const ad::Value<T>& q) {
  if (target.rows() != q.rows() || target.cols() != q.cols()) {
    throw DimensionError("kl_to_target: target is " + std::to_string(target.rows()) + "x" +
                         std::to_string(target.cols()) + ", prediction is " + std::to_string(q.rows()) + "x" +
                         std::to_string(q.cols()));
  }
  double entropy_part = 0.0;  // sum t log t, constant w.r.t. q
  for (ad::Index i = 0; i < target.size(); ++i) {
    const double t = target.data()[i];
    if (t > 0.0) entropy_part += t * std::log(t);
  }
  ad::Tape<T>& tape = *q.tape();
  const ad::Value<T> weights = tape.constant(target.template cast<T>());
  const ad::Value<T> cross = ad::sum(ad::hadamard(weights, ad::log(q)));
  return ad::add_scalar(ad::scale(cross, T(-1)), static_cast<T>(entropy_part));
}

std::shared_ptr<const ad::RowNeighborhood> spatial_neighborhood(std::span<const PixelCoord> coords, std::size_t width,
                                                                std::size_t height, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ContractError("smoothing window must be odd, got " + std::to_string(window));
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> sample_at(width * height, none);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].x >= width || coords[i].y >= height) throw ContractError("spatial_neighborhood: coordinate outside raster");
    std::size_t& slot = sample_at[coords[i].y * width + coords[i].x];
    if (slot != none) throw ContractError("spatial_neighborhood: duplicate pixel coordinate");
    slot = i;
  }

  auto nb = std::make_shared<ad::RowNeighborhood>();
  nb->source_rows = coords.size();
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  for (const PixelCoord& c : coords) {
    for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
      const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(c.y) + dy;
      if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
      for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(c.x) + dx;
        if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) continue;
        const std::size_t s = sample_at[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
        if (s != none) nb->members.push_back(s);
      }
    }
    nb->offsets.push_back(nb->members.size());
  }
  return nb;
}

MatrixD spatial_smooth(const MatrixD& assignments, const ad::RowNeighborhood& neighborhood) {
  ad::Tape<double> tape;
  auto shared = std::shared_ptr<const ad::RowNeighborhood>(&neighborhood, [](const ad::RowNeighborhood*) {});
  return ad::masked_mean_filter(tape.constant(assignments), shared).data();
}

template ad::Value<float> mini_cluster_mean(const ad::Value<float>&, std::shared_ptr<const ad::GroupIndex>);
template ad::Value<double> mini_cluster_mean(const ad::Value<double>&, std::shared_ptr<const ad::GroupIndex>);
template ad::Value<float> kl_to_target(const MatrixD&, const ad::Value<float>&);
template ad::Value<double> kl_to_target(const MatrixD&, const ad::Value<double>&);

}  // namespace scdsc
