#pragma once

// Non-local (mini-cluster) and local (masked spatial smoothing) structure
// constraints on the soft assignments S.

#include <cstddef>
#include <memory>
#include <span>

#include "scdsc/autodiff.hpp"
#include "scdsc/hsi.hpp"

namespace scdsc {

/// M = per-mini-cluster mean of the rows of S, computed as a scatter-mean.
template <typename T>
ad::Value<T> mini_cluster_mean(const ad::Value<T>& assignments, std::shared_ptr<const ad::GroupIndex> partition);

MatrixD mini_cluster_mean(const MatrixD& assignments, const ad::GroupIndex& partition);

/// Sharpened target: m~_pj proportional to m_pj^2 / f_j with f_j = sum_p m_pj,
/// each row renormalised. The result carries no gradient provenance.
MatrixD refine(const MatrixD& mini_assignments);

/// KL(target || q) = sum_ij t_ij log(t_ij / q_ij), differentiable through q
/// only. Zero target entries contribute nothing.
template <typename T>
ad::Value<T> kl_to_target(const MatrixD& target, const ad::Value<T>& q);

/// KL(M~ || M).
template <typename T>
ad::Value<T> nonlocal_loss(const ad::Value<T>& mini_assignments, const MatrixD& refined) {
  return kl_to_target(refined, mini_assignments);
}

/// KL(F || S).
template <typename T>
ad::Value<T> local_loss(const ad::Value<T>& assignments, const MatrixD& smoothed) {
  return kl_to_target(smoothed, assignments);
}

/// For every sample (a masked pixel at coords[i]) the samples inside the
/// window x window square centred on it. Pixels without a sample are outside
/// the task mask and therefore never listed. `window` must be odd.
std::shared_ptr<const ad::RowNeighborhood> spatial_neighborhood(std::span<const PixelCoord> coords, std::size_t width,
                                                                std::size_t height, std::size_t window);

/// F: masked window mean of S arranged on the raster, flattened back to
/// sample order.
MatrixD spatial_smooth(const MatrixD& assignments, const ad::RowNeighborhood& neighborhood);

}  // namespace scdsc
