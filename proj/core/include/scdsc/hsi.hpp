#pragma once

// Hyperspectral cubes, the HSIC container, patch extraction and synthetic
// scenes.
//
// HSIC layout: a text header
//
//   HSIC 1
//   width W
//   height H
//   bands B
//   labels present|absent
//   <blank line>
//
// followed by W*H*B little-endian float32 values in band-interleaved-by-pixel
// order (pixels row-major, y outer), then, when present, W*H little-endian
// uint16 labels with 0 meaning "unlabeled".

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "scdsc/autodiff.hpp"

namespace scdsc {

using MatrixF = ad::Matrix<float>;
using MatrixD = ad::Matrix<double>;

struct PixelCoord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;

  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

class HsiCube {
 public:
  HsiCube() = default;
  /// `labels` may be empty (no ground truth); otherwise it must hold
  /// width*height entries.
  HsiCube(std::size_t width, std::size_t height, std::size_t bands, std::vector<float> raster,
          std::vector<std::uint16_t> labels = {});

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t bands() const { return bands_; }
  std::size_t pixel_count() const { return width_ * height_; }
  bool has_labels() const { return !labels_.empty(); }

  std::span<const float> raster() const { return raster_; }
  std::span<const std::uint16_t> labels() const { return labels_; }
  /// Task mask: true iff the pixel carries a label > 0.
  const std::vector<bool>& mask() const { return mask_; }

  float at(std::size_t x, std::size_t y, std::size_t band) const {
    return raster_[(y * width_ + x) * bands_ + band];
  }
  std::span<const float> spectrum(std::size_t x, std::size_t y) const {
    return std::span<const float>(raster_).subspan((y * width_ + x) * bands_, bands_);
  }
  std::uint16_t label(std::size_t x, std::size_t y) const { return has_labels() ? labels_[y * width_ + x] : 0; }
  bool masked(std::size_t x, std::size_t y) const { return mask_[y * width_ + x]; }

  std::size_t masked_count() const;
  /// Masked pixels in raster order; this is the sample order used everywhere.
  std::vector<PixelCoord> masked_pixels() const;
  /// Ground-truth labels of the masked pixels, in raster order.
  std::vector<std::uint16_t> masked_labels() const;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t bands_ = 0;
  std::vector<float> raster_;
  std::vector<std::uint16_t> labels_;
  std::vector<bool> mask_;
};

HsiCube read_cube(std::istream& in);
void write_cube(const HsiCube& cube, std::ostream& out);
HsiCube load_cube(const std::filesystem::path& path);
void save_cube(const HsiCube& cube, const std::filesystem::path& path);

/// Band-standardised spatial-spectral patches centred on masked pixels.
struct PatchSet {
  std::size_t edge = 0;
  std::size_t bands = 0;
  std::size_t width = 0;   // of the source raster
  std::size_t height = 0;  // of the source raster
  /// n x (edge*edge*bands); each row is ordered (row offset, column offset, band).
  MatrixF patches;
  std::vector<PixelCoord> coords;
  std::vector<double> band_mean;
  std::vector<double> band_std;

  std::size_t size() const { return coords.size(); }
  std::size_t features() const { return edge * edge * bands; }
};

/// Mirror index into [0, n) reflecting about the edge pixel (-1 -> 1).
std::size_t mirror_index(std::ptrdiff_t i, std::size_t n);

/// Extracts one patch per masked pixel. Bands are z-scored with statistics
/// over masked pixels; constant bands use divisor 1. Borders are mirror-padded.
PatchSet extract_patches(const HsiCube& cube, std::size_t edge);

struct SceneSpec {
  std::uint64_t seed = 7;
  std::size_t width = 40;
  std::size_t height = 40;
  std::size_t bands = 24;
  std::size_t classes = 4;
  std::size_t subspace_dim = 3;
  double noise = 0.01;
};

/// Synthetic union-of-subspaces scene. Regions are grown from seeded sites in
/// order of Euclidean distance (a 4-connected discrete Voronoi partition);
/// class j spectra are U_j c + e with U_j a random orthonormal bands x q
/// frame, c ~ U[0,1]^q and e ~ N(0, noise^2). Every pixel is labeled.
HsiCube synth_scene(const SceneSpec& spec);

}  // namespace scdsc
