#include "scdsc/hsi.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>

#include "scdsc/binary_io.hpp"
#include "scdsc/rng.hpp"

namespace scdsc {

HsiCube::HsiCube(std::size_t width, std::size_t height, std::size_t bands, std::vector<float> raster,
                 std::vector<std::uint16_t> labels)
    : width_(width), height_(height), bands_(bands), raster_(std::move(raster)), labels_(std::move(labels)) {
  if (width_ == 0 || height_ == 0 || bands_ == 0) throw ContractError("cube dimensions must be positive");
  if (raster_.size() != width_ * height_ * bands_) {
    throw DimensionError("cube raster has " + std::to_string(raster_.size()) + " values, expected " +
                         std::to_string(width_ * height_ * bands_));
  }
  if (!labels_.empty() && labels_.size() != width_ * height_) {
    throw DimensionError("cube labels have " + std::to_string(labels_.size()) + " values, expected " +
                         std::to_string(width_ * height_));
  }
  mask_.assign(width_ * height_, false);
  for (std::size_t i = 0; i < labels_.size(); ++i) mask_[i] = labels_[i] > 0;
}

std::size_t HsiCube::masked_count() const { return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), true)); }

std::vector<PixelCoord> HsiCube::masked_pixels() const {
  std::vector<PixelCoord> coords;
  coords.reserve(masked_count());
  for (std::size_t y = 0; y < height_; ++y) {
    for (std::size_t x = 0; x < width_; ++x) {
      if (masked(x, y)) coords.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)});
    }
  }
  return coords;
}

std::vector<std::uint16_t> HsiCube::masked_labels() const {
  std::vector<std::uint16_t> out;
  out.reserve(masked_count());
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (mask_[i]) out.push_back(labels_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// HSIC container

namespace {

std::size_t parse_dimension(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw LoadError(LoadError::Kind::header, "HSIC: missing '" + key + "' line");
  std::istringstream fields(line);
  std::string name;
  long long value = -1;
  std::string rest;
  if (!(fields >> name >> value) || name != key || value <= 0 || (fields >> rest)) {
    throw LoadError(LoadError::Kind::header, "HSIC: malformed '" + key + "' line: " + line);
  }
  return static_cast<std::size_t>(value);
}

}  // namespace

HsiCube read_cube(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "HSIC 1") {
    throw LoadError(LoadError::Kind::header, "HSIC: bad magic line");
  }
  const std::size_t width = parse_dimension(in, "width");
  const std::size_t height = parse_dimension(in, "height");
  const std::size_t bands = parse_dimension(in, "bands");
  if (!std::getline(in, line) || (line != "labels present" && line != "labels absent")) {
    throw LoadError(LoadError::Kind::header, "HSIC: malformed 'labels' line");
  }
  const bool has_labels = line == "labels present";
  if (!std::getline(in, line) || !line.empty()) {
    throw LoadError(LoadError::Kind::header, "HSIC: header must end with a blank line");
  }

  std::vector<float> raster;
  if (!io::read_array(in, width * height * bands, raster)) {
    throw LoadError(LoadError::Kind::truncated, "HSIC: raster payload truncated");
  }
  for (std::size_t i = 0; i < raster.size(); ++i) {
    if (!std::isfinite(raster[i])) {
      throw LoadError(LoadError::Kind::non_finite, "HSIC: non-finite raster value at index " + std::to_string(i));
    }
  }
  std::vector<std::uint16_t> labels;
  if (has_labels && !io::read_array(in, width * height, labels)) {
    throw LoadError(LoadError::Kind::truncated, "HSIC: label payload truncated");
  }
  return HsiCube(width, height, bands, std::move(raster), std::move(labels));
}

void write_cube(const HsiCube& cube, std::ostream& out) {
  out << "HSIC 1\n"
      << "width " << cube.width() << '\n'
      << "height " << cube.height() << '\n'
      << "bands " << cube.bands() << '\n'
      << "labels " << (cube.has_labels() ? "present" : "absent") << "\n\n";
  io::write_array(out, cube.raster());
  if (cube.has_labels()) io::write_array(out, cube.labels());
}

HsiCube load_cube(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::open, "cannot open " + path.string());
  return read_cube(in);
}

void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_cube(cube, out);
}

// ---------------------------------------------------------------------------
// Patches

std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= len) i = 2 * (len - 1) - i;
  return static_cast<std::size_t>(i);
}

PatchSet extract_patches(const HsiCube& cube, std::size_t edge) {
  if (edge == 0 || edge % 2 == 0) throw ContractError("patch edge must be odd, got " + std::to_string(edge));
  const std::size_t half = edge / 2;
  if (half + 1 > std::min(cube.width(), cube.height())) {
    throw ContractError("patch edge " + std::to_string(edge) + " too large for a " + std::to_string(cube.width()) +
                        "x" + std::to_string(cube.height()) + " raster");
  }

  PatchSet set;
  set.edge = edge;
  set.bands = cube.bands();
  set.width = cube.width();
  set.height = cube.height();
  set.coords = cube.masked_pixels();
  const std::size_t b = cube.bands();

  // Per-band z-score over the task area.
  set.band_mean.assign(b, 0.0);
  set.band_std.assign(b, 1.0);
  if (!set.coords.empty()) {
    const auto n = static_cast<double>(set.coords.size());
    for (const PixelCoord& p : set.coords) {
      const auto s = cube.spectrum(p.x, p.y);
      for (std::size_t k = 0; k < b; ++k) set.band_mean[k] += s[k];
    }
    for (double& m : set.band_mean) m /= n;
    std::vector<double> var(b, 0.0);
    for (const PixelCoord& p : set.coords) {
      const auto s = cube.spectrum(p.x, p.y);
      for (std::size_t k = 0; k < b; ++k) var[k] += (s[k] - set.band_mean[k]) * (s[k] - set.band_mean[k]);
    }
    for (std::size_t k = 0; k < b; ++k) {
      const double sd = std::sqrt(var[k] / n);
      set.band_std[k] = sd > 1e-8 * std::max(1.0, std::abs(set.band_mean[k])) ? sd : 1.0;
    }
  }

  const std::size_t w = cube.width();
  const std::size_t h = cube.height();
  std::vector<float> standardized(w * h * b);
  for (std::size_t pix = 0; pix < w * h; ++pix) {
    for (std::size_t k = 0; k < b; ++k) {
      standardized[pix * b + k] =
          static_cast<float>((cube.raster()[pix * b + k] - set.band_mean[k]) / set.band_std[k]);
    }
  }

  set.patches.resize(static_cast<Eigen::Index>(set.coords.size()), static_cast<Eigen::Index>(edge * edge * b));
  for (std::size_t i = 0; i < set.coords.size(); ++i) {
    float* row = set.patches.row(static_cast<Eigen::Index>(i)).data();
    const auto cx = static_cast<std::ptrdiff_t>(set.coords[i].x);
    const auto cy = static_cast<std::ptrdiff_t>(set.coords[i].y);
    std::size_t col = 0;
    for (std::ptrdiff_t dy = -static_cast<std::ptrdiff_t>(half); dy <= static_cast<std::ptrdiff_t>(half); ++dy) {
      const std::size_t sy = mirror_index(cy + dy, h);
      for (std::ptrdiff_t dx = -static_cast<std::ptrdiff_t>(half); dx <= static_cast<std::ptrdiff_t>(half); ++dx) {
        const std::size_t sx = mirror_index(cx + dx, w);
        std::copy_n(standardized.data() + (sy * w + sx) * b, b, row + col);
        col += b;
      }
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

std::vector<std::size_t> grow_regions(const std::vector<PixelCoord>& sites, std::size_t w, std::size_t h) {
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(w * h, unset);
  using Entry = std::tuple<double, std::size_t, std::size_t>;  // distance^2, site, pixel
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
  for (std::size_t s = 0; s < sites.size(); ++s) frontier.emplace(0.0, s, sites[s].y * w + sites[s].x);

  while (!frontier.empty()) {
    const auto [dist, site, pixel] = frontier.top();
    frontier.pop();
    if (owner[pixel] != unset) continue;
    owner[pixel] = site;
    const std::size_t x = pixel % w;
    const std::size_t y = pixel / w;
    auto push = [&, site = site](std::size_t nx, std::size_t ny) {
      const std::size_t np = ny * w + nx;
      if (owner[np] != unset) return;
      const double dx = static_cast<double>(nx) - sites[site].x;
      const double dy = static_cast<double>(ny) - sites[site].y;
      frontier.emplace(dx * dx + dy * dy, site, np);
    };
    if (x > 0) push(x - 1, y);
    if (x + 1 < w) push(x + 1, y);
    if (y > 0) push(x, y - 1);
    if (y + 1 < h) push(x, y + 1);
  }
  return owner;
}

}  // namespace

HsiCube synth_scene(const SceneSpec& spec) {
  if (spec.classes < 2) throw ContractError("synth_scene: need at least 2 classes");
  if (spec.subspace_dim == 0 || spec.subspace_dim >= spec.bands) {
    throw ContractError("synth_scene: subspace dimension q must satisfy 0 < q < bands");
  }
  if (spec.width * spec.height < spec.classes) throw ContractError("synth_scene: fewer pixels than classes");
  if (spec.noise < 0.0) throw ContractError("synth_scene: noise must be non-negative");

  const std::size_t w = spec.width;
  const std::size_t h = spec.height;
  const std::size_t b = spec.bands;
  const std::size_t q = spec.subspace_dim;

  // Sites on distinct pixels, spread out by rejection with a shrinking radius.
  Rng site_rng = substream(spec.seed, "sites");
  std::vector<PixelCoord> sites;
  double min_sep = 0.5 * std::sqrt(static_cast<double>(w * h) / static_cast<double>(spec.classes));
  int attempts = 0;
  while (sites.size() < spec.classes) {
    const PixelCoord c{static_cast<std::uint32_t>(uniform_index(site_rng, w)),
                       static_cast<std::uint32_t>(uniform_index(site_rng, h))};
    const bool ok = std::all_of(sites.begin(), sites.end(), [&](const PixelCoord& s) {
      const double dx = static_cast<double>(s.x) - c.x;
      const double dy = static_cast<double>(s.y) - c.y;
      return std::sqrt(dx * dx + dy * dy) >= std::max(min_sep, 1.0);
    });
    if (ok) sites.push_back(c);
    if (++attempts % 1000 == 0) min_sep *= 0.5;
  }
  const std::vector<std::size_t> owner = grow_regions(sites, w, h);

  Rng frame_rng = substream(spec.seed, "frames");
  std::vector<MatrixD> frames;
  for (std::size_t j = 0; j < spec.classes; ++j) {
    MatrixD gaussian(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(q));
    for (Eigen::Index i = 0; i < gaussian.size(); ++i) gaussian.data()[i] = standard_normal(frame_rng);
    Eigen::HouseholderQR<MatrixD> qr(gaussian);
    frames.push_back(qr.householderQ() * MatrixD::Identity(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(q)));
  }

  Rng pixel_rng = substream(spec.seed, "pixels");
  std::vector<float> raster(w * h * b);
  std::vector<std::uint16_t> labels(w * h);
  Eigen::VectorXd coeff(static_cast<Eigen::Index>(q));
  for (std::size_t pix = 0; pix < w * h; ++pix) {
    const std::size_t j = owner[pix];
    labels[pix] = static_cast<std::uint16_t>(j + 1);
    for (Eigen::Index c = 0; c < coeff.size(); ++c) coeff[c] = uniform01(pixel_rng);
    const Eigen::VectorXd spectrum = frames[j] * coeff;
    for (std::size_t k = 0; k < b; ++k) {
      const double noise = spec.noise > 0.0 ? spec.noise * standard_normal(pixel_rng) : 0.0;
      raster[pix * b + k] = static_cast<float>(spectrum[static_cast<Eigen::Index>(k)] + noise);
    }
  }
  return HsiCube(w, h, b, std::move(raster), std::move(labels));
}

}  // namespace scdsc
