#include "scdsc/rng.hpp"

#include <cmath>
#include <numbers>

namespace scdsc {

double standard_normal(Rng& rng) {
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  const double v = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

}  // namespace scdsc
