#pragma once

// Random manifold samples shared by the unit suites and the acceptance binary.

#include <cmath>
#include <numbers>
#include <vector>

#include "gsg/manifold.hpp"
#include "gsg/random.hpp"

namespace gsg::testing {

inline Vec gaussian(Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

/// Largest tangent norm that stays inside the injectivity radius (infinite off the sphere,
/// capped at `cap`).
inline double safe_radius(Curvature k, double cap = 3.0) {
  if (k.geometry() != Geometry::spherical) return cap;
  return std::min(cap, 0.9 * std::numbers::pi / k.sqrt_abs());
}

/// Tangent vector at x with a random direction and norm uniform in [0, max_norm].
inline Vec random_tangent(Rng& rng, const ManifoldPoint& x, double max_norm) {
  Vec raw = gaussian(rng, x.coords.size());
  Vec t = project_to_tangent(x, raw).coords;
  const double n = tangent_norm(t, x.curvature);
  const double target = max_norm * rng.uniform();
  if (n > 0)
    for (double& c : t) c *= target / n;
  return t;
}

/// Point reached from the origin by a random tangent of norm at most max_norm.
inline ManifoldPoint random_point(Rng& rng, Curvature k, std::size_t d, double max_norm = 1.5) {
  const ManifoldPoint o = origin(k, d);
  return exp_map(o, random_tangent(rng, o, std::min(max_norm, safe_radius(k))));
}

}  // namespace gsg::testing
