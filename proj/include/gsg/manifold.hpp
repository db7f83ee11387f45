#pragma once

// Constant-curvature geometry in ambient coordinates.
//
//   kappa > 0 : hypersphere  { x in R^{d+1} : <x,x> = 1/kappa }, Euclidean dot
//   kappa < 0 : hyperboloid  { x in R^{d+1} : <x,x>_L = 1/kappa, x0 > 0 }, Lorentz product
//   kappa = 0 : R^d, plain vector arithmetic
//
// Distances are computed from the chord length (2 asin / 2 asinh form), which is
// exact on the manifold and keeps full precision for nearby points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsg/errors.hpp"

namespace gsg {

using Vec = std::vector<double>;

enum class Geometry { spherical, flat, hyperbolic };

class Curvature {
 public:
  constexpr Curvature() = default;
  explicit Curvature(double kappa) : kappa_(kappa) {
    if (!std::isfinite(kappa)) throw DomainError("curvature must be finite");
  }

  double value() const noexcept { return kappa_; }
  Geometry geometry() const noexcept {
    if (kappa_ > 0) return Geometry::spherical;
    if (kappa_ < 0) return Geometry::hyperbolic;
    return Geometry::flat;
  }
  bool is_flat() const noexcept { return kappa_ == 0.0; }
  double sqrt_abs() const noexcept { return std::sqrt(std::abs(kappa_)); }

  friend bool operator==(const Curvature&, const Curvature&) = default;

 private:
  double kappa_ = 0.0;
};

/// Length of the coordinate vector for an intrinsic dimension d.
inline std::size_t ambient_dim(Curvature k, std::size_t d) { return k.is_flat() ? d : d + 1; }

struct ManifoldPoint {
  Vec coords;
  Curvature curvature;

  std::size_t intrinsic_dim() const { return curvature.is_flat() ? coords.size() : coords.size() - 1; }
};

struct TangentVector {
  Vec coords;
  ManifoldPoint base;
};

struct TrigPair {
  double cos_k;
  double sin_k;
};

/// Curvature-dependent cosine and sine: circular for kappa > 0, (1, z) for kappa = 0,
/// hyperbolic for kappa < 0, with the argument scaled by sqrt(|kappa|).
inline TrigPair curvature_trig(double z, Curvature k) {
  if (!std::isfinite(z)) throw DomainError("curvature_trig: argument must be finite");
  const double s = k.sqrt_abs();
  switch (k.geometry()) {
    case Geometry::spherical: return {std::cos(s * z), std::sin(s * z) / s};
    case Geometry::hyperbolic: return {std::cosh(s * z), std::sinh(s * z) / s};
    case Geometry::flat: break;
  }
  return {1.0, z};
}

/// Euclidean dot for kappa >= 0, Lorentz product -x0 y0 + sum x_i y_i for kappa < 0.
inline double inner_product(std::span<const double> x, std::span<const double> y, Curvature k) {
  if (x.size() != y.size()) throw ShapeError("inner_product: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  if (k.geometry() == Geometry::hyperbolic && !x.empty()) acc -= 2.0 * x[0] * y[0];
  return acc;
}

inline double euclidean_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double a : v) acc += a * a;
  return std::sqrt(acc);
}

/// Norm of a tangent vector under the manifold metric.
inline double tangent_norm(std::span<const double> t, Curvature k) {
  if (k.geometry() == Geometry::hyperbolic) return std::sqrt(std::max(0.0, inner_product(t, t, k)));
  return euclidean_norm(t);
}

inline ManifoldPoint origin(Curvature k, std::size_t d) {
  if (d == 0) throw DomainError("origin: dimension must be positive");
  ManifoldPoint o{Vec(ambient_dim(k, d), 0.0), k};
  if (!k.is_flat()) o.coords[0] = 1.0 / k.sqrt_abs();
  return o;
}

/// Distance from the defining constraint, normalised so that it can be compared to 1e-9.
inline double constraint_violation(std::span<const double> x, Curvature k) {
  if (k.is_flat()) return 0.0;
  const double target = 1.0 / k.value();
  return std::abs(inner_product(x, x, k) - target) / (1.0 + std::abs(target));
}

inline bool is_on_manifold(const ManifoldPoint& p, double tol = 1e-9) {
  for (double c : p.coords)
    if (!std::isfinite(c)) return false;
  if (p.curvature.is_flat()) return true;
  if (p.coords.size() < 2) return false;
  if (p.curvature.geometry() == Geometry::hyperbolic && p.coords[0] <= 0.0) return false;
  return constraint_violation(p.coords, p.curvature) <= tol;
}

namespace detail {

constexpr double kSeriesCutoff = 1e-2;
/// Clamp window for inverse trig arguments; larger excursions are treated as a numeric failure.
constexpr double kDomainSlack = 1e-7;
constexpr double kInjectivityMargin = 1e-6;

/// sin(t)/t or sinh(t)/t.
inline double sinc(double t, Geometry g) {
  if (std::abs(t) < kSeriesCutoff) {
    const double t2 = t * t;
    return g == Geometry::spherical ? 1.0 - t2 / 6.0 + t2 * t2 / 120.0 : 1.0 + t2 / 6.0 + t2 * t2 / 120.0;
  }
  return g == Geometry::spherical ? std::sin(t) / t : std::sinh(t) / t;
}

inline double cosg(double t, Geometry g) { return g == Geometry::spherical ? std::cos(t) : std::cosh(t); }
inline double sing(double t, Geometry g) { return g == Geometry::spherical ? std::sin(t) : std::sinh(t); }

/// (t cos t - sin t) / t^3, hyperbolic analogue for Geometry::hyperbolic.
inline double sinc_slope(double t, Geometry g) {
  const double t2 = t * t;
  if (std::abs(t) < kSeriesCutoff)
    return g == Geometry::spherical ? -1.0 / 3.0 + t2 / 30.0 : 1.0 / 3.0 + t2 / 30.0;
  return g == Geometry::spherical ? (t * std::cos(t) - std::sin(t)) / (t2 * t)
                                  : (t * std::cosh(t) - std::sinh(t)) / (t2 * t);
}

/// psi(t) = t / sin t (or t / sinh t), the log-map scale factor.
inline double inv_sinc(double t, Geometry g) { return 1.0 / sinc(t, g); }

/// psi'(t) / sin t, resp. psi'(t) / sinh t.
inline double inv_sinc_slope(double t, Geometry g) {
  const double t2 = t * t;
  if (std::abs(t) < kSeriesCutoff)
    return g == Geometry::spherical ? 1.0 / 3.0 + 2.0 * t2 / 15.0 : -1.0 / 3.0 + 2.0 * t2 / 15.0;
  const double s = sing(t, g);
  return (s - t * cosg(t, g)) / (s * s * s);
}

struct Angle {
  double theta;  // sqrt(|kappa|) * geodesic distance
  int branch;    // 0 interior, +1 clamped at the upper limit, -1 clamped at the lower limit
};

/// Geodesic angle between two ambient points via the chord w = x - y.
/// Sphere: theta = 2 asin(sqrt(k) |w| / 2), or pi - 2 asin(sqrt(k) |x + y| / 2) past a right angle. Hyperboloid: theta = 2 asinh(sqrt(-k <w,w>_L) / 2).
inline Angle chord_angle(std::span<const double> x, std::span<const double> y, Curvature k) {
  const Geometry g = k.geometry();
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = x[i] - y[i];
    m += w * w;
  }
  if (g == Geometry::hyperbolic) {
    const double w0 = x[0] - y[0];
    m -= 2.0 * w0 * w0;
  }
  const double a2 = std::abs(k.value()) * m / 4.0;  // sin^2(theta/2) or sinh^2(theta/2)
  if (g == Geometry::spherical) {
    if (a2 > 1.0 + kDomainSlack) throw NumericError("geodesic distance: points are not on the same sphere");
    if (a2 <= 0.5) return {2.0 * std::asin(std::sqrt(a2)), 0};
    // obtuse: asin is flat near 1, measure the chord to the antipode of y instead
    double mp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i] + y[i];
      mp += v * v;
    }
    return {std::numbers::pi - 2.0 * std::asin(std::min(1.0, std::sqrt(std::abs(k.value()) * mp / 4.0))), 0};
  }
  if (a2 < 0.0) {
    // rounding in the Lorentz product grows with the squared coordinate size
    double scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) scale += x[i] * x[i] + y[i] * y[i];
    if (a2 < -kDomainSlack * (1.0 + std::abs(k.value()) * scale)) throw NumericError("geodesic distance: chord is time-like, points are off the hyperboloid");
    return {0.0, -1};
  }
  return {2.0 * std::asinh(std::sqrt(a2)), 0};
}

inline void check_same_manifold(const ManifoldPoint& x, const ManifoldPoint& y, const char* op) {
  if (!(x.curvature == y.curvature)) throw ShapeError(std::string(op) + ": points have different curvature");
  if (x.coords.size() != y.coords.size()) throw ShapeError(std::string(op) + ": dimension mismatch");
}

/// exp_x(t) into out. Throws DomainError past the injectivity radius of a sphere unless
/// guard is off, in which case the geodesic simply wraps around.
inline void exp_map_raw(std::span<const double> x, std::span<const double> t, Curvature k, std::span<double> out,
                        bool guard = true) {
  const Geometry g = k.geometry();
  if (g == Geometry::flat) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + t[i];
    return;
  }
  const double n = tangent_norm(t, k);
  if (n == 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
    return;
  }
  const double theta = k.sqrt_abs() * n;
  if (guard && g == Geometry::spherical && theta >= std::numbers::pi - kInjectivityMargin)
    throw DomainError("exp_map: tangent vector exceeds the injectivity radius of the sphere");
  const double c = cosg(theta, g);
  const double phi = sinc(theta, g);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i] + phi * t[i];
}

/// log_x(y) into out. Unguarded, a spherical pair at or near the antipode gets whichever direction
/// rounding picks; only a non-finite result is an error.
inline void log_map_raw(std::span<const double> x, std::span<const double> y, Curvature k, std::span<double> out,
                        bool guard = true) {
  const Geometry g = k.geometry();
  if (g == Geometry::flat) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = y[i] - x[i];
    return;
  }
  const Angle a = chord_angle(x, y, k);
  if (a.theta == 0.0) {
    for (double& o : out) o = 0.0;
    return;
  }
  if (guard && g == Geometry::spherical && a.theta >= std::numbers::pi - kInjectivityMargin)
    throw SingularityError("log_map: antipodal points have no unique geodesic");
  const double z = k.value() * inner_product(x, y, k);
  const double psi = inv_sinc(a.theta, g);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = psi * (y[i] - z * x[i]);
    if (!std::isfinite(out[i])) throw NumericError("log_map: non-finite result");
  }
}

inline double sq_distance_raw(std::span<const double> x, std::span<const double> y, Curvature k) {
  if (k.is_flat()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    return acc;
  }
  const double theta = chord_angle(x, y, k).theta;
  return theta * theta / std::abs(k.value());
}

inline void project_point_raw(std::span<const double> raw, Curvature k, std::span<double> out) {
  switch (k.geometry()) {
    case Geometry::flat:
      for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i];
      return;
    case Geometry::spherical: {
      const double n = euclidean_norm(raw);
      if (n == 0.0) throw DomainError("project_to_manifold: zero vector has no direction on the sphere");
      const double scale = 1.0 / (k.sqrt_abs() * n);
      for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * scale;
      return;
    }
    case Geometry::hyperbolic: {
      double spatial = 0.0;
      for (std::size_t i = 1; i < raw.size(); ++i) {
        out[i] = raw[i];
        spatial += raw[i] * raw[i];
      }
      out[0] = std::sqrt(1.0 / std::abs(k.value()) + spatial);
      return;
    }
  }
}

}  // namespace detail

/// Moves from x along the geodesic with initial velocity t.
inline ManifoldPoint exp_map(const ManifoldPoint& x, const TangentVector& t) {
  if (t.coords.size() != x.coords.size()) throw ShapeError("exp_map: tangent length does not match base point");
  ManifoldPoint out{Vec(x.coords.size()), x.curvature};
  detail::exp_map_raw(x.coords, t.coords, x.curvature, out.coords);
  if (!x.curvature.is_flat() && tangent_norm(t.coords, x.curvature) != 0.0)
    detail::project_point_raw(Vec(out.coords), x.curvature, out.coords);
  return out;
}

inline ManifoldPoint exp_map(const ManifoldPoint& x, std::span<const double> t) {
  return exp_map(x, TangentVector{Vec(t.begin(), t.end()), x});
}

/// Tangent vector at x pointing to y with length d(x, y).
inline TangentVector log_map(const ManifoldPoint& x, const ManifoldPoint& y) {
  detail::check_same_manifold(x, y, "log_map");
  TangentVector t{Vec(x.coords.size()), x};
  detail::log_map_raw(x.coords, y.coords, x.curvature, t.coords);
  return t;
}

inline double geodesic_distance(const ManifoldPoint& x, const ManifoldPoint& y) {
  detail::check_same_manifold(x, y, "geodesic_distance");
  return std::sqrt(detail::sq_distance_raw(x.coords, y.coords, x.curvature));
}

/// Renormalises a drifted ambient vector onto the manifold: radial rescale on the sphere,
/// time-like coordinate recomputed from the spatial part on the hyperboloid.
inline ManifoldPoint project_to_manifold(std::span<const double> raw, Curvature k) {
  if (!k.is_flat() && raw.size() < 2) throw ShapeError("project_to_manifold: need at least two ambient coordinates");
  ManifoldPoint out{Vec(raw.size()), k};
  detail::project_point_raw(raw, k, out.coords);
  return out;
}

/// Removes the normal component: raw - kappa <x, raw> x.
inline TangentVector project_to_tangent(const ManifoldPoint& x, std::span<const double> raw) {
  if (raw.size() != x.coords.size()) throw ShapeError("project_to_tangent: length mismatch");
  TangentVector t{Vec(raw.begin(), raw.end()), x};
  if (x.curvature.is_flat()) return t;
  const double c = x.curvature.value() * inner_product(x.coords, raw, x.curvature);
  for (std::size_t i = 0; i < raw.size(); ++i) t.coords[i] -= c * x.coords[i];
  return t;
}

// ---------------------------------------------------------------------------
// Product manifolds

struct ManifoldComponent {
  Curvature curvature;
  std::size_t dim;

  friend bool operator==(const ManifoldComponent&, const ManifoldComponent&) = default;
};

struct ProductManifoldSpec {
  std::vector<ManifoldComponent> components;

  std::size_t total_dim() const {
    std::size_t s = 0;
    for (const auto& c : components) s += c.dim;
    return s;
  }
  std::size_t size() const { return components.size(); }

  friend bool operator==(const ProductManifoldSpec&, const ProductManifoldSpec&) = default;
};

/// Parses strings such as "s4xs8xh16": components joined by 'x', each a geometry letter
/// (s sphere, e flat, h hyperbolic) followed by its dimension. Every component gets
/// |kappa| = curvature_magnitude. When expected_total is given the dimensions must sum to it.
inline ProductManifoldSpec parse_geometry_spec(std::string_view spec, std::optional<std::size_t> expected_total = {},
                                               double curvature_magnitude = 1.0) {
  ProductManifoldSpec out;
  std::size_t pos = 0;
  while (true) {
    std::size_t end = spec.find('x', pos);
    if (end == std::string_view::npos) end = spec.size();
    const std::string token(spec.substr(pos, end - pos));
    if (token.size() < 2) throw ParseError("geometry spec: malformed component '" + token + "'", token);
    double kappa = 0.0;
    switch (token[0]) {
      case 's': kappa = curvature_magnitude; break;
      case 'e': kappa = 0.0; break;
      case 'h': kappa = -curvature_magnitude; break;
      default: throw ParseError("geometry spec: unknown geometry in component '" + token + "'", token);
    }
    std::size_t dim = 0;
    for (std::size_t i = 1; i < token.size(); ++i) {
      const char c = token[i];
      if (c < '0' || c > '9') throw ParseError("geometry spec: bad dimension in component '" + token + "'", token);
      dim = dim * 10 + static_cast<std::size_t>(c - '0');
      if (dim > 1'000'000) throw ParseError("geometry spec: dimension too large in '" + token + "'", token);
    }
    if (dim == 0) throw ParseError("geometry spec: zero dimension in component '" + token + "'", token);
    out.components.push_back({Curvature(kappa), dim});
    if (end == spec.size()) break;
    pos = end + 1;
  }
  if (expected_total && out.total_dim() != *expected_total)
    throw ParseError("geometry spec: dimensions sum to " + std::to_string(out.total_dim()) + ", expected " +
                         std::to_string(*expected_total),
                     std::string(spec));
  return out;
}

inline std::string format_geometry_spec(const ProductManifoldSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.components.size(); ++i) {
    if (i) out += 'x';
    switch (spec.components[i].curvature.geometry()) {
      case Geometry::spherical: out += 's'; break;
      case Geometry::flat: out += 'e'; break;
      case Geometry::hyperbolic: out += 'h'; break;
    }
    out += std::to_string(spec.components[i].dim);
  }
  return out;
}

struct ProductDistance {
  std::vector<double> per_component;
  double total = 0.0;
};

/// Squared geodesic distance on each factor and their sum.
inline ProductDistance product_distance_sq(std::span<const ManifoldPoint> u, std::span<const ManifoldPoint> v,
                                           const ProductManifoldSpec& spec) {
  if (u.size() != spec.size() || v.size() != spec.size())
    throw ShapeError("product_distance_sq: component count does not match the spec");
  ProductDistance out;
  for (std::size_t m = 0; m < spec.size(); ++m) {
    const auto& c = spec.components[m];
    for (const ManifoldPoint* p : {&u[m], &v[m]}) {
      if (!(p->curvature == c.curvature) || p->coords.size() != ambient_dim(c.curvature, c.dim))
        throw ShapeError("product_distance_sq: component " + std::to_string(m) + " does not match the spec");
    }
    const double d2 = detail::sq_distance_raw(u[m].coords, v[m].coords, c.curvature);
    out.per_component.push_back(d2);
    out.total += d2;
  }
  return out;
}

}  // namespace gsg
