#pragma once

// Riemannian SGD. Euclidean parameters take a plain gradient step; manifold-valued parameters
// (one point per row) take the Riemannian gradient and move along the exp map.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "gsg/autodiff.hpp"
#include "gsg/errors.hpp"
#include "gsg/manifold.hpp"

namespace gsg {

struct ParamTag {
  enum class Kind { euclidean, manifold };
  Kind kind = Kind::euclidean;
  Curvature curvature{};
  double lr = 0.003;
  double geo_step = 0.1;

  static ParamTag euclidean(double lr) { return {Kind::euclidean, Curvature{}, lr, 0.1}; }
  static ParamTag manifold(Curvature k, double geo_step) { return {Kind::manifold, k, 0.003, geo_step}; }
};

/// Euclidean gradient -> tangent vector at x: metric inverse (time-like sign flip on the
/// hyperboloid), then removal of the normal component.
inline TangentVector riemannian_grad(const ManifoldPoint& x, std::span<const double> euclid_grad) {
  if (euclid_grad.size() != x.coords.size()) throw ShapeError("riemannian_grad: length mismatch");
  Vec g(euclid_grad.begin(), euclid_grad.end());
  if (x.curvature.geometry() == Geometry::hyperbolic) g[0] = -g[0];
  return project_to_tangent(x, g);
}

/// Longest tangent step taken on a sphere; the exp map is only injective below pi / sqrt(kappa).
constexpr double kSphereMaxStepAngle = std::numbers::pi / 2;

/// Updates x in place. Returns false (and leaves x untouched) when the gradient is not finite.
inline bool rsgd_step(ad::Tensor& x, const ad::Tensor& grad, const ParamTag& tag) {
  if (!x.same_shape(grad)) throw ShapeError("rsgd_step: gradient shape differs from parameter");
  for (double g : grad.data)
    if (!std::isfinite(g)) {
      warn("rsgd_step: non-finite gradient, step skipped");
      return false;
    }
  if (tag.kind == ParamTag::Kind::euclidean || tag.curvature.is_flat()) {
    const double lr = tag.kind == ParamTag::Kind::euclidean ? tag.lr : tag.geo_step;
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] -= lr * grad.data[i];
    return true;
  }
  const Curvature k = tag.curvature;
  for (std::size_t r = 0; r < x.rows; ++r) {
    const ManifoldPoint p{Vec(x.row(r).begin(), x.row(r).end()), k};
    TangentVector t = riemannian_grad(p, grad.row(r));
    for (double& v : t.coords) v *= -tag.geo_step;
    if (k.geometry() == Geometry::spherical) {
      const double angle = k.sqrt_abs() * tangent_norm(t.coords, k);
      if (angle > kSphereMaxStepAngle)
        for (double& v : t.coords) v *= kSphereMaxStepAngle / angle;
    }
    const ManifoldPoint next = exp_map(p, t);
    const ManifoldPoint fixed = project_to_manifold(next.coords, k);
    std::copy(fixed.coords.begin(), fixed.coords.end(), x.row(r).begin());
  }
  return true;
}

}  // namespace gsg
