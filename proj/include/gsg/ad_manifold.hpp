#pragma once

// Row-batched manifold maps on the tape. Each row of the input matrices is one point or
// tangent vector in ambient coordinates. Backward rules are derived from the closed forms
// in manifold.hpp rather than traced elementwise.

#include <cmath>
#include <cstddef>
#include <vector>

#include "gsg/autodiff.hpp"
#include "gsg/manifold.hpp"

namespace gsg::ad {

namespace detail {

/// y <- y + a * (v, with the time-like entry negated when hyperbolic)
inline void axpy_metric(std::span<double> y, double a, std::span<const double> v, Geometry g) {
  for (std::size_t i = 0; i < v.size(); ++i) y[i] += a * v[i];
  if (g == Geometry::hyperbolic) y[0] -= 2.0 * a * v[0];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void require_rows(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) throw ShapeError(std::string(op) + ": operands must have the same shape");
}

}  // namespace detail

/// Row-wise exp_x(t). With guard off, sphere geodesics longer than pi wrap instead of throwing.
inline Var exp_map_rows(Var x, Var t, Curvature k, bool guard = true) {
  detail::require_rows(x, t, "exp_map_rows");
  if (k.is_flat()) return add(x, t);
  const Tensor& X = x.value();
  const Tensor& T = t.value();
  Tensor out(X.rows, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    if (k.geometry() == Geometry::hyperbolic) {
      const double nn = inner_product(T.row(r), T.row(r), k);
      x.tape().record_branch(nn > 0 ? 1 : (nn < 0 ? -1 : 0));
    }
    gsg::detail::exp_map_raw(X.row(r), T.row(r), k, out.row(r), guard);
  }
  const std::size_t ix = x.id(), it = t.id();
  return x.tape().push(std::move(out), "exp_map", [ix, it, k](Tape& tape, std::size_t, const Tensor& g) {
    const Tensor& X = tape.value(ix);
    const Tensor& T = tape.value(it);
    Tensor& gx = tape.grad(ix);
    Tensor& gt = tape.grad(it);
    const Geometry geo = k.geometry();
    const double kabs = std::abs(k.value());
    for (std::size_t r = 0; r < X.rows; ++r) {
      const auto xr = X.row(r), tr = T.row(r), gr = g.row(r);
      const double nn = inner_product(tr, tr, k);
      const double n = std::sqrt(std::max(0.0, nn));
      const double theta = k.sqrt_abs() * n;
      const double c = gsg::detail::cosg(theta, geo);
      const double phi = gsg::detail::sinc(theta, geo);
      auto gxr = gx.row(r), gtr = gt.row(r);
      for (std::size_t i = 0; i < xr.size(); ++i) {
        gxr[i] += c * gr[i];
        gtr[i] += phi * gr[i];
      }
      if (!(nn > 0.0)) continue;
      const double sign = geo == Geometry::spherical ? -1.0 : 1.0;
      const double coef = kabs * (sign * phi * detail::dot(gr, xr) + gsg::detail::sinc_slope(theta, geo) * detail::dot(gr, tr));
      detail::axpy_metric(gtr, coef, tr, geo);
    }
  });
}

/// Row-wise log_x(y). guard = false skips the spherical antipode check (see log_map_raw).
inline Var log_map_rows(Var x, Var y, Curvature k, bool guard = true) {
  detail::require_rows(x, y, "log_map_rows");
  if (k.is_flat()) return sub(y, x);
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  Tensor out(X.rows, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    x.tape().record_branch(gsg::detail::chord_angle(X.row(r), Y.row(r), k).branch);
    gsg::detail::log_map_raw(X.row(r), Y.row(r), k, out.row(r), guard);
  }
  const std::size_t ix = x.id(), iy = y.id();
  return x.tape().push(std::move(out), "log_map", [ix, iy, k](Tape& tape, std::size_t, const Tensor& g) {
    const Tensor& X = tape.value(ix);
    const Tensor& Y = tape.value(iy);
    Tensor& gx = tape.grad(ix);
    Tensor& gy = tape.grad(iy);
    const Geometry geo = k.geometry();
    const double kv = k.value();
    const double kabs = std::abs(kv);
    std::vector<double> u(X.cols), w(X.cols), gu(X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
      const auto xr = X.row(r), yr = Y.row(r), gr = g.row(r);
      const auto angle = gsg::detail::chord_angle(xr, yr, k);
      const double theta = angle.theta;
      const double z = kv * inner_product(xr, yr, k);
      for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = yr[i] - z * xr[i];
        w[i] = xr[i] - yr[i];
      }
      const double psi = gsg::detail::inv_sinc(theta, geo);
      for (std::size_t i = 0; i < u.size(); ++i) gu[i] = psi * gr[i];
      const double g_psi = detail::dot(gr, u);
      const double gux = detail::dot(gu, xr);
      auto gxr = gx.row(r), gyr = gy.row(r);
      // through u = y - kappa <x,y> x
      for (std::size_t i = 0; i < u.size(); ++i) {
        gxr[i] -= z * gu[i];
        gyr[i] += gu[i];
      }
      detail::axpy_metric(gxr, -kv * gux, yr, geo);
      detail::axpy_metric(gyr, -kv * gux, xr, geo);
      // through theta
      if (angle.branch != 0 || theta == 0.0) continue;
      const double coef = g_psi * kabs * gsg::detail::inv_sinc_slope(theta, geo);
      detail::axpy_metric(gxr, coef, w, geo);
      detail::axpy_metric(gyr, -coef, w, geo);
    }
  });
}

/// Row-wise squared geodesic distance, n x D -> n x 1.
inline Var sq_distance_rows(Var x, Var y, Curvature k) {
  detail::require_rows(x, y, "sq_distance_rows");
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  Tensor out(X.rows, 1);
  for (std::size_t r = 0; r < X.rows; ++r) {
    if (!k.is_flat()) x.tape().record_branch(gsg::detail::chord_angle(X.row(r), Y.row(r), k).branch);
    out.data[r] = gsg::detail::sq_distance_raw(X.row(r), Y.row(r), k);
  }
  const std::size_t ix = x.id(), iy = y.id();
  return x.tape().push(std::move(out), "sq_distance", [ix, iy, k](Tape& tape, std::size_t, const Tensor& g) {
    const Tensor& X = tape.value(ix);
    const Tensor& Y = tape.value(iy);
    Tensor& gx = tape.grad(ix);
    Tensor& gy = tape.grad(iy);
    const Geometry geo = k.geometry();
    std::vector<double> w(X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
      const auto xr = X.row(r), yr = Y.row(r);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = xr[i] - yr[i];
      double coef = 2.0 * g.data[r];
      if (!k.is_flat()) {
        const auto angle = gsg::detail::chord_angle(xr, yr, k);
        if (angle.branch != 0) continue;
        coef *= gsg::detail::inv_sinc(angle.theta, geo);
      }
      detail::axpy_metric(gx.row(r), coef, w, geo);
      detail::axpy_metric(gy.row(r), -coef, w, geo);
    }
  });
}

/// Row-wise geodesic distance, n x D -> n x 1. The gradient at coincident points is taken as 0.
inline Var distance_rows(Var x, Var y, Curvature k) {
  detail::require_rows(x, y, "distance_rows");
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  Tensor out(X.rows, 1);
  for (std::size_t r = 0; r < X.rows; ++r) {
    if (!k.is_flat()) x.tape().record_branch(gsg::detail::chord_angle(X.row(r), Y.row(r), k).branch);
    out.data[r] = std::sqrt(gsg::detail::sq_distance_raw(X.row(r), Y.row(r), k));
  }
  const std::size_t ix = x.id(), iy = y.id();
  return x.tape().push(std::move(out), "distance", [ix, iy, k](Tape& tape, std::size_t self, const Tensor& g) {
    const Tensor& X = tape.value(ix);
    const Tensor& Y = tape.value(iy);
    const Tensor& D = tape.value(self);
    Tensor& gx = tape.grad(ix);
    Tensor& gy = tape.grad(iy);
    const Geometry geo = k.geometry();
    std::vector<double> w(X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
      if (D.data[r] == 0.0) continue;
      const auto xr = X.row(r), yr = Y.row(r);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = xr[i] - yr[i];
      double coef = g.data[r] / D.data[r];
      if (!k.is_flat()) {
        const auto angle = gsg::detail::chord_angle(xr, yr, k);
        if (angle.branch != 0) continue;
        coef *= gsg::detail::inv_sinc(angle.theta, geo);
      }
      detail::axpy_metric(gx.row(r), coef, w, geo);
      detail::axpy_metric(gy.row(r), -coef, w, geo);
    }
  });
}

/// Row-wise project_to_manifold.
inline Var project_rows(Var x, Curvature k) {
  if (k.is_flat()) return x;
  const Tensor& X = x.value();
  Tensor out(X.rows, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) gsg::detail::project_point_raw(X.row(r), k, out.row(r));
  const std::size_t ix = x.id();
  return x.tape().push(std::move(out), "project", [ix, k](Tape& tape, std::size_t self, const Tensor& g) {
    const Tensor& X = tape.value(ix);
    const Tensor& Y = tape.value(self);
    Tensor& gx = tape.grad(ix);
    for (std::size_t r = 0; r < X.rows; ++r) {
      const auto xr = X.row(r), yr = Y.row(r), gr = g.row(r);
      auto gxr = gx.row(r);
      if (k.geometry() == Geometry::spherical) {
        const double n = euclidean_norm(xr);
        const double s = 1.0 / (k.sqrt_abs() * n);
        double xg = 0.0;
        for (std::size_t i = 0; i < xr.size(); ++i) xg += xr[i] * gr[i];
        xg /= n * n;
        for (std::size_t i = 0; i < xr.size(); ++i) gxr[i] += s * (gr[i] - xr[i] * xg);
      } else {
        for (std::size_t i = 1; i < xr.size(); ++i) gxr[i] += gr[i] + gr[0] * xr[i] / yr[0];
      }
    }
  });
}

/// n copies of the origin as a constant.
inline Var origin_rows(Tape& tape, std::size_t n, Curvature k, std::size_t d) {
  const ManifoldPoint o = origin(k, d);
  Tensor out(n, o.coords.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < o.coords.size(); ++c) out(r, c) = o.coords[c];
  return tape.constant(std::move(out));
}

/// exp_o([0, v]) for each row v of an n x d matrix; identity when flat.
inline Var expmap0_rows(Var v, Curvature k, bool guard = true) {
  if (k.is_flat()) return v;
  Tape& tape = v.tape();
  const std::size_t n = v.rows(), d = v.cols();
  Var padded = concat_cols({tape.constant(Tensor(n, 1)), v});
  return project_rows(exp_map_rows(origin_rows(tape, n, k, d), padded, k, guard), k);
}

/// Spatial part of log_o(p) for each row p; identity when flat.
inline Var logmap0_rows(Var p, Curvature k, bool guard = true) {
  if (k.is_flat()) return p;
  const std::size_t n = p.rows(), d = p.cols() - 1;
  Var full = log_map_rows(origin_rows(p.tape(), n, k, d), p, k, guard);
  return slice_cols(full, 1, d + 1);
}

}  // namespace gsg::ad
