#pragma once

// Randomized property checks used by both the unit suites and the acceptance binary. Each one
// returns the worst value it saw so callers can compare against their own bound.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gsg/ad_manifold.hpp"
#include "gsg/objectives.hpp"
#include "gsg/optimizer.hpp"
#include "support.hpp"

namespace gsg::testing {

/// Euclidean gradient of d^2(x, target) at one point, taken from the tape.
inline ad::Tensor sq_distance_grad(const ad::Tensor& x, const ad::Tensor& target, Curvature k) {
  ad::Tape tape;
  ad::Var xv = tape.leaf(x);
  return tape.backward(ad::sum(ad::sq_distance_rows(xv, tape.constant(target), k))).at(xv);
}

/// Largest constraint violation of a single manifold parameter over `steps` RSGD updates.
/// Each step pulls toward a fresh random target near the origin: i.i.d. noise gradients make a
/// hyperbolic walk escape to radii where doubles cannot hold the constraint at all.
inline double rsgd_drift(Curvature k, std::size_t d, std::size_t steps, std::uint64_t seed, double geo_step = 0.1) {
  Rng rng(seed);
  const ManifoldPoint start = random_point(rng, k, d);
  ad::Tensor x(1, start.coords.size(), start.coords);
  const auto tag = ParamTag::manifold(k, geo_step);
  double worst = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const ManifoldPoint target = random_point(rng, k, d);
    rsgd_step(x, sq_distance_grad(x, ad::Tensor(1, x.cols, target.coords), k), tag);
    worst = std::max(worst, constraint_violation(x.row(0), k));
  }
  return worst;
}

/// f_final / f_initial for f(x) = d^2(x, target) after `steps` RSGD updates; the Euclidean
/// gradient comes from the tape.
inline double rsgd_descent_ratio(Curvature k, std::size_t d, std::size_t steps, std::uint64_t seed,
                                 double geo_step = 0.1) {
  Rng rng(seed);
  const ManifoldPoint target = random_point(rng, k, d, 1.0);
  // start within the injectivity radius of the target (so d^2 is smooth along the path)
  const ManifoldPoint start = exp_map(target, random_tangent(rng, target, std::min(2.0, 0.8 * safe_radius(k))));
  ad::Tensor x(1, start.coords.size(), start.coords);
  const ad::Tensor t(1, target.coords.size(), target.coords);
  const auto tag = ParamTag::manifold(k, geo_step);
  auto f = [&] { return std::pow(geodesic_distance(ManifoldPoint{Vec(x.data), k}, target), 2); };
  const double f0 = f();
  if (f0 == 0.0) return 0.0;
  for (std::size_t s = 0; s < steps; ++s) rsgd_step(x, sq_distance_grad(x, t, k), tag);
  return f() / f0;
}

/// Worst deviation of random gate vectors from a probability distribution: max over samples
/// of |sum - 1| and of any negative entry.
inline double gate_distribution_error(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t K = 1 + rng.below(4);
    std::vector<ManifoldPoint> emb;
    GatingHead head;
    for (std::size_t m = 0; m < K; ++m) {
      const Curvature k(static_cast<double>(static_cast<int>(rng.below(3)) - 1));
      emb.push_back(random_point(rng, k, 2 + rng.below(4)));
      head.weight.push_back(gaussian(rng, emb.back().intrinsic_dim(), 2.0));
      head.bias.push_back(3.0 * rng.normal());
    }
    const Vec g = gate_weights(emb, head);
    double sum = 0.0;
    for (double v : g) {
      sum += v;
      worst = std::max(worst, -v);
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

struct ScoreCheck {
  double max_positive = -1e300;   // max r(u, v), must be <= 0
  double self_score = 0.0;        // max |r(u, u)|, must be exactly 0
  double asymmetry = 0.0;         // max |d2(u, v) - d2(v, u)|
};

inline ScoreCheck score_properties(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  ScoreCheck out;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t K = 1 + rng.below(3);
    std::vector<ManifoldPoint> u, v;
    Vec raw(K);
    for (std::size_t m = 0; m < K; ++m) {
      const Curvature k(static_cast<double>(static_cast<int>(rng.below(3)) - 1));
      const std::size_t d = 2 + rng.below(4);
      u.push_back(random_point(rng, k, d));
      v.push_back(random_point(rng, k, d));
      raw[m] = 0.05 + rng.uniform();
      out.asymmetry = std::max(out.asymmetry, std::abs(std::pow(geodesic_distance(u[m], v[m]), 2) -
                                                       std::pow(geodesic_distance(v[m], u[m]), 2)));
    }
    const Vec g = normalize_positive(raw);
    out.max_positive = std::max(out.max_positive, pair_score(u, v, g));
    out.self_score = std::max(out.self_score, std::abs(pair_score(u, u, g)));
  }
  return out;
}

struct HingeCheck {
  std::size_t negative = 0;          // loss < 0
  std::size_t nonzero_satisfied = 0; // loss > 0 on a margin-satisfied set
  std::size_t zero_violated = 0;     // loss == 0 with some triplet inside the margin
  std::size_t increasing = 0;        // loss rose when a positive score rose
};

inline HingeCheck hinge_properties(std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  HingeCheck out;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t n = 1 + rng.below(6);
    const double m = rng.uniform();
    std::vector<std::pair<double, double>> sc(n);
    bool satisfied = true;
    for (auto& [p, q] : sc) {
      p = -3.0 * rng.uniform();
      q = -3.0 * rng.uniform();
      satisfied = satisfied && p - q >= m;
    }
    const double loss = link_margin_loss(sc, m);
    if (loss < 0.0) ++out.negative;
    if (satisfied && loss != 0.0) ++out.nonzero_satisfied;
    if (!satisfied && loss == 0.0) ++out.zero_violated;
    auto bumped = sc;
    bumped[rng.below(n)].first += rng.uniform();
    if (link_margin_loss(bumped, m) > loss + 1e-15) ++out.increasing;
  }
  return out;
}

}  // namespace gsg::testing
