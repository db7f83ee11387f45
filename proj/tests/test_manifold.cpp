#include <cmath>
#include <numbers>
#include <tuple>

#include <gtest/gtest.h>

#include "gsg/manifold.hpp"
#include "support.hpp"

using namespace gsg;
using gsg::testing::random_point;
using gsg::testing::random_tangent;
using gsg::testing::safe_radius;

namespace {

const Curvature kHyp{-1.0};
const Curvature kSph{1.0};
const Curvature kFlat{0.0};

ManifoldPoint pt(Vec c, Curvature k) { return ManifoldPoint{std::move(c), k}; }

double tangent_residual(const ManifoldPoint& x, const Vec& t) {
  return std::abs(inner_product(x.coords, t, x.curvature));
}

}  // namespace

TEST(CurvatureTrig, FlatIsOneAndIdentity) {
  auto [c, s] = curvature_trig(0.7, kFlat);
  EXPECT_EQ(c, 1.0);
  EXPECT_EQ(s, 0.7);
}

TEST(CurvatureTrig, ZeroArgument) {
  for (double k : {-2.0, -1.0, 0.0, 0.5, 3.0}) {
    auto [c, s] = curvature_trig(0.0, Curvature(k));
    EXPECT_EQ(c, 1.0);
    EXPECT_EQ(s, 0.0);
  }
}

TEST(CurvatureTrig, HyperbolicUnitArgument) {
  auto [c, s] = curvature_trig(1.0, kHyp);
  EXPECT_NEAR(c, 1.5430806348152437, 1e-15);
  EXPECT_NEAR(s, 1.1752011936438014, 1e-15);
}

TEST(CurvatureTrig, ScaledArgument) {
  // kappa = 4: cos(2z), sin(2z) / 2
  auto [c, s] = curvature_trig(0.3, Curvature(4.0));
  EXPECT_NEAR(c, std::cos(0.6), 1e-15);
  EXPECT_NEAR(s, std::sin(0.6) / 2.0, 1e-15);
}

TEST(CurvatureTrig, RejectsNonFinite) {
  EXPECT_THROW(curvature_trig(std::nan(""), kSph), DomainError);
  EXPECT_THROW(curvature_trig(INFINITY, kHyp), DomainError);
}

TEST(Curvature, RejectsNonFinite) { EXPECT_THROW(Curvature(std::nan("")), DomainError); }

TEST(Curvature, SignClass) {
  EXPECT_EQ(Curvature(0.1).geometry(), Geometry::spherical);
  EXPECT_EQ(Curvature(-0.1).geometry(), Geometry::hyperbolic);
  EXPECT_EQ(Curvature(0.0).geometry(), Geometry::flat);
}

TEST(InnerProduct, Examples) {
  EXPECT_EQ(inner_product(Vec{1, 0}, Vec{1, 0}, kHyp), -1.0);
  EXPECT_EQ(inner_product(Vec{1, 0}, Vec{0, 1}, kSph), 0.0);
  EXPECT_NEAR(inner_product(Vec{1.5431, 1.1752}, Vec{1, 0}, kHyp), -1.5431, 1e-15);
  EXPECT_EQ(inner_product(Vec{1, 2}, Vec{3, 4}, kFlat), 11.0);
  EXPECT_THROW(inner_product(Vec{1, 2}, Vec{3}, kSph), ShapeError);
}

TEST(Origin, Examples) {
  EXPECT_EQ(origin(kHyp, 2).coords, (Vec{1, 0, 0}));
  EXPECT_EQ(origin(Curvature(4.0), 1).coords, (Vec{0.5, 0}));
  EXPECT_EQ(origin(kFlat, 3).coords, (Vec{0, 0, 0}));
  EXPECT_THROW(origin(kSph, 0), DomainError);
}

TEST(ExpMap, ZeroTangentReturnsBaseExactly) {
  const auto o = origin(kHyp, 3);
  EXPECT_EQ(exp_map(o, Vec(4, 0.0)).coords, o.coords);
  const auto x = pt({0.6, 0.8, 0.0}, kSph);
  EXPECT_EQ(exp_map(x, Vec(3, 0.0)).coords, x.coords);
}

TEST(ExpMap, HyperboloidUnitGeodesic) {
  const auto r = exp_map(pt({1, 0}, kHyp), Vec{0, 1});
  EXPECT_NEAR(r.coords[0], std::cosh(1.0), 1e-12);
  EXPECT_NEAR(r.coords[1], std::sinh(1.0), 1e-12);
  EXPECT_NEAR(inner_product(r.coords, r.coords, kHyp), -1.0, 1e-12);
  EXPECT_NEAR(geodesic_distance(pt({1, 0}, kHyp), r), 1.0, 1e-12);
}

TEST(ExpMap, SphereQuarterTurn) {
  const auto r = exp_map(pt({1, 0}, kSph), Vec{0, std::numbers::pi / 2});
  EXPECT_NEAR(r.coords[0], 0.0, 1e-15);
  EXPECT_NEAR(r.coords[1], 1.0, 1e-15);
  EXPECT_NEAR(geodesic_distance(pt({1, 0}, kSph), r), std::numbers::pi / 2, 1e-12);
}

TEST(ExpMap, SphereInjectivityGuard) {
  const auto x = pt({1, 0, 0}, kSph);
  EXPECT_THROW(exp_map(x, Vec{0, std::numbers::pi, 0}), DomainError);
  EXPECT_THROW(exp_map(x, Vec{0, 0, std::numbers::pi - 1e-7}), DomainError);
  EXPECT_NO_THROW(exp_map(x, Vec{0, 0, std::numbers::pi - 1e-5}));
  // kappa = 4 halves the radius
  EXPECT_THROW(exp_map(pt({0.5, 0}, Curvature(4.0)), Vec{0, 1.6}), DomainError);
}

TEST(ExpMap, ShapeMismatch) { EXPECT_THROW(exp_map(pt({1, 0}, kHyp), Vec{0, 1, 0}), ShapeError); }

TEST(LogMap, Examples) {
  const auto x = pt({1, 0}, kSph);
  const auto t = log_map(x, pt({0, 1}, kSph));
  EXPECT_NEAR(t.coords[0], 0.0, 1e-15);
  EXPECT_NEAR(t.coords[1], std::numbers::pi / 2, 1e-12);

  const auto h = log_map(pt({1, 0}, kHyp), pt({1.5431, 1.1752}, kHyp));
  EXPECT_NEAR(h.coords[0], 0.0, 1e-6);
  EXPECT_NEAR(h.coords[1], 1.0, 1e-4);  // the rounded input sits 3e-5 off the unit geodesic

  const auto exact = log_map(pt({1, 0}, kHyp), pt({std::cosh(1.0), std::sinh(1.0)}, kHyp));
  EXPECT_NEAR(exact.coords[1], 1.0, 1e-12);

  for (auto k : {kSph, kHyp, kFlat}) {
    const auto p = origin(k, 3);
    for (double c : log_map(p, p).coords) EXPECT_EQ(c, 0.0);
  }
}

TEST(LogMap, AntipodeIsSingular) {
  EXPECT_THROW(log_map(pt({1, 0, 0}, kSph), pt({-1, 0, 0}, kSph)), SingularityError);
}

TEST(LogMap, CurvatureMismatch) {
  EXPECT_THROW(log_map(pt({1, 0}, kSph), pt({1, 0}, kHyp)), ShapeError);
}

TEST(Distance, Examples) {
  EXPECT_EQ(geodesic_distance(pt({1, 0}, kSph), pt({1, 0}, kSph)), 0.0);
  EXPECT_NEAR(geodesic_distance(pt({1, 0}, kSph), pt({0, 1}, kSph)), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(geodesic_distance(pt({1, 0}, kHyp), pt({std::cosh(1.0), std::sinh(1.0)}, kHyp)), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(geodesic_distance(pt({0, 0}, kFlat), pt({3, 4}, kFlat)), 5.0);
}

TEST(Distance, SmallSeparationKeepsPrecision) {
  // acos of the inner product would lose everything below ~1e-8
  const auto x = pt({1, 0}, kSph);
  const auto y = exp_map(x, Vec{0, 1e-10});
  EXPECT_NEAR(geodesic_distance(x, y), 1e-10, 1e-20);
  const auto h = pt({1, 0}, kHyp);
  EXPECT_NEAR(geodesic_distance(h, exp_map(h, Vec{0, 1e-10})), 1e-10, 1e-20);
}

TEST(Distance, FarOffManifoldRaises) {
  // an ambient vector with |x| = 2 is far outside the clamp slack
  EXPECT_THROW(geodesic_distance(pt({2, 0}, kSph), pt({-2, 0}, kSph)), NumericError);
}

TEST(ProjectToManifold, Examples) {
  EXPECT_EQ(project_to_manifold(Vec{2, 0}, kSph).coords, (Vec{1, 0}));
  const auto h = project_to_manifold(Vec{1.1, 0.3}, kHyp);
  EXPECT_NEAR(inner_product(h.coords, h.coords, kHyp), -1.0, 1e-15);
  EXPECT_GT(h.coords[0], 0.0);
  EXPECT_NEAR(h.coords[0], std::sqrt(1.09), 1e-15);
  EXPECT_EQ(h.coords[1], 0.3);
  EXPECT_THROW(project_to_manifold(Vec{0, 0}, kSph), DomainError);
}

TEST(ProjectToManifold, IdempotentOnManifold) {
  Rng rng(3);
  for (auto k : {kSph, kHyp, Curvature(-0.5), Curvature(2.0)}) {
    const auto p = random_point(rng, k, 5);
    const auto q = project_to_manifold(p.coords, k);
    for (std::size_t i = 0; i < p.coords.size(); ++i) EXPECT_NEAR(q.coords[i], p.coords[i], 1e-12);
  }
}

TEST(ProjectToTangent, Examples) {
  const auto t = project_to_tangent(pt({1, 0}, kHyp), Vec{5, 2});
  EXPECT_EQ(t.coords, (Vec{0, 2}));
  EXPECT_EQ(project_to_tangent(pt({1, 2}, kFlat), Vec{7, -1}).coords, (Vec{7, -1}));
  const auto s = project_to_tangent(pt({1, 0, 0}, kSph), Vec{0, 3, 4});
  EXPECT_EQ(s.coords, (Vec{0, 3, 4}));
}

TEST(ProjectToTangent, OrthogonalAndIdempotent) {
  Rng rng(5);
  for (auto k : {kSph, kHyp, Curvature(-2.0), Curvature(0.5)}) {
    const auto x = random_point(rng, k, 4);
    const auto t = project_to_tangent(x, gsg::testing::gaussian(rng, 5));
    EXPECT_LE(tangent_residual(x, t.coords), 1e-9 * (1 + euclidean_norm(t.coords)));
    const auto t2 = project_to_tangent(x, t.coords);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(t2.coords[i], t.coords[i], 1e-12);
  }
}

TEST(GeometrySpec, VariantStrings) {
  const auto s = parse_geometry_spec("s4xs8xh16");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.components[0], (ManifoldComponent{Curvature(1.0), 4}));
  EXPECT_EQ(s.components[1], (ManifoldComponent{Curvature(1.0), 8}));
  EXPECT_EQ(s.components[2], (ManifoldComponent{Curvature(-1.0), 16}));
  EXPECT_EQ(parse_geometry_spec("e32", 32).components, (std::vector<ManifoldComponent>{{Curvature(0.0), 32}}));
  const auto hs = parse_geometry_spec("h16xs16", 32);
  EXPECT_EQ(hs.components[0], (ManifoldComponent{Curvature(-1.0), 16}));
  EXPECT_EQ(hs.components[1], (ManifoldComponent{Curvature(1.0), 16}));
}

TEST(GeometrySpec, CurvatureMagnitude) {
  const auto s = parse_geometry_spec("h8xs8", std::nullopt, 0.5);
  EXPECT_EQ(s.components[0].curvature.value(), -0.5);
  EXPECT_EQ(s.components[1].curvature.value(), 0.5);
}

TEST(GeometrySpec, Errors) {
  auto token_of = [](const char* spec, std::optional<std::size_t> total = {}) {
    try {
      parse_geometry_spec(spec, total);
    } catch (const ParseError& e) {
      return e.token();
    }
    return std::string("<no error>");
  };
  EXPECT_EQ(token_of("h32xq4"), "q4");
  EXPECT_EQ(token_of("h0"), "h0");
  EXPECT_EQ(token_of("s4x"), "");
  EXPECT_EQ(token_of("h"), "h");
  EXPECT_EQ(token_of("s1a"), "s1a");
  EXPECT_EQ(token_of("h16xs8", 32), "h16xs8");
  EXPECT_EQ(token_of("h16xs16", 32), "<no error>");
}

TEST(GeometrySpec, FormatRoundTrip) {
  for (const char* s : {"h32", "s32", "e32", "h16xh16", "h16xs16", "s16xs16", "s8xs8xh8", "s16xs8xh4", "s4xs8xh16",
                        "e3xh1xs100"}) {
    const auto spec = parse_geometry_spec(s);
    EXPECT_EQ(format_geometry_spec(spec), s);
    EXPECT_EQ(parse_geometry_spec(format_geometry_spec(spec)), spec);
  }
}

TEST(ProductDistance, Examples) {
  const auto spec = parse_geometry_spec("h1xh1");
  std::vector<ManifoldPoint> u{pt({1, 0}, kHyp), pt({1, 0}, kHyp)};
  std::vector<ManifoldPoint> v{pt({std::cosh(1.0), std::sinh(1.0)}, kHyp), pt({std::cosh(2.0), std::sinh(2.0)}, kHyp)};
  const auto d = product_distance_sq(u, v, spec);
  EXPECT_NEAR(d.per_component[0], 1.0, 1e-12);
  EXPECT_NEAR(d.per_component[1], 4.0, 1e-12);
  EXPECT_NEAR(d.total, 5.0, 1e-12);

  const auto same = product_distance_sq(u, u, spec);
  EXPECT_EQ(same.total, 0.0);

  const auto one = parse_geometry_spec("s1");
  std::vector<ManifoldPoint> a{pt({1, 0}, kSph)}, b{pt({0, 1}, kSph)};
  EXPECT_NEAR(product_distance_sq(a, b, one).total, std::pow(geodesic_distance(a[0], b[0]), 2), 1e-15);

  EXPECT_THROW(product_distance_sq(a, v, spec), ShapeError);
  std::vector<ManifoldPoint> wrong{pt({1, 0, 0}, kSph)};
  EXPECT_THROW(product_distance_sq(wrong, wrong, one), ShapeError);
}

// ---------------------------------------------------------------------------
// Property suites over curvature and dimension

class ManifoldProperties : public ::testing::TestWithParam<std::tuple<double, std::size_t>> {
 protected:
  Curvature k() const { return Curvature(std::get<0>(GetParam())); }
  std::size_t d() const { return std::get<1>(GetParam()); }
  static constexpr int kSamples = 200;
};

TEST_P(ManifoldProperties, ExpLogInversion) {
  Rng rng(derive_seed(11, static_cast<std::uint64_t>(std::get<0>(GetParam()) * 8 + 100), d()));
  for (int s = 0; s < kSamples; ++s) {
    const auto x = random_point(rng, k(), d());
    const Vec t = random_tangent(rng, x, safe_radius(k()));
    const auto y = exp_map(x, t);
    const auto back = log_map(x, y).coords;
    double err = 0;
    for (std::size_t i = 0; i < t.size(); ++i) err = std::max(err, std::abs(back[i] - t[i]));
    ASSERT_LE(err, 1e-6 * (1 + tangent_norm(t, k())));
  }
}

TEST_P(ManifoldProperties, ConstraintPreservation) {
  Rng rng(derive_seed(12, static_cast<std::uint64_t>(std::get<0>(GetParam()) * 8 + 100), d()));
  for (int s = 0; s < kSamples; ++s) {
    const auto x = random_point(rng, k(), d());
    ASSERT_TRUE(is_on_manifold(x));
    const auto y = exp_map(x, random_tangent(rng, x, safe_radius(k())));
    ASSERT_TRUE(is_on_manifold(y));
    const auto t = log_map(x, y);
    ASSERT_LE(tangent_residual(x, t.coords), 1e-9 * (1 + euclidean_norm(t.coords)));
    Vec noisy = y.coords;
    for (double& c : noisy) c *= 1 + 1e-3 * rng.normal();
    ASSERT_TRUE(is_on_manifold(project_to_manifold(noisy, k())));
  }
}

TEST_P(ManifoldProperties, MetricAxioms) {
  Rng rng(derive_seed(13, static_cast<std::uint64_t>(std::get<0>(GetParam()) * 8 + 100), d()));
  for (int s = 0; s < kSamples; ++s) {
    const auto x = random_point(rng, k(), d()), y = random_point(rng, k(), d()), z = random_point(rng, k(), d());
    const double xy = geodesic_distance(x, y), yx = geodesic_distance(y, x);
    ASSERT_GE(xy, 0.0);
    ASSERT_LE(geodesic_distance(x, x), 1e-8);
    ASSERT_NEAR(xy, yx, 1e-9);
    ASSERT_LE(geodesic_distance(x, z), xy + geodesic_distance(y, z) + 1e-7);
  }
}

TEST_P(ManifoldProperties, NormDistanceConsistency) {
  Rng rng(derive_seed(14, static_cast<std::uint64_t>(std::get<0>(GetParam()) * 8 + 100), d()));
  for (int s = 0; s < kSamples; ++s) {
    const auto x = random_point(rng, k(), d());
    const Vec t = random_tangent(rng, x, safe_radius(k()));
    ASSERT_NEAR(geodesic_distance(x, exp_map(x, t)), tangent_norm(t, k()), 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(CurvatureByDimension, ManifoldProperties,
                         ::testing::Combine(::testing::Values(-2.0, -1.0, -0.5, 0.5, 1.0, 2.0),
                                            ::testing::Values(std::size_t{2}, std::size_t{8}, std::size_t{32})));

TEST(FlatLimit, NearZeroCurvatureMatchesVectorSpace) {
  Rng rng(21);
  for (double kv : {1e-6, -1e-6}) {
    const Curvature k(kv);
    const std::size_t d = 4;
    const auto o = origin(k, d);
    for (int s = 0; s < 200; ++s) {
      Vec u = gsg::testing::gaussian(rng, d), v = gsg::testing::gaussian(rng, d);
      for (Vec* w : {&u, &v}) {
        const double n = euclidean_norm(*w);
        const double r = rng.uniform();
        for (double& c : *w) c *= r / n;
      }
      Vec tu(d + 1, 0.0), tv(d + 1, 0.0);
      std::copy(u.begin(), u.end(), tu.begin() + 1);
      std::copy(v.begin(), v.end(), tv.begin() + 1);
      const auto pu = exp_map(o, tu), pv = exp_map(o, tv);
      for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(pu.coords[i + 1], u[i], 1e-4);
      const auto back = log_map(o, pu).coords;
      for (std::size_t i = 0; i < d; ++i) ASSERT_NEAR(back[i + 1], u[i], 1e-4);
      Vec diff(d);
      for (std::size_t i = 0; i < d; ++i) diff[i] = u[i] - v[i];
      ASSERT_NEAR(geodesic_distance(pu, pv), euclidean_norm(diff), 1e-4);
    }
  }
}

TEST(FlatPath, IsVectorArithmetic) {
  const auto x = pt({1, 2}, kFlat);
  EXPECT_EQ(exp_map(x, Vec{0.5, -1}).coords, (Vec{1.5, 1}));
  EXPECT_EQ(log_map(x, pt({4, 6}, kFlat)).coords, (Vec{3, 4}));
  EXPECT_EQ(geodesic_distance(x, pt({4, 6}, kFlat)), 5.0);
}
