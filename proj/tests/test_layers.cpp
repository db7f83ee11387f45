#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "gsg/layers.hpp"
#include "support.hpp"

using namespace gsg;
using gsg::testing::random_point;

namespace {

const Curvature kSphere(1.0), kHyper(-1.0), kFlat(0.0);

ManifoldPoint pt(Vec c, Curvature k) { return ManifoldPoint{std::move(c), k}; }

void expect_vec_near(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

ad::Tensor rows_of(const std::vector<ManifoldPoint>& pts) {
  ad::Tensor t(pts.size(), pts.front().coords.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t c = 0; c < t.cols; ++c) t(i, c) = pts[i].coords[c];
  return t;
}

ComponentParams identity_params(ad::Tape& tape, std::size_t d) {
  const auto a = AttentionParams::defaults(d);
  return {tape.leaf(a.w_q), tape.leaf(ad::Tensor(1, d, a.b_q)), a.gamma, std::nullopt, std::nullopt};
}

}  // namespace

TEST(RiemannianEmbed, Examples) {
  const auto o = riemannian_embed(Vec{0.0, 0.0}, kHyper);
  expect_vec_near(o.coords, origin(kHyper, 2).coords, 0.0);
  expect_vec_near(riemannian_embed(Vec{1.0}, kHyper).coords, {std::cosh(1.0), std::sinh(1.0)}, 1e-15);
  expect_vec_near(riemannian_embed(Vec{0.3, -0.7}, kFlat).coords, {0.3, -0.7}, 0.0);
  EXPECT_THROW(riemannian_embed(Vec{std::nan("")}, kSphere), DomainError);
}

TEST(RiemannianEmbed, LogOriginInverts) {
  Rng rng(2);
  for (double kv : {-2.0, -1.0, 0.0, 0.5, 1.0}) {
    const Curvature k(kv);
    for (int s = 0; s < 50; ++s) {
      Vec x = gsg::testing::gaussian(rng, 4, 0.5);
      expect_vec_near(log_origin(riemannian_embed(x, k)), x, 1e-12);
    }
  }
}

TEST(AttentionQuery, Examples) {
  auto p = AttentionParams::defaults(2);
  p.b_q = {0.5, -1.0};
  expect_vec_near(attention_query(origin(kHyper, 2), p), {0.5, -1.0}, 0.0);

  auto zero = AttentionParams::defaults(2);
  zero.w_q = ad::Tensor(2, 2);
  zero.b_q = {0.25, 0.75};
  Rng rng(3);
  expect_vec_near(attention_query(random_point(rng, kSphere, 2), zero), {0.25, 0.75}, 0.0);

  auto id = AttentionParams::defaults(1);
  id.b_q = {0.4};
  expect_vec_near(attention_query(pt({std::cosh(1.0), std::sinh(1.0)}, kHyper), id), {1.0 + 0.4}, 1e-15);

  EXPECT_THROW(attention_query(origin(kHyper, 3), AttentionParams::defaults(2)), ShapeError);
}

TEST(AttentionWeights, Examples) {
  const auto p = AttentionParams::defaults(2);
  const auto s = origin(kSphere, 2);
  const auto n = pt({0.0, 1.0, 0.0}, kSphere);
  expect_vec_near(attention_weights(s, std::vector<ManifoldPoint>{n}, p), {1.0}, 0.0);
  expect_vec_near(attention_weights(s, std::vector<ManifoldPoint>{n, n}, p), {0.5, 0.5}, 0.0);
  expect_vec_near(attention_weights(s, std::vector<ManifoldPoint>{}, p), {1.0}, 0.0);
  expect_vec_near(attention_softmax(Vec{std::log(2.0), 0.0}, 1.0), {2.0 / 3.0, 1.0 / 3.0}, 1e-15);
}

TEST(AttentionWeights, ScoresAreScaledTangentDotWithQuery) {
  Rng rng(5);
  auto p = AttentionParams::defaults(3);
  p.b_q = {0.2, -0.4, 0.9};
  const auto s = random_point(rng, kHyper, 3);
  std::vector<ManifoldPoint> nb;
  for (int j = 0; j < 4; ++j) nb.push_back(random_point(rng, kHyper, 3));
  const Vec q = attention_query(s, p);
  Vec scores;
  for (const auto& x : nb) {
    const auto l = log_map(s, x).coords;
    scores.push_back(l[1] * q[0] + l[2] * q[1] + l[3] * q[2]);
  }
  expect_vec_near(attention_weights(s, nb, p), attention_softmax(scores, p.gamma), 1e-14);
}

TEST(AttentionSoftmax, IsProbabilityVectorAndShiftInvariant) {
  Rng rng(7);
  for (int s = 0; s < 200; ++s) {
    const std::size_t m = 1 + rng.below(8);
    Vec scores = gsg::testing::gaussian(rng, m, 5.0);
    const double gamma = 0.1 + 2.0 * rng.uniform();
    const Vec a = attention_softmax(scores, gamma);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-12);
    for (double v : a) EXPECT_GT(v, 0.0);
    const double shift = 10.0 * rng.normal();
    for (double& v : scores) v += shift;
    expect_vec_near(attention_softmax(scores, gamma), a, 1e-12);
  }
  EXPECT_THROW(attention_softmax(Vec{}), ShapeError);
}

TEST(TangentAggregate, Examples) {
  Rng rng(11);
  for (Curvature k : {kSphere, kHyper, kFlat}) {
    const auto s = random_point(rng, k, 3);
    const auto n = random_point(rng, k, 3);
    expect_vec_near(tangent_aggregate(s, std::vector<ManifoldPoint>{n}, Vec{1.0}).coords, n.coords, 1e-10);
    expect_vec_near(tangent_aggregate(s, std::vector<ManifoldPoint>{s, s}, Vec{0.3, 0.7}).coords, s.coords, 1e-15);
  }
}

TEST(TangentAggregate, SphereMidpointIsEquidistant) {
  const auto s = pt({1.0, 0.0, 0.0}, kSphere);
  const std::vector<ManifoldPoint> nb{pt({0.0, 1.0, 0.0}, kSphere), pt({0.0, 0.0, 1.0}, kSphere)};
  const auto r = tangent_aggregate(s, nb, Vec{0.5, 0.5});
  EXPECT_LE(constraint_violation(r.coords, kSphere), 1e-12);
  EXPECT_NEAR(geodesic_distance(r, nb[0]), geodesic_distance(r, nb[1]), 1e-9);
}

TEST(TangentAggregate, AntipodalNeighborNamesPair) {
  const auto s = pt({1.0, 0.0}, kSphere);
  try {
    tangent_aggregate(s, std::vector<ManifoldPoint>{pt({0.0, 1.0}, kSphere), pt({-1.0, 0.0}, kSphere)}, Vec{0.5, 0.5});
    FAIL() << "expected SingularityError";
  } catch (const SingularityError& e) {
    EXPECT_NE(std::string(e.what()).find("neighbor 1"), std::string::npos);
  }
  EXPECT_THROW(tangent_aggregate(s, std::vector<ManifoldPoint>{s}, Vec{0.5, 0.5}), ShapeError);
}

TEST(TangentAggregate, NeighborOrderDoesNotMatter) {
  Rng rng(13);
  for (Curvature k : {kSphere, kHyper, kFlat, Curvature(-0.5), Curvature(2.0)}) {
    for (int s = 0; s < 50; ++s) {
      const auto c = random_point(rng, k, 4, 1.0);
      std::vector<ManifoldPoint> nb;
      for (int j = 0; j < 5; ++j) nb.push_back(random_point(rng, k, 4, 1.0));
      const auto p = AttentionParams::defaults(4);
      const Vec a = attention_weights(c, nb, p);
      const auto base = tangent_aggregate(c, nb, a);
      std::vector<std::size_t> perm(nb.size());
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      std::vector<ManifoldPoint> nb2;
      for (auto i : perm) nb2.push_back(nb[i]);
      const Vec a2 = attention_weights(c, nb2, p);
      for (std::size_t j = 0; j < perm.size(); ++j) EXPECT_NEAR(a2[j], a[perm[j]], 1e-12);
      expect_vec_near(tangent_aggregate(c, nb2, a2).coords, base.coords, 1e-12);
    }
  }
}

TEST(ManifoldNonlinearity, Examples) {
  expect_vec_near(manifold_nonlinearity(origin(kSphere, 3)).coords, origin(kSphere, 3).coords, 0.0);
  expect_vec_near(manifold_nonlinearity(pt({0.5, -2.0, 0.0}, kFlat)).coords, {std::tanh(0.5), std::tanh(-2.0), 0.0},
                  0.0);
  const double t = std::tanh(2.0);
  expect_vec_near(manifold_nonlinearity(pt({std::cosh(2.0), std::sinh(2.0)}, kHyper)).coords,
                  {std::cosh(t), std::sinh(t)}, 1e-12);
}

TEST(ManifoldNonlinearity, ContractsFarPoints) {
  Rng rng(17);
  std::size_t tested = 0;
  for (double kv : {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0}) {
    const Curvature k(kv);
    for (int s = 0; s < 200; ++s) {
      const auto p = random_point(rng, k, 5, 3.0);
      const Vec l = log_origin(p);
      if (std::sqrt(std::inner_product(l.begin(), l.end(), l.begin(), 0.0)) < 1.0) continue;
      ++tested;
      const auto o = origin(k, 5);
      const auto q = manifold_nonlinearity(p);
      EXPECT_LE(constraint_violation(q.coords, k), 1e-9);
      EXPECT_LE(geodesic_distance(q, o), geodesic_distance(p, o) + 1e-9);
    }
  }
  EXPECT_GT(tested, 300u);
}

TEST(BuildArcs, SelfLoopsForIsolatedNodes) {
  const Graph g(4, {{0, 1}, {1, 2}}, ad::Tensor(4, 1));
  const auto a = build_arcs(g);
  EXPECT_EQ(a.center, (std::vector<std::size_t>{0, 1, 1, 2, 3}));
  EXPECT_EQ(a.neighbor, (std::vector<std::size_t>{1, 0, 2, 1, 3}));
  EXPECT_EQ(a.fan_out, (std::vector<std::size_t>{1, 2, 1, 1}));
}

class LayerForward : public ::testing::TestWithParam<double> {};

TEST_P(LayerForward, EdgelessGraphComposesConstituents) {
  const Curvature k(GetParam());
  const std::size_t d = 3, T = 5;
  Rng rng(19);
  const std::vector<ManifoldPoint> pts{random_point(rng, k, d), random_point(rng, k, d)};
  const Graph g(2, {}, ad::Tensor(2, 1));
  const auto arcs = build_arcs(g);
  const SpikeStream stream{21, 4};

  ad::Tape tape;
  LayerOptions opt;
  opt.time_steps = T;
  const auto out = spiking_component_forward(tape.leaf(rows_of(pts)), k, arcs, identity_params(tape, d), opt, stream);

  // self-loop aggregation returns the node itself, so the rest is sigmoid, IF, exp_o and tanh
  Vec prob;
  for (const auto& p : pts)
    for (double v : log_origin(p)) prob.push_back(1.0 / (1.0 + std::exp(-v)));
  const Vec rate = if_integrate(sample_spike_train(prob, T, stream), opt.neuron);
  for (std::size_t i = 0; i < 2; ++i) {
    const Vec r(rate.begin() + static_cast<long>(i * d), rate.begin() + static_cast<long>((i + 1) * d));
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(out.rates.value()(i, c), r[c]);
    const auto expect = manifold_nonlinearity(exp_origin(r, k));
    const auto row = out.points.value().row(i);
    expect_vec_near(Vec(row.begin(), row.end()), expect.coords, 1e-12);
  }
}

TEST_P(LayerForward, OutputsOnManifoldAndDeterministic) {
  const Curvature k(GetParam());
  const std::size_t d = 4;
  Rng rng(23);
  std::vector<ManifoldPoint> pts;
  for (int i = 0; i < 12; ++i) pts.push_back(random_point(rng, k, d, 1.0));
  const Graph g = generate_synthetic(parse_synthetic_spec("sbm:2,6,0.5,0.2"), 4);
  const auto arcs = build_arcs(g);
  auto run = [&](bool spiking) {
    ad::Tape tape;
    LayerOptions opt;
    opt.spiking = spiking;
    OpCounters counters;
    auto out = spiking_component_forward(tape.leaf(rows_of(pts)), k, arcs, identity_params(tape, d), opt, {31, 0},
                                         &counters);
    return std::pair{out.points.value(), counters};
  };
  const auto [a, ca] = run(true);
  const auto [b, cb] = run(true);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(ca, cb);
  for (std::size_t i = 0; i < a.rows; ++i) EXPECT_LE(constraint_violation(a.row(i), k), 1e-9);
  std::uint64_t fan_total = 0;
  for (auto f : arcs.fan_out) fan_total += f;
  EXPECT_LE(ca.acs, fan_total * 5 * d);

  const auto [dense, cd] = run(false);
  for (std::size_t i = 0; i < dense.rows; ++i) EXPECT_LE(constraint_violation(dense.row(i), k), 1e-9);
  EXPECT_EQ(cd.spikes, 0u);
  EXPECT_EQ(cd.acs, 0u);
  EXPECT_GT(cd.macs, ca.macs);
}

TEST_P(LayerForward, GraphRelabelingPermutesOutputs) {
  // dense mode removes sampling, so relabeling nodes must only permute rows
  const Curvature k(GetParam());
  const std::size_t d = 3, n = 8;
  Rng rng(29);
  std::vector<ManifoldPoint> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(random_point(rng, k, d, 1.0));
  const std::vector<Edge> edges{{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {2, 6}};
  std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};  // old -> new
  std::vector<Edge> edges2;
  for (auto [u, v] : edges) edges2.push_back({perm[u], perm[v]});
  std::vector<ManifoldPoint> pts2(n, pts[0]);
  for (std::size_t i = 0; i < n; ++i) pts2[perm[i]] = pts[i];

  auto run = [&](const std::vector<Edge>& e, const std::vector<ManifoldPoint>& p) {
    ad::Tape tape;
    LayerOptions opt;
    opt.spiking = false;
    return spiking_component_forward(tape.leaf(rows_of(p)), k, build_arcs(Graph(n, e, ad::Tensor(n, 1))),
                                     identity_params(tape, d), opt, {})
        .points.value();
  };
  const auto a = run(edges, pts);
  const auto b = run(edges2, pts2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < a.cols; ++c) EXPECT_NEAR(a(i, c), b(perm[i], c), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Curvatures, LayerForward, ::testing::Values(-1.0, -0.5, 0.0, 1.0, 2.0),
                         [](const auto& info) {
                           const double k = info.param;
                           return std::string(k < 0 ? "neg" : "pos") + std::to_string(static_cast<int>(std::abs(k) * 10));
                         });

TEST(LayerForward, RejectsMismatchedShapes) {
  ad::Tape tape;
  const Graph g(2, {{0, 1}}, ad::Tensor(2, 1));
  ad::Var S = tape.leaf(rows_of({origin(kSphere, 3), origin(kSphere, 3)}));
  EXPECT_THROW(spiking_component_forward(S, kSphere, build_arcs(g), identity_params(tape, 2), {}, {}), ShapeError);
  const Graph g3(3, {{0, 1}}, ad::Tensor(3, 1));
  EXPECT_THROW(spiking_component_forward(S, kSphere, build_arcs(g3), identity_params(tape, 3), {}, {}), ShapeError);
}
