#pragma once

// Network blocks: Riemannian embedding, query attention in tangent spaces, tangent-space
// aggregation, IF spiking on the Euclidean image, re-projection and the tanh nonlinearity.
//
// Value-level functions work on single points and serve as references; the traced
// spiking_component_forward runs the same computation for every node of a graph at once.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsg/ad_manifold.hpp"
#include "gsg/autodiff.hpp"
#include "gsg/graph.hpp"
#include "gsg/manifold.hpp"
#include "gsg/random.hpp"
#include "gsg/spiking.hpp"

namespace gsg {

/// exp_o([0, x]) (x itself when flat).
inline ManifoldPoint riemannian_embed(std::span<const double> x, Curvature k) {
  for (double v : x)
    if (!std::isfinite(v)) throw DomainError("riemannian_embed: features must be finite");
  if (k.is_flat()) return ManifoldPoint{Vec(x.begin(), x.end()), k};
  const ManifoldPoint o = origin(k, x.size());
  Vec t(x.size() + 1, 0.0);
  std::copy(x.begin(), x.end(), t.begin() + 1);
  return exp_map(o, t);
}

/// Spatial coordinates of log_o(p): an intrinsic-dimension vector.
inline Vec log_origin(const ManifoldPoint& p) {
  if (p.curvature.is_flat()) return p.coords;
  const ManifoldPoint o = origin(p.curvature, p.intrinsic_dim());
  const TangentVector t = log_map(o, p);
  return Vec(t.coords.begin() + 1, t.coords.end());
}

/// Inverse of log_origin.
inline ManifoldPoint exp_origin(std::span<const double> v, Curvature k) { return riemannian_embed(v, k); }

/// Tangent-space coordinates that are compared with the query: the spatial part of an ambient
/// tangent vector (all of it when flat).
inline std::span<const double> spatial_part(std::span<const double> t, Curvature k) {
  return k.is_flat() ? t : t.subspan(1);
}

struct AttentionParams {
  ad::Tensor w_q;  // d x d, applied as q = l W_q + b_q with l a row vector
  Vec b_q;
  double gamma = 1.0;

  static AttentionParams defaults(std::size_t d) {
    AttentionParams p{ad::Tensor(d, d), Vec(d, 0.0), 1.0 / std::sqrt(static_cast<double>(d))};
    for (std::size_t i = 0; i < d; ++i) p.w_q(i, i) = 1.0;
    return p;
  }

  void check(std::size_t d) const {
    if (w_q.rows != d || w_q.cols != d || b_q.size() != d)
      throw ShapeError("attention params: W_q must be " + std::to_string(d) + "x" + std::to_string(d) +
                       " and b_q of length " + std::to_string(d));
    if (!(gamma > 0.0)) throw ConfigError("attention params: gamma must be positive");
  }
};

/// q = W_q log_o(s) + b_q.
inline Vec attention_query(const ManifoldPoint& s, const AttentionParams& params) {
  const Vec l = log_origin(s);
  params.check(l.size());
  Vec q = params.b_q;
  for (std::size_t j = 0; j < l.size(); ++j)
    for (std::size_t c = 0; c < q.size(); ++c) q[c] += l[j] * params.w_q(j, c);
  return q;
}

/// Numerically stable softmax of gamma * scores.
inline Vec attention_softmax(std::span<const double> scores, double gamma = 1.0) {
  if (scores.empty()) throw ShapeError("attention_softmax: no scores");
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : scores) mx = std::max(mx, gamma * s);
  Vec a(scores.size());
  double z = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) z += a[j] = std::exp(gamma * scores[j] - mx);
  for (double& v : a) v /= z;
  return a;
}

/// alpha_j = softmax_j(gamma <log_{s_i}(s_j), q_i>). An empty neighbor list is treated as a
/// self-loop and yields {1}.
inline Vec attention_weights(const ManifoldPoint& s_i, std::span<const ManifoldPoint> neighbors,
                             const AttentionParams& params) {
  if (neighbors.empty()) return {1.0};
  const Vec q = attention_query(s_i, params);
  Vec scores(neighbors.size());
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const TangentVector l = log_map(s_i, neighbors[j]);
    const auto sp = spatial_part(l.coords, s_i.curvature);
    double dot = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) dot += sp[c] * q[c];
    scores[j] = dot;
  }
  return attention_softmax(scores, params.gamma);
}

/// exp_{s_i}(sum_j alpha_j log_{s_i}(s_j)), re-projected.
inline ManifoldPoint tangent_aggregate(const ManifoldPoint& s_i, std::span<const ManifoldPoint> neighbors,
                                       std::span<const double> alpha) {
  if (neighbors.size() != alpha.size()) throw ShapeError("tangent_aggregate: one weight per neighbor required");
  if (neighbors.empty()) return s_i;
  Vec acc(s_i.coords.size(), 0.0);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    TangentVector l;
    try {
      l = log_map(s_i, neighbors[j]);
    } catch (const SingularityError&) {
      throw SingularityError("tangent_aggregate: neighbor " + std::to_string(j) + " is antipodal to the center node");
    }
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += alpha[j] * l.coords[c];
  }
  return exp_map(s_i, acc);
}

/// exp_o(tanh(log_o(p))).
inline ManifoldPoint manifold_nonlinearity(const ManifoldPoint& p) {
  Vec v = log_origin(p);
  for (double& x : v) x = std::tanh(x);
  return exp_origin(v, p.curvature);
}

// ---------------------------------------------------------------------------
// Graph-level state

/// Per-component node states of one layer. points[m] is n x ambient_dim, one point per row;
/// rates[m] is the n x d Euclidean firing-rate signal that produced it (empty for the input layer).
struct LayerState {
  ProductManifoldSpec spec;
  std::vector<ad::Tensor> points;
  std::vector<ad::Tensor> rates;

  std::size_t num_nodes() const { return points.empty() ? 0 : points.front().rows; }

  ManifoldPoint point(std::size_t m, std::size_t i) const {
    const auto row = points.at(m).row(i);
    return ManifoldPoint{Vec(row.begin(), row.end()), spec.components.at(m).curvature};
  }

  std::vector<ManifoldPoint> component(std::size_t m) const {
    std::vector<ManifoldPoint> out;
    for (std::size_t i = 0; i < num_nodes(); ++i) out.push_back(point(m, i));
    return out;
  }

  /// Largest constraint violation over every stored point.
  double max_constraint_violation() const {
    double worst = 0.0;
    for (std::size_t m = 0; m < points.size(); ++m)
      for (std::size_t i = 0; i < points[m].rows; ++i) {
        const auto row = points[m].row(i);
        for (double v : row)
          if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, constraint_violation(row, spec.components[m].curvature));
      }
    return worst;
  }
};

/// Message-passing arcs (center i, neighbor j) in sorted order; isolated nodes get a self-loop.
struct ArcList {
  std::size_t n = 0;
  std::vector<std::size_t> center;
  std::vector<std::size_t> neighbor;
  std::vector<std::size_t> fan_out;  // outgoing arcs per node

  std::size_t size() const noexcept { return center.size(); }
};

inline ArcList build_arcs(const Graph& g) {
  ArcList a;
  a.n = g.num_nodes();
  a.fan_out.assign(a.n, 0);
  for (std::size_t i = 0; i < a.n; ++i) {
    const auto& nb = g.neighbors(i);
    if (nb.empty()) {
      a.center.push_back(i);
      a.neighbor.push_back(i);
      continue;
    }
    for (std::size_t j : nb) {
      a.center.push_back(i);
      a.neighbor.push_back(j);
    }
  }
  for (std::size_t j : a.neighbor) ++a.fan_out[j];
  return a;
}

/// Operation counters for the energy model.
struct OpCounters {
  std::uint64_t spikes = 0;  // emitted output spikes
  std::uint64_t acs = 0;     // accumulates triggered by spikes (spikes x fan-out)
  std::uint64_t macs = 0;    // multiply-accumulates on dense paths

  OpCounters& operator+=(const OpCounters& o) {
    spikes += o.spikes;
    acs += o.acs;
    macs += o.macs;
    return *this;
  }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

/// Multiply-accumulates charged for one exp, log or distance evaluation on a length-D vector
/// (inner product, then a scaled combination of two vectors).
constexpr std::uint64_t kMapMacsPerCoord = 3;

struct LayerOptions {
  std::size_t time_steps = 5;
  IFNeuronState neuron{};
  bool spiking = true;          // false: dense mode, the rate is the probability itself
  double dropout = 0.0;         // applied to neighbor tangent vectors when training
  bool training = false;
  std::uint64_t dropout_seed = 0;
  double tangent_clip = 0.0;    // > 0: norm bound on transformed tangent vectors
};

/// Traced parameters of one component of one layer.
struct ComponentParams {
  ad::Var w_q;   // d x d
  ad::Var b_q;   // 1 x d
  double gamma;
  std::optional<ad::Var> w_t;  // optional tangent transform at the origin, d x d
  std::optional<ad::Var> b_t;  // and its bias, 1 x d
};

/// Outputs of one traced component forward.
struct ComponentOutput {
  ad::Var points;  // n x ambient
  ad::Var rates;   // n x d
};

/// One spiking layer on one manifold component for all nodes at once.
///   L_ij = log_{s_i}(s_j)                 tangent messages
///   a_ij = softmax_j(gamma <L_ij, q_i>),  q_i = log_o(s_i) W_q + b_q
///   A_i  = exp_{s_i}(sum_j a_ij L_ij)
///   r_i  = IF rate of Bernoulli(sigmoid(log_o(A_i)))
///   out  = exp_o(tanh(log_o(exp_o(r_i))))
inline ComponentOutput spiking_component_forward(ad::Var S, Curvature k, const ArcList& arcs,
                                                 const ComponentParams& params, const LayerOptions& opt,
                                                 const SpikeStream& stream, OpCounters* counters = nullptr) {
  using namespace ad;
  const std::size_t n = S.rows(), D = S.cols();
  const std::size_t d = k.is_flat() ? D : D - 1;
  if (arcs.n != n) throw ShapeError("spiking_component_forward: arc list and state disagree on node count");
  if (params.w_q.rows() != d || params.w_q.cols() != d || params.b_q.rows() != 1 || params.b_q.cols() != d)
    throw ShapeError("spiking_component_forward: attention parameters do not match the component dimension");
  const std::size_t E = arcs.size();
  if (params.w_t.has_value() != params.b_t.has_value())
    throw ConfigError("spiking_component_forward: tangent transform needs both weight and bias");
  if (params.w_t) {
    Var v = add_row(matmul(logmap0_rows(S, k, false), *params.w_t), *params.b_t);
    if (opt.tangent_clip > 0.0) v = clip_row_norm(v, opt.tangent_clip);
    S = project_rows(expmap0_rows(v, k, false), k);
    if (counters) counters->macs += 2 * n * kMapMacsPerCoord * D + n * d * d;
  }

  Var Xi = gather_rows(S, arcs.center);
  Var Xj = gather_rows(S, arcs.neighbor);
  Var L;
  try {
    L = log_map_rows(Xi, Xj, k);
  } catch (const SingularityError&) {
    for (std::size_t e = 0; e < E; ++e) {
      const auto angle = gsg::detail::chord_angle(Xi.value().row(e), Xj.value().row(e), k);
      if (k.geometry() == Geometry::spherical && angle.theta >= std::numbers::pi - gsg::detail::kInjectivityMargin)
        throw SingularityError("aggregation: nodes " + std::to_string(arcs.center[e]) + " and " +
                               std::to_string(arcs.neighbor[e]) + " are antipodal");
    }
    throw;
  }
  if (opt.training && opt.dropout > 0.0) {
    if (!(opt.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    Rng rng(opt.dropout_seed);
    Tensor mask(E, D);
    const double keep = 1.0 / (1.0 - opt.dropout);
    for (double& v : mask.data) v = rng.uniform() < opt.dropout ? 0.0 : keep;
    L = mul_const(L, std::move(mask));
  }
  Var Lsp = k.is_flat() ? L : slice_cols(L, 1, D);
  Var Q = add_row(matmul(logmap0_rows(S, k, false), params.w_q), params.b_q);
  Var scores = scale(row_dot(Lsp, gather_rows(Q, arcs.center)), params.gamma);
  Var alpha = segment_softmax(scores, arcs.center, n);
  Var agg = segment_sum(scale_rows(L, alpha), arcs.center, n);
  Var A = project_rows(exp_map_rows(S, agg, k, false), k);
  Var P = sigmoid(logmap0_rows(A, k, false));

  Var R;
  if (opt.spiking) {
    std::vector<std::uint64_t> per_row;
    R = spike_rate(P, opt.time_steps, opt.neuron, stream, &per_row);
    if (counters)
      for (std::size_t i = 0; i < n; ++i) {
        counters->spikes += per_row[i];
        counters->acs += per_row[i] * arcs.fan_out[i];
      }
  } else {
    R = P;
    if (counters)
      for (std::size_t i = 0; i < n; ++i) counters->macs += d * arcs.fan_out[i];
  }
  Var M = expmap0_rows(R, k, false);
  Var out = expmap0_rows(tanh(logmap0_rows(M, k, false)), k, false);

  if (counters) {
    const std::uint64_t m = kMapMacsPerCoord;
    counters->macs += n * m * D                // log_o for the query
                      + n * d * d              // W_q
                      + E * m * D              // messages
                      + E * d                  // scores
                      + E * D                  // weighted aggregation
                      + n * m * D              // exp at the center
                      + n * m * D + n * d      // log_o and sigmoid
                      + 3 * n * m * D + n * d; // re-projection and nonlinearity
  }
  return {out, R};
}

}  // namespace gsg
