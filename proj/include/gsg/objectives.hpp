#pragma once

// Task heads and losses: gated multi-manifold link scores with a margin ranking loss, and
// node classification from log-mapped embeddings with cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gsg/ad_manifold.hpp"
#include "gsg/autodiff.hpp"
#include "gsg/graph.hpp"
#include "gsg/layers.hpp"
#include "gsg/manifold.hpp"
#include "gsg/random.hpp"

namespace gsg {

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Per-component linear scoring f_M(s) = log_o(s) . w_M + b_M.
struct GatingHead {
  std::vector<Vec> weight;
  std::vector<double> bias;
};

/// Divides positive values by their sum.
inline Vec normalize_positive(std::span<const double> v) {
  double z = 0.0;
  for (double x : v) {
    if (!(x > 0.0)) throw DomainError("normalize_positive: entries must be positive");
    z += x;
  }
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= z;
  return out;
}

/// g_M = softplus(f_M(s_M)) / sum_i softplus(f_i(s_i)).
inline Vec gate_weights(std::span<const ManifoldPoint> embeddings, const GatingHead& head) {
  if (embeddings.size() != head.weight.size() || head.bias.size() != head.weight.size())
    throw ShapeError("gate_weights: one embedding and one gating map per component required");
  Vec pos(embeddings.size());
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    const Vec l = log_origin(embeddings[m]);
    if (l.size() != head.weight[m].size()) throw ShapeError("gate_weights: gating map size does not match component");
    double f = head.bias[m];
    for (std::size_t c = 0; c < l.size(); ++c) f += head.weight[m][c] * l[c];
    pos[m] = ad::softplus_value(f);
  }
  return normalize_positive(pos);
}

namespace detail {
/// Shifted terms of the gated mixture: e_M = exp(-(d2_M - min d2)), their gated sum and the
/// gate total. Zero gates drop out.
struct MixtureTerms {
  double shift = 0.0;
  double num = 0.0;
  double den = 0.0;
};

inline MixtureTerms mixture_terms(std::span<const double> gates, std::span<const double> sq_dists) {
  MixtureTerms t;
  t.shift = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < gates.size(); ++m)
    if (gates[m] > 0.0) t.shift = std::min(t.shift, sq_dists[m]);
  for (std::size_t m = 0; m < gates.size(); ++m)
    if (gates[m] > 0.0) {
      t.num += gates[m] * std::exp(t.shift - sq_dists[m]);
      t.den += gates[m];
    }
  return t;
}
}  // namespace detail

/// log(sum_M g_M exp(-d2_M) / sum_M g_M), evaluated stably. The gate total is 1 up to rounding;
/// dividing by it makes the score exactly 0 when every distance is 0.
inline double mixture_score(std::span<const double> gates, std::span<const double> sq_dists) {
  if (gates.size() != sq_dists.size() || gates.empty()) throw ShapeError("mixture_score: size mismatch");
  const auto t = detail::mixture_terms(gates, sq_dists);
  if (!(t.den > 0.0)) throw DomainError("mixture_score: gates must have positive total");
  return std::log(t.num / t.den) - t.shift;
}

/// r(u, v) = log(sum_M g_M(u) exp(-d2_M(u, v))). Always <= 0 when the gates sum to one.
inline double pair_score(std::span<const ManifoldPoint> u, std::span<const ManifoldPoint> v,
                         std::span<const double> gates) {
  if (u.size() != v.size() || u.size() != gates.size()) throw ShapeError("pair_score: component count mismatch");
  Vec d2(u.size());
  for (std::size_t m = 0; m < u.size(); ++m) {
    gsg::detail::check_same_manifold(u[m], v[m], "pair_score");
    d2[m] = gsg::detail::sq_distance_raw(u[m].coords, v[m].coords, u[m].curvature);
  }
  return mixture_score(gates, d2);
}

/// Mean over triplets of max(0, m - r_pos + r_neg), given the (r_pos, r_neg) score of each.
inline double link_margin_loss(std::span<const std::pair<double, double>> scores, double margin) {
  if (!(margin >= 0.0)) throw ConfigError("link_margin_loss: margin must be non-negative");
  if (scores.empty()) {
    warn("link_margin_loss: no triplets, loss is 0");
    return 0.0;
  }
  double acc = 0.0;
  for (auto [pos, neg] : scores) acc += std::max(0.0, margin - pos + neg);
  return acc / static_cast<double>(scores.size());
}

/// For every edge (u, v) in both orientations, n_per_edge negatives drawn uniformly from the
/// non-neighbors of u (u itself excluded). Anchors without non-neighbors are skipped.
inline std::vector<Triplet> sample_triplets(const Graph& g, std::size_t n_per_edge, std::uint64_t seed) {
  const std::size_t n = g.num_nodes();
  if (n < 3 || g.num_edges() == 0) throw ConfigError("sample_triplets: need at least 3 nodes and one edge");
  Rng rng(derive_seed(seed, 0x7219));
  std::vector<Triplet> out;
  std::vector<std::uint8_t> warned(n, 0);
  for (auto [a, b] : g.edges()) {
    for (auto [u, v] : {std::pair{a, b}, std::pair{b, a}}) {
      const std::size_t candidates = n - 1 - g.degree(u);
      if (candidates == 0) {
        if (!warned[u]) warn("sample_triplets: node " + std::to_string(u) + " has no non-neighbors, skipped");
        warned[u] = 1;
        continue;
      }
      for (std::size_t k = 0; k < n_per_edge; ++k) {
        // draw the r-th non-neighbor by walking the sorted adjacency
        std::size_t r = rng.below(candidates);
        std::size_t w = 0;
        const auto& nb = g.neighbors(u);
        std::size_t p = 0;
        while (true) {
          const bool excluded = w == u || (p < nb.size() && nb[p] == w);
          if (p < nb.size() && nb[p] == w) ++p;
          if (!excluded) {
            if (r == 0) break;
            --r;
          }
          ++w;
        }
        out.push_back({u, v, w});
      }
    }
  }
  return out;
}

struct ClassifierHead {
  ad::Tensor weight;  // total intrinsic dim x C
  Vec bias;           // C
};

/// softmax(concat_M log_o(s_M) W + b).
inline Vec classification_probs(std::span<const ManifoldPoint> embeddings, const ClassifierHead& head) {
  Vec feat;
  for (const auto& e : embeddings) {
    const Vec l = log_origin(e);
    feat.insert(feat.end(), l.begin(), l.end());
  }
  if (head.weight.rows != feat.size() || head.weight.cols != head.bias.size())
    throw ShapeError("classification_probs: classifier shape does not match the embedding");
  if (head.bias.size() < 2) throw ConfigError("classification_probs: need at least two classes");
  Vec logits = head.bias;
  for (std::size_t j = 0; j < feat.size(); ++j)
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += feat[j] * head.weight(j, c);
  return attention_softmax(logits);
}

constexpr double kProbabilityFloor = 1e-12;

/// Mean over masked nodes of -log p[v, y_v]; probabilities below 1e-12 are clamped.
inline double cross_entropy_loss(const ad::Tensor& probs, std::span<const int> labels, const Mask& mask) {
  if (labels.size() != probs.rows || mask.size() != probs.rows) throw ShapeError("cross_entropy_loss: size mismatch");
  double acc = 0.0;
  std::size_t count = 0;
  bool clamped = false;
  for (std::size_t v = 0; v < probs.rows; ++v) {
    if (!mask[v]) continue;
    const auto y = static_cast<std::size_t>(labels[v]);
    if (y >= probs.cols) throw ShapeError("cross_entropy_loss: label out of range");
    double p = probs(v, y);
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      clamped = true;
    }
    acc -= std::log(p);
    ++count;
  }
  if (clamped) warn("cross_entropy_loss: true-class probability clamped to 1e-12");
  if (count == 0) throw EvaluationError("cross_entropy_loss: empty mask");
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Traced versions

namespace ad {

/// Row-wise log(sum_m G[r,m] exp(-D2[r,m]) / sum_m G[r,m]) for E x K gates and squared distances.
inline Var log_mix_exp(Var G, Var D2) {
  const Tensor& g = G.value();
  const Tensor& d = D2.value();
  if (!g.same_shape(d)) throw ShapeError("log_mix_exp: shape mismatch");
  for (double v : g.data)
    if (!(v > 0.0)) throw NumericError("log_mix_exp: gates must be positive");
  Tensor out(g.rows, 1);
  for (std::size_t r = 0; r < g.rows; ++r) out.data[r] = mixture_score(g.row(r), d.row(r));
  const std::size_t ig = G.id(), id = D2.id();
  return G.tape().push(std::move(out), "log_mix_exp", [ig, id](Tape& t, std::size_t, const Tensor& up) {
    const Tensor& g = t.value(ig);
    const Tensor& d = t.value(id);
    Tensor& gg = t.grad(ig);
    Tensor& gd = t.grad(id);
    for (std::size_t i = 0; i < g.rows; ++i) {
      const auto terms = gsg::detail::mixture_terms(g.row(i), d.row(i));
      for (std::size_t m = 0; m < g.cols; ++m) {
        const double e = std::exp(terms.shift - d(i, m)) / terms.num;  // exp(-d2) / sum g exp(-d2)
        gg(i, m) += up.data[i] * (e - 1.0 / terms.den);
        gd(i, m) -= up.data[i] * e * g(i, m);
      }
    }
  });
}

/// Gates for all nodes: n x K matrix from the per-component log-mapped embeddings (n x d_M each),
/// gate weights (d_M x 1) and biases (1 x 1).
inline Var gate_weights(const std::vector<Var>& logs, const std::vector<Var>& weight, const std::vector<Var>& bias) {
  if (logs.size() != weight.size() || logs.size() != bias.size() || logs.empty())
    throw ShapeError("gate_weights: one map per component required");
  std::vector<Var> cols;
  for (std::size_t m = 0; m < logs.size(); ++m) cols.push_back(add_row(matmul(logs[m], weight[m]), bias[m]));
  Var pos = softplus(concat_cols(cols));
  Var total = row_sum(pos);
  // divide each row by its total
  const Tensor& tv = total.value();
  Tensor inv(tv.rows, 1);
  for (std::size_t r = 0; r < tv.rows; ++r) inv.data[r] = 1.0 / tv.data[r];
  const std::size_t it = total.id();
  Var inv_total = total.tape().push(std::move(inv), "reciprocal", [it](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(it);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] -= g.data[i] * y.data[i] * y.data[i];
  });
  return scale_rows(pos, inv_total);
}

/// Link scores r(u_k, v_k) for index lists u, v given per-component points and node gates.
inline Var pair_scores(const std::vector<Var>& points, const std::vector<Curvature>& curvatures, Var gates,
                       const std::vector<std::size_t>& u, const std::vector<std::size_t>& v) {
  std::vector<Var> d2;
  for (std::size_t m = 0; m < points.size(); ++m)
    d2.push_back(sq_distance_rows(gather_rows(points[m], u), gather_rows(points[m], v), curvatures[m]));
  return log_mix_exp(gather_rows(gates, u), concat_cols(d2));
}

/// mean(relu(margin - r_pos + r_neg)).
inline Var link_margin_loss(Var r_pos, Var r_neg, double margin) {
  if (!(margin >= 0.0)) throw ConfigError("link_margin_loss: margin must be non-negative");
  if (r_pos.rows() == 0) {
    warn("link_margin_loss: no triplets, loss is 0");
    return r_pos.tape().constant(Tensor::scalar(0.0));
  }
  return mean(relu(add_scalar(sub(r_neg, r_pos), margin)));
}

/// Mean over rows of -log softmax(logits)[r, labels[r]], with the probability floored at 1e-12.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  if (labels.empty()) throw EvaluationError("cross_entropy: empty mask");
  Var p = pick(softmax_rows(logits), labels);
  bool clamped = false;
  for (double v : p.value().data) clamped |= v < kProbabilityFloor;
  if (clamped) warn("cross_entropy: true-class probability clamped to 1e-12");
  return neg(mean(log(clamp_min(p, kProbabilityFloor))));
}

}  // namespace ad
}  // namespace gsg
