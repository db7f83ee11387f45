#pragma once

// The full network: a learned linear compressor to the total embedding dimension, Riemannian
// embedding per component, a stack of spiking layers and one task head.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsg/ad_manifold.hpp"
#include "gsg/autodiff.hpp"
#include "gsg/graph.hpp"
#include "gsg/layers.hpp"
#include "gsg/manifold.hpp"
#include "gsg/objectives.hpp"
#include "gsg/optimizer.hpp"
#include "gsg/random.hpp"
#include "gsg/spiking.hpp"

namespace gsg {

enum class Task { nc, lp };

inline std::string to_string(Task t) { return t == Task::nc ? "nc" : "lp"; }

inline Task parse_task(std::string_view s) {
  if (s == "nc") return Task::nc;
  if (s == "lp") return Task::lp;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected nc or lp)");
}

struct ModelConfig {
  ProductManifoldSpec geometry;
  Task task = Task::nc;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;   // nc only
  std::size_t layers = 2;
  std::size_t time_steps = 5;
  bool spiking = true;
  double dropout = 0.0;
  std::optional<double> gamma;   // attention temperature, default 1/sqrt(d)
  double embed_clip = 4.0;        // norm bound on learned tangent vectors fed to exp_o; 0 disables
  bool tangent_transform = false; // learned linear map in the origin tangent space before aggregation
  IFNeuronState neuron{};

  void validate() const {
    if (geometry.size() == 0) throw ConfigError("model: empty geometry");
    if (input_dim == 0) throw ConfigError("model: input dimension must be positive");
    if (task == Task::nc && num_classes < 2) throw ConfigError("model: classification needs at least two classes");
    if (time_steps == 0) throw ConfigError("model: T must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (gamma && !(*gamma > 0.0)) throw ConfigError("model: gamma must be positive");
    if (!(embed_clip >= 0.0)) throw ConfigError("model: embedding clip must be non-negative");
    neuron.validate();
  }
};

struct Parameter {
  std::string name;
  ad::Tensor value;
  ParamTag tag;
};

/// Every learnable tensor, in a fixed order.
struct ModelParams {
  std::vector<Parameter> list;

  const Parameter& get(const std::string& name) const {
    for (const auto& p : list)
      if (p.name == name) return p;
    throw ConfigError("model: no parameter named '" + name + "'");
  }
  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i].name == name) return i;
    throw ConfigError("model: no parameter named '" + name + "'");
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (const auto& p : list) c += p.value.size();
    return c;
  }
};

namespace detail {
inline ad::Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  ad::Tensor t(rows, cols);
  for (double& v : t.data) v = rng.uniform(-a, a);
  return t;
}
inline std::string layer_name(std::size_t l, std::size_t m, const char* what) {
  return "layer" + std::to_string(l) + ".c" + std::to_string(m) + "." + what;
}
}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, double lr, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x1417));
  const std::size_t D = cfg.geometry.total_dim();
  const auto euclid = ParamTag::euclidean(lr);
  ModelParams p;
  p.list.push_back({"input.weight", detail::glorot(cfg.input_dim, D, rng), euclid});
  p.list.push_back({"input.bias", ad::Tensor(1, D), euclid});
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (std::size_t m = 0; m < cfg.geometry.size(); ++m) {
      const std::size_t d = cfg.geometry.components[m].dim;
      p.list.push_back({detail::layer_name(l, m, "w_q"), detail::glorot(d, d, rng), euclid});
      p.list.push_back({detail::layer_name(l, m, "b_q"), ad::Tensor(1, d), euclid});
      if (cfg.tangent_transform) {
        p.list.push_back({detail::layer_name(l, m, "w_t"), detail::glorot(d, d, rng), euclid});
        p.list.push_back({detail::layer_name(l, m, "b_t"), ad::Tensor(1, d), euclid});
      }
    }
  if (cfg.task == Task::nc) {
    p.list.push_back({"classifier.weight", detail::glorot(D, cfg.num_classes, rng), euclid});
    p.list.push_back({"classifier.bias", ad::Tensor(1, cfg.num_classes), euclid});
  } else {
    for (std::size_t m = 0; m < cfg.geometry.size(); ++m) {
      const std::size_t d = cfg.geometry.components[m].dim;
      p.list.push_back({"gate.c" + std::to_string(m) + ".weight", detail::glorot(d, 1, rng), euclid});
      p.list.push_back({"gate.c" + std::to_string(m) + ".bias", ad::Tensor(1, 1), euclid});
    }
  }
  return p;
}

/// Per-forward randomness and mode.
struct ForwardMode {
  bool training = false;
  std::uint64_t seed = 0;   // spike and dropout streams derive from this
};

/// A model instantiated on a tape: parameter leaves plus the encoder output.
struct TracedModel {
  std::vector<ad::Var> params;
  std::vector<ad::Var> points;  // final per-component states, n x ambient
  std::vector<std::vector<ad::Var>> layer_points;  // every layer's output (embedding first)
  std::vector<std::vector<ad::Var>> layer_rates;
};

/// Records the encoder on the tape. Counters (if given) receive spike and MAC counts. Parameter
/// leaves are created from params unless the caller supplies them (one per parameter, in order).
inline TracedModel encode(ad::Tape& tape, const ModelParams& params, const ModelConfig& cfg, const Graph& graph,
                          const ArcList& arcs, const ForwardMode& mode, OpCounters* counters = nullptr,
                          const std::vector<ad::Var>* leaves = nullptr) {
  using namespace ad;
  cfg.validate();
  if (graph.feature_dim() != cfg.input_dim)
    throw ConfigError("model: dataset has " + std::to_string(graph.feature_dim()) + " features, model expects " +
                      std::to_string(cfg.input_dim));
  TracedModel tm;
  if (leaves) {
    if (leaves->size() != params.list.size()) throw ShapeError("encode: one leaf per parameter required");
    for (std::size_t i = 0; i < leaves->size(); ++i)
      if (!(*leaves)[i].value().same_shape(params.list[i].value))
        throw ShapeError("encode: leaf for '" + params.list[i].name + "' has the wrong shape");
    tm.params = *leaves;
  } else {
    for (const auto& p : params.list) tm.params.push_back(tape.leaf(p.value, p.name));
  }
  auto param = [&](const std::string& name) { return tm.params[params.index(name)]; };

  const std::size_t n = graph.num_nodes();
  const std::size_t D = cfg.geometry.total_dim();
  Var X = tape.constant(graph.features());
  Var H = add_row(matmul(X, param("input.weight")), param("input.bias"));
  if (counters) counters->macs += n * cfg.input_dim * D;

  std::vector<Var> state;
  std::size_t off = 0;
  for (const auto& c : cfg.geometry.components) {
    Var h = slice_cols(H, off, off + c.dim);
    if (cfg.embed_clip > 0.0) h = clip_row_norm(h, cfg.embed_clip);
    state.push_back(expmap0_rows(h, c.curvature, false));
    if (counters) counters->macs += n * kMapMacsPerCoord * ambient_dim(c.curvature, c.dim);
    off += c.dim;
  }
  tm.layer_points.push_back(state);

  LayerOptions opt;
  opt.time_steps = cfg.time_steps;
  opt.neuron = cfg.neuron;
  opt.spiking = cfg.spiking;
  opt.dropout = cfg.dropout;
  opt.training = mode.training;
  opt.tangent_clip = cfg.embed_clip;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::vector<Var> next, rates;
    for (std::size_t m = 0; m < cfg.geometry.size(); ++m) {
      const auto& c = cfg.geometry.components[m];
      ComponentParams cp{param(gsg::detail::layer_name(l, m, "w_q")), param(gsg::detail::layer_name(l, m, "b_q")),
                         cfg.gamma.value_or(1.0 / std::sqrt(static_cast<double>(c.dim))), std::nullopt, std::nullopt};
      if (cfg.tangent_transform) {
        cp.w_t = param(gsg::detail::layer_name(l, m, "w_t"));
        cp.b_t = param(gsg::detail::layer_name(l, m, "b_t"));
      }
      opt.dropout_seed = derive_seed(mode.seed, 0xd409 + l, m);
      const SpikeStream stream{mode.seed, (static_cast<std::uint64_t>(l) << 16) | m};
      auto out = spiking_component_forward(state[m], c.curvature, arcs, cp, opt, stream, counters);
      next.push_back(out.points);
      rates.push_back(out.rates);
    }
    state = std::move(next);
    tm.layer_points.push_back(state);
    tm.layer_rates.push_back(std::move(rates));
  }
  tm.points = state;
  return tm;
}

inline std::vector<Curvature> curvatures(const ProductManifoldSpec& spec) {
  std::vector<Curvature> out;
  for (const auto& c : spec.components) out.push_back(c.curvature);
  return out;
}

/// Concatenated log_o of the final states: n x total intrinsic dimension.
inline ad::Var tangent_features(const TracedModel& tm, const ModelConfig& cfg) {
  std::vector<ad::Var> logs;
  for (std::size_t m = 0; m < cfg.geometry.size(); ++m)
    logs.push_back(ad::logmap0_rows(tm.points[m], cfg.geometry.components[m].curvature, false));
  return logs.size() == 1 ? logs.front() : ad::concat_cols(logs);
}

/// n x C class logits.
inline ad::Var class_logits(const TracedModel& tm, const ModelParams& params, const ModelConfig& cfg,
                            OpCounters* counters = nullptr) {
  ad::Var f = tangent_features(tm, cfg);
  if (counters) {
    for (const auto& c : cfg.geometry.components)
      counters->macs += f.rows() * kMapMacsPerCoord * ambient_dim(c.curvature, c.dim);
    counters->macs += f.rows() * f.cols() * cfg.num_classes;
  }
  return ad::add_row(ad::matmul(f, tm.params[params.index("classifier.weight")]),
                     tm.params[params.index("classifier.bias")]);
}

/// n x K gate matrix.
inline ad::Var node_gates(const TracedModel& tm, const ModelParams& params, const ModelConfig& cfg,
                          OpCounters* counters = nullptr) {
  std::vector<ad::Var> logs, w, b;
  for (std::size_t m = 0; m < cfg.geometry.size(); ++m) {
    const auto& c = cfg.geometry.components[m];
    logs.push_back(ad::logmap0_rows(tm.points[m], c.curvature, false));
    w.push_back(tm.params[params.index("gate.c" + std::to_string(m) + ".weight")]);
    b.push_back(tm.params[params.index("gate.c" + std::to_string(m) + ".bias")]);
    if (counters) counters->macs += logs.back().rows() * (kMapMacsPerCoord * ambient_dim(c.curvature, c.dim) + c.dim);
  }
  return ad::gate_weights(logs, w, b);
}

inline ad::Var link_scores(const TracedModel& tm, const ModelConfig& cfg, ad::Var gates, const std::vector<Edge>& pairs,
                           OpCounters* counters = nullptr) {
  std::vector<std::size_t> u, v;
  for (auto [a, b] : pairs) {
    u.push_back(a);
    v.push_back(b);
  }
  if (counters)
    for (const auto& c : cfg.geometry.components)
      counters->macs += pairs.size() * (kMapMacsPerCoord * ambient_dim(c.curvature, c.dim) + 2);
  return ad::pair_scores(tm.points, curvatures(cfg.geometry), gates, u, v);
}

/// Classification loss over the nodes of a mask.
inline ad::Var nc_loss(const TracedModel& tm, const ModelParams& params, const ModelConfig& cfg, const Graph& graph,
                       const Mask& mask) {
  ad::Var logits = class_logits(tm, params, cfg);
  const auto idx = mask_indices(mask);
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) labels.push_back(static_cast<std::size_t>(graph.labels()[i]));
  return ad::cross_entropy(ad::gather_rows(logits, idx), labels);
}

/// Margin ranking loss over triplets.
inline ad::Var lp_loss(const TracedModel& tm, const ModelParams& params, const ModelConfig& cfg,
                       const std::vector<Triplet>& triplets, double margin) {
  if (triplets.empty()) {
    warn("link_margin_loss: no triplets, loss is 0");
    return tm.points.front().tape().constant(ad::Tensor::scalar(0.0));
  }
  ad::Var gates = node_gates(tm, params, cfg);
  std::vector<Edge> pos, neg;
  for (const auto& t : triplets) {
    pos.emplace_back(t.anchor, t.positive);
    neg.emplace_back(t.anchor, t.negative);
  }
  return ad::link_margin_loss(link_scores(tm, cfg, gates, pos), link_scores(tm, cfg, gates, neg), margin);
}

}  // namespace gsg
