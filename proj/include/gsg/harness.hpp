#pragma once

// Training and evaluation loops, metrics, the energy estimate and the results document.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsg/graph.hpp"
#include "gsg/layers.hpp"
#include "gsg/manifold.hpp"
#include "gsg/model.hpp"
#include "gsg/objectives.hpp"
#include "gsg/optimizer.hpp"

namespace gsg {

inline constexpr int kResultsSchemaVersion = 1;

struct RunConfig {
  Task task = Task::nc;
  std::string geometry = "h32";
  std::optional<std::size_t> dim = 32;  // required sum of component dimensions; unset accepts any
  double curvature_magnitude = 1.0;
  std::size_t time_steps = 5;
  double lr = 0.003;
  double geo_step = 0.1;
  double margin = 0.1;
  std::size_t negatives_per_edge = 1;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::optional<std::string> dataset;    // directory with edges.txt, features.csv, labels.txt
  std::optional<std::string> synthetic;  // e.g. "sbm:2,50,0.1,0.01"
  double dropout = 0.0;
  std::size_t layers = 2;
  bool spiking = true;
  bool tangent_transform = false;
  double embed_clip = 4.0;
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;
  SplitFractions node_split{0.6, 0.2, 0.2};
  SplitFractions edge_split{0.85, 0.05, 0.10};

  void validate() const {
    if (dataset.has_value() == synthetic.has_value()) throw ConfigError("exactly one of dataset and synthetic is required");
    if (!(lr > 0.0) || !(geo_step > 0.0)) throw ConfigError("learning rate and geometric step must be positive");
    if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
    if (time_steps == 0) throw ConfigError("time steps must be positive");
    if (!(e_mac_pj >= 0.0 && e_ac_pj >= 0.0)) throw ConfigError("energy constants must be non-negative");
    if (negatives_per_edge == 0) throw ConfigError("negatives per edge must be positive");
  }

  ProductManifoldSpec product() const { return parse_geometry_spec(geometry, dim, curvature_magnitude); }
};

struct EpochRecord {
  std::size_t epoch;
  double loss;
  double val_metric;
  double max_constraint_violation;
};

struct EnergyReport {
  std::uint64_t spikes = 0;
  std::uint64_t acs = 0;   // spike-driven accumulates
  std::uint64_t macs = 0;
  double e_ac_pj = 0.9;
  double e_mac_pj = 4.6;
  double total_mj = 0.0;
};

/// total [mJ] = (ACs * e_ac + MACs * e_mac) [pJ] * 1e-9.
inline EnergyReport estimate_energy(const OpCounters& c, double e_mac_pj = 4.6, double e_ac_pj = 0.9) {
  EnergyReport r;
  r.spikes = c.spikes;
  r.acs = c.acs;
  r.macs = c.macs;
  r.e_ac_pj = e_ac_pj;
  r.e_mac_pj = e_mac_pj;
  r.total_mj = (static_cast<double>(c.acs) * e_ac_pj + static_cast<double>(c.macs) * e_mac_pj) * 1e-9;
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

inline double accuracy(std::span<const std::size_t> predicted, std::span<const int> labels, const Mask& mask) {
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    hit += predicted[i] == static_cast<std::size_t>(labels[i]);
  }
  if (total == 0) throw EvaluationError("accuracy: empty evaluation mask");
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Probability that a random positive outscores a random negative, ties counting one half.
inline double auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw EvaluationError("auc: need positive and negative scores");
  std::vector<std::pair<double, int>> all;
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;  // 1-based average ranks of the positives
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += avg;
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

// ---------------------------------------------------------------------------
// Data pipeline

/// The graph, split and message-passing structure a run trains on.
struct PreparedData {
  Graph graph;              // node masks set for nc
  Graph message_graph;      // graph used for aggregation (training edges only for lp)
  std::optional<EdgeSplit> edges;
  ArcList arcs;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
  cfg.validate();
  Graph g = cfg.dataset ? load_dataset_dir(*cfg.dataset) : generate_synthetic(parse_synthetic_spec(*cfg.synthetic), cfg.seed);
  PreparedData d;
  if (cfg.task == Task::nc) {
    if (!g.has_labels()) throw ConfigError("node classification needs labels");
    if (!g.has_masks()) g = split(g, cfg.node_split, cfg.seed);
    d.graph = g;
    d.message_graph = g;
  } else {
    d.edges = split_edges(g, cfg.edge_split, cfg.seed);
    d.message_graph = g.with_edges(d.edges->train);
    d.graph = std::move(g);
  }
  d.arcs = build_arcs(d.message_graph);
  return d;
}

inline ModelConfig model_config(const RunConfig& cfg, const Graph& g) {
  ModelConfig m;
  try {
    m.geometry = cfg.product();
  } catch (const ParseError& e) {
    throw ConfigError(std::string("geometry does not fit the configuration: ") + e.what());
  }
  m.task = cfg.task;
  m.input_dim = g.feature_dim();
  m.num_classes = cfg.task == Task::nc ? g.num_classes() : 0;
  m.layers = cfg.layers;
  m.time_steps = cfg.time_steps;
  m.spiking = cfg.spiking;
  m.dropout = cfg.dropout;
  m.tangent_transform = cfg.tangent_transform;
  m.embed_clip = cfg.embed_clip;
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Metrics {
  std::optional<double> train_accuracy, val_accuracy, test_accuracy;
  std::optional<double> val_auc, test_auc;
};

/// Seed of the deterministic inference forward pass.
inline std::uint64_t eval_seed(std::uint64_t seed) { return derive_seed(seed, 0xe7a1); }

inline std::vector<std::size_t> predict_classes(const ModelParams& params, const ModelConfig& mc, const PreparedData& d,
                                                std::uint64_t seed, OpCounters* counters = nullptr) {
  ad::Tape tape;
  auto tm = encode(tape, params, mc, d.message_graph, d.arcs, {false, seed}, counters);
  const ad::Tensor& logits = class_logits(tm, params, mc, counters).value();
  std::vector<std::size_t> pred(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    pred[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pred;
}

/// Link scores for the given pairs from one inference pass.
inline std::vector<double> score_pairs(const ModelParams& params, const ModelConfig& mc, const PreparedData& d,
                                       const std::vector<Edge>& pairs, std::uint64_t seed,
                                       OpCounters* counters = nullptr) {
  ad::Tape tape;
  auto tm = encode(tape, params, mc, d.message_graph, d.arcs, {false, seed}, counters);
  ad::Var gates = node_gates(tm, params, mc, counters);
  return link_scores(tm, mc, gates, pairs, counters).value().data;
}

inline double lp_auc(const ModelParams& params, const ModelConfig& mc, const PreparedData& d, const std::vector<Edge>& pos,
                     const std::vector<Edge>& neg, std::uint64_t seed) {
  std::vector<Edge> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  const auto s = score_pairs(params, mc, d, all, seed);
  return auc(std::span(s).first(pos.size()), std::span(s).subspan(pos.size()));
}

/// nc: accuracy on every mask; lp: AUC on the validation and test edges.
inline Metrics evaluate(const ModelParams& params, const ModelConfig& mc, const PreparedData& d, std::uint64_t seed) {
  Metrics m;
  if (mc.task == Task::nc) {
    const auto pred = predict_classes(params, mc, d, eval_seed(seed));
    const auto& labels = d.graph.labels();
    m.train_accuracy = accuracy(pred, labels, d.graph.train_mask());
    m.val_accuracy = accuracy(pred, labels, d.graph.val_mask());
    m.test_accuracy = accuracy(pred, labels, d.graph.test_mask());
  } else {
    m.val_auc = lp_auc(params, mc, d, d.edges->val_pos, d.edges->val_neg, eval_seed(seed));
    m.test_auc = lp_auc(params, mc, d, d.edges->test_pos, d.edges->test_neg, eval_seed(seed));
  }
  return m;
}

/// Spike and MAC counts of one inference pass: encoder plus the task head over all nodes
/// (and, for lp, over the test pairs).
inline OpCounters count_inference_ops(const ModelParams& params, const ModelConfig& mc, const PreparedData& d,
                                      std::uint64_t seed) {
  OpCounters c;
  if (mc.task == Task::nc) {
    predict_classes(params, mc, d, eval_seed(seed), &c);
  } else {
    std::vector<Edge> all = d.edges->test_pos;
    all.insert(all.end(), d.edges->test_neg.begin(), d.edges->test_neg.end());
    score_pairs(params, mc, d, all, eval_seed(seed), &c);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  RunConfig config;
  ModelConfig model;
  ModelParams params;             // best-validation parameters
  ModelParams initial_params;
  std::vector<EpochRecord> trace;
  std::optional<std::size_t> best_epoch;
  bool aborted = false;           // stopped on a non-finite loss
  double max_constraint_violation = 0.0;
};

namespace detail {
inline double max_violation(const TracedModel& tm, const ModelConfig& mc) {
  double worst = 0.0;
  for (const auto& layer : tm.layer_points)
    for (std::size_t m = 0; m < layer.size(); ++m) {
      const auto& v = layer[m].value();
      const Curvature k = mc.geometry.components[m].curvature;
      for (std::size_t r = 0; r < v.rows; ++r) {
        for (double x : v.row(r))
          if (!std::isfinite(x)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, constraint_violation(v.row(r), k));
      }
    }
  return worst;
}

inline double validation_metric(const ModelParams& params, const ModelConfig& mc, const PreparedData& d,
                                std::uint64_t seed) {
  if (mc.task == Task::nc) {
    const auto pred = predict_classes(params, mc, d, eval_seed(seed));
    return accuracy(pred, d.graph.labels(), d.graph.val_mask());
  }
  return lp_auc(params, mc, d, d.edges->val_pos, d.edges->val_neg, eval_seed(seed));
}
}  // namespace detail

/// Full-batch training. Each epoch: forward, loss, backward, one RSGD step per parameter,
/// validation. The parameters with the best validation metric are kept.
inline TrainResult run_train(const RunConfig& cfg, const PreparedData& d) {
  cfg.validate();
  TrainResult res;
  res.config = cfg;
  res.model = model_config(cfg, d.graph);
  res.params = init_params(res.model, cfg.lr, cfg.seed);
  res.initial_params = res.params;
  ModelParams current = res.params;
  double best = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, 0xe90c, epoch);
    double lv = 0.0, violation = 0.0;
    try {
      ad::Tape tape;
      auto tm = encode(tape, current, res.model, d.message_graph, d.arcs, {true, epoch_seed});
      ad::Var loss = cfg.task == Task::nc ? nc_loss(tm, current, res.model, d.graph, d.graph.train_mask())
                                          : lp_loss(tm, current, res.model,
                                                    sample_triplets(d.message_graph, cfg.negatives_per_edge, epoch_seed),
                                                    cfg.margin);
      lv = loss.value().item();
      if (!std::isfinite(lv)) throw NumericError("loss is not finite");
      violation = detail::max_violation(tm, res.model);
      const ad::GradientStore grads = tape.backward(loss);
      for (std::size_t i = 0; i < current.list.size(); ++i)
        rsgd_step(current.list[i].value, grads.get_or_zero(tm.params[i]), current.list[i].tag);
    } catch (const NumericError& e) {
      warn("run_train: numeric failure at epoch " + std::to_string(epoch) + " (" + e.what() +
           "), keeping the last good parameters");
      res.aborted = true;
      break;
    }
    double val = 0.0;
    try {
      val = detail::validation_metric(current, res.model, d, cfg.seed);
    } catch (const NumericError& e) {
      warn("run_train: parameters stopped being finite after epoch " + std::to_string(epoch) + " (" + e.what() +
           "), keeping the last good parameters");
      res.aborted = true;
      break;
    }
    res.max_constraint_violation = std::max(res.max_constraint_violation, violation);
    res.trace.push_back({epoch, lv, val, violation});
    if (val > best) {
      best = val;
      res.best_epoch = epoch;
      res.params = current;
    }
  }
  return res;
}

inline TrainResult run_train(const RunConfig& cfg) { return run_train(cfg, prepare_data(cfg)); }

// ---------------------------------------------------------------------------
// Results document

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["geometry"] = c.geometry;
  j["dim"] = c.dim ? nlohmann::json(*c.dim) : nlohmann::json(nullptr);
  j["curvature_magnitude"] = c.curvature_magnitude;
  j["time_steps"] = c.time_steps;
  j["lr"] = c.lr;
  j["geo_step"] = c.geo_step;
  j["margin"] = c.margin;
  j["negatives_per_edge"] = c.negatives_per_edge;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["dataset"] = c.dataset ? nlohmann::json(*c.dataset) : nlohmann::json(nullptr);
  j["synthetic"] = c.synthetic ? nlohmann::json(*c.synthetic) : nlohmann::json(nullptr);
  j["dropout"] = c.dropout;
  j["layers"] = c.layers;
  j["spiking"] = c.spiking;
  j["tangent_transform"] = c.tangent_transform;
  j["embed_clip"] = c.embed_clip;
  j["energy_constants_pj"] = {{"mac", c.e_mac_pj}, {"ac", c.e_ac_pj}};
  j["node_split"] = {c.node_split.train, c.node_split.val, c.node_split.test};
  j["edge_split"] = {c.edge_split.train, c.edge_split.val, c.edge_split.test};
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.task = parse_task(j.at("task").get<std::string>());
  c.geometry = j.at("geometry").get<std::string>();
  c.dim = j.at("dim").is_null() ? std::nullopt : std::optional(j.at("dim").get<std::size_t>());
  c.curvature_magnitude = j.at("curvature_magnitude").get<double>();
  c.time_steps = j.at("time_steps").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.geo_step = j.at("geo_step").get<double>();
  c.margin = j.at("margin").get<double>();
  c.negatives_per_edge = j.at("negatives_per_edge").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("dataset").is_null()) c.dataset = j.at("dataset").get<std::string>();
  if (!j.at("synthetic").is_null()) c.synthetic = j.at("synthetic").get<std::string>();
  c.dropout = j.at("dropout").get<double>();
  c.layers = j.at("layers").get<std::size_t>();
  c.spiking = j.at("spiking").get<bool>();
  c.tangent_transform = j.at("tangent_transform").get<bool>();
  c.embed_clip = j.at("embed_clip").get<double>();
  c.e_mac_pj = j.at("energy_constants_pj").at("mac").get<double>();
  c.e_ac_pj = j.at("energy_constants_pj").at("ac").get<double>();
  const auto& ns = j.at("node_split");
  c.node_split = {ns.at(0).get<double>(), ns.at(1).get<double>(), ns.at(2).get<double>()};
  const auto& es = j.at("edge_split");
  c.edge_split = {es.at(0).get<double>(), es.at(1).get<double>(), es.at(2).get<double>()};
  return c;
}

namespace detail {
inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
inline nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? number_or_null(*v) : nlohmann::json(nullptr);
}
}  // namespace detail

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"train_accuracy", detail::optional_number(m.train_accuracy)},
          {"val_accuracy", detail::optional_number(m.val_accuracy)},
          {"test_accuracy", detail::optional_number(m.test_accuracy)},
          {"val_auc", detail::optional_number(m.val_auc)},
          {"test_auc", detail::optional_number(m.test_auc)}};
}

inline nlohmann::json energy_json(const EnergyReport& e) {
  return {{"spikes", e.spikes}, {"acs", e.acs},           {"macs", e.macs},
          {"e_ac_pj", e.e_ac_pj}, {"e_mac_pj", e.e_mac_pj}, {"total_mj", e.total_mj}};
}

inline nlohmann::json trace_json(const std::vector<EpochRecord>& trace) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : trace)
    arr.push_back({{"epoch", r.epoch},
                   {"loss", detail::number_or_null(r.loss)},
                   {"val_metric", detail::number_or_null(r.val_metric)},
                   {"max_constraint_violation", detail::number_or_null(r.max_constraint_violation)}});
  return arr;
}

/// The results document. wall_clock_seconds is the only field that varies between identical runs.
inline nlohmann::json results_document(const RunConfig& cfg, const std::vector<EpochRecord>& trace, const Metrics& metrics,
                                       const EnergyReport& energy, double wall_clock_seconds,
                                       std::optional<std::size_t> best_epoch = {}, bool aborted = false) {
  nlohmann::json j;
  j["schema_version"] = kResultsSchemaVersion;
  j["config"] = config_json(cfg);
  j["seed"] = cfg.seed;
  j["trace"] = trace_json(trace);
  j["best_epoch"] = best_epoch ? nlohmann::json(*best_epoch) : nlohmann::json(nullptr);
  j["aborted"] = aborted;
  j["metrics"] = metrics_json(metrics);
  j["energy"] = energy_json(energy);
  j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline void emit_results(const nlohmann::json& doc, const std::filesystem::path& path) { write_json(doc, path); }

// ---------------------------------------------------------------------------
// Model files

inline nlohmann::json params_json(const ModelParams& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& x : p.list)
    arr.push_back({{"name", x.name}, {"rows", x.value.rows}, {"cols", x.value.cols}, {"data", x.value.data}});
  return arr;
}

inline void save_model(const TrainResult& r, const std::filesystem::path& path) {
  write_json({{"schema_version", kResultsSchemaVersion}, {"config", config_json(r.config)}, {"params", params_json(r.params)}},
             path);
}

struct LoadedModel {
  RunConfig config;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;
};

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model file " + path.string() + ": " + e.what());
  }
  LoadedModel m;
  m.config = config_from_json(j.at("config"));
  for (const auto& p : j.at("params"))
    m.tensors.emplace_back(p.at("name").get<std::string>(),
                           ad::Tensor(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>(),
                                      p.at("data").get<std::vector<double>>()));
  return m;
}

/// Installs stored tensors into freshly initialised parameters (shapes must agree).
inline ModelParams restore_params(ModelParams fresh, const LoadedModel& m) {
  if (fresh.list.size() != m.tensors.size()) throw ConfigError("model file does not match the configured architecture");
  for (std::size_t i = 0; i < fresh.list.size(); ++i) {
    if (fresh.list[i].name != m.tensors[i].first || !fresh.list[i].value.same_shape(m.tensors[i].second))
      throw ConfigError("model file parameter '" + m.tensors[i].first + "' does not match the architecture");
    fresh.list[i].value = m.tensors[i].second;
  }
  return fresh;
}

/// Train, evaluate, count inference operations and assemble the results document.
struct RunOutput {
  TrainResult train;
  Metrics metrics;
  EnergyReport energy;
  nlohmann::json document;
};

inline RunOutput run_experiment(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const PreparedData d = prepare_data(cfg);
  RunOutput out;
  out.train = run_train(cfg, d);
  out.metrics = evaluate(out.train.params, out.train.model, d, cfg.seed);
  out.energy = estimate_energy(count_inference_ops(out.train.params, out.train.model, d, cfg.seed), cfg.e_mac_pj, cfg.e_ac_pj);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.document = results_document(cfg, out.train.trace, out.metrics, out.energy, secs, out.train.best_epoch,
                                  out.train.aborted);
  return out;
}

}  // namespace gsg
