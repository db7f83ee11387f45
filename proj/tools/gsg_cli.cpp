// gsg: train and evaluate geometry-aware spiking GNNs from the command line.

#include <chrono>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gsg/harness.hpp"

namespace {

struct Flags {
  std::string task = "nc";
  std::string geometry = "h32";
  int dim = 32;  // <= 0 accepts any dimension sum
  double curvature = 1.0;
  std::size_t time_steps = 5;
  double lr = 0.003;
  double geo_step = 0.1;
  double margin = 0.1;
  std::size_t negatives = 1;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string synthetic;
  std::string out;
  std::string energy;
  double dropout = 0.0;
  std::size_t layers = 2;
  bool dense = false;
  bool tangent_transform = false;
  double embed_clip = 4.0;
  std::string save_model;
  std::string model;
};

void add_run_flags(CLI::App* app, Flags& f) {
  app->add_option("--task", f.task, "nc or lp")->check(CLI::IsMember({"nc", "lp"}));
  app->add_option("--geometry", f.geometry, "product geometry, e.g. h32 or s4xs8xh16");
  app->add_option("--dim", f.dim, "required sum of component dimensions (0 = any)");
  app->add_option("--curvature", f.curvature, "curvature magnitude of every component")->check(CLI::PositiveNumber);
  app->add_option("--time-steps", f.time_steps, "spike simulation steps T");
  app->add_option("--dataset", f.dataset, "directory with edges.txt, features.csv[, labels.txt]");
  app->add_option("--synthetic", f.synthetic, "tree:D,B | cycle:N | sbm:K,SIZE,PIN,POUT [,noise=S]");
  app->add_option("--seed", f.seed);
  app->add_option("--out", f.out, "results JSON path (stdout when omitted)");
  app->add_option("--energy-constants", f.energy, "mac_pj,ac_pj");
  app->add_option("--layers", f.layers);
  app->add_flag("--dense", f.dense, "disable spiking (rates are the probabilities)");
  app->add_flag("--tangent-transform", f.tangent_transform, "learned linear map before aggregation");
  app->add_option("--embed-clip", f.embed_clip, "norm bound on learned tangent vectors (0 disables)");
}

void parse_energy(const std::string& text, gsg::RunConfig& c) {
  std::istringstream in(text);
  char comma = 0;
  if (!(in >> c.e_mac_pj >> comma >> c.e_ac_pj) || comma != ',' || !in.eof())
    throw gsg::ConfigError("--energy-constants expects mac_pj,ac_pj");
}

gsg::RunConfig to_config(const Flags& f) {
  gsg::RunConfig c;
  c.task = gsg::parse_task(f.task);
  c.geometry = f.geometry;
  c.dim = f.dim > 0 ? std::optional<std::size_t>(static_cast<std::size_t>(f.dim)) : std::nullopt;
  c.curvature_magnitude = f.curvature;
  c.time_steps = f.time_steps;
  c.lr = f.lr;
  c.geo_step = f.geo_step;
  c.margin = f.margin;
  c.negatives_per_edge = f.negatives;
  c.epochs = f.epochs;
  c.seed = f.seed;
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.synthetic.empty()) c.synthetic = f.synthetic;
  c.dropout = f.dropout;
  c.layers = f.layers;
  c.spiking = !f.dense;
  c.tangent_transform = f.tangent_transform;
  c.embed_clip = f.embed_clip;
  if (!f.energy.empty()) parse_energy(f.energy, c);
  c.validate();
  return c;
}

void write_document(const nlohmann::json& doc, const std::string& path) {
  if (path.empty())
    std::cout << doc.dump(2) << '\n';
  else
    gsg::emit_results(doc, path);
}

int run_train_cmd(const Flags& f) {
  const auto cfg = to_config(f);
  auto out = gsg::run_experiment(cfg);
  if (!f.save_model.empty()) gsg::save_model(out.train, f.save_model);
  write_document(out.document, f.out);
  return out.train.aborted ? 3 : 0;
}

int run_eval_cmd(const Flags& f, const CLI::App& app) {
  const auto start = std::chrono::steady_clock::now();
  const auto stored = gsg::load_model(f.model);
  gsg::RunConfig cfg = stored.config;
  // data and inference options may be overridden; architecture comes from the model file
  if (app.count("--dataset")) {
    cfg.dataset = f.dataset;
    cfg.synthetic.reset();
  }
  if (app.count("--synthetic")) {
    cfg.synthetic = f.synthetic;
    cfg.dataset.reset();
  }
  if (app.count("--seed")) cfg.seed = f.seed;
  if (app.count("--time-steps")) cfg.time_steps = f.time_steps;
  if (app.count("--dense")) cfg.spiking = !f.dense;
  if (app.count("--energy-constants")) parse_energy(f.energy, cfg);
  cfg.epochs = 0;
  cfg.validate();
  const auto d = gsg::prepare_data(cfg);
  const auto mc = gsg::model_config(cfg, d.graph);
  const auto params = gsg::restore_params(gsg::init_params(mc, cfg.lr, cfg.seed), stored);
  const auto metrics = gsg::evaluate(params, mc, d, cfg.seed);
  const auto energy =
      gsg::estimate_energy(gsg::count_inference_ops(params, mc, d, cfg.seed), cfg.e_mac_pj, cfg.e_ac_pj);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_document(gsg::results_document(cfg, {}, metrics, energy, secs), f.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gsg: geometry-aware spiking graph neural networks"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "train a model and write a results document");
  add_run_flags(train, f);
  train->add_option("--lr", f.lr, "learning rate of Euclidean parameters");
  train->add_option("--geo-step", f.geo_step, "step size of manifold-valued parameters");
  train->add_option("--margin", f.margin, "link-prediction hinge margin");
  train->add_option("--negatives", f.negatives, "negatives per training edge");
  train->add_option("--epochs", f.epochs);
  train->add_option("--dropout", f.dropout);
  train->add_option("--save-model", f.save_model, "write the best parameters to this file");

  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_run_flags(eval, f);
  eval->add_option("--model", f.model, "model file written by train --save-model")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train_cmd(f);
    return run_eval_cmd(f, *eval);
  } catch (const gsg::ParseError& e) {
    std::cerr << "error: " << e.what();
    if (e.line()) std::cerr << " (line " << e.line() << ')';
    std::cerr << '\n';
    return 2;
  } catch (const gsg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
