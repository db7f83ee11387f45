#pragma once

// Undirected simple graphs with node features, optional labels and split masks;
// plain-text dataset files; synthetic structural testbeds.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gsg/autodiff.hpp"
#include "gsg/errors.hpp"
#include "gsg/random.hpp"

namespace gsg {

using Edge = std::pair<std::size_t, std::size_t>;
using Mask = std::vector<std::uint8_t>;

class Graph {
 public:
  Graph() = default;

  /// Symmetrises, drops self-loops and duplicates, validates endpoints.
  Graph(std::size_t n, std::vector<Edge> edges, ad::Tensor features, std::optional<std::vector<int>> labels = {})
      : n_(n), features_(std::move(features)), labels_(std::move(labels)) {
    if (features_.rows != n_) throw ShapeError("Graph: feature rows must equal the node count");
    if (labels_ && labels_->size() != n_) throw ShapeError("Graph: one label per node required");
    if (labels_)
      for (int y : *labels_)
        if (y < 0) throw ShapeError("Graph: labels must be non-negative class ids");
    for (auto& [u, v] : edges) {
      if (u >= n_ || v >= n_) throw ShapeError("Graph: edge endpoint out of range");
      if (u > v) std::swap(u, v);
    }
    std::erase_if(edges, [](const Edge& e) { return e.first == e.second; });
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    edges_ = std::move(edges);
    adjacency_.assign(n_, {});
    for (auto [u, v] : edges_) {
      adjacency_[u].push_back(v);
      adjacency_[v].push_back(u);
    }
    for (auto& a : adjacency_) std::sort(a.begin(), a.end());
  }

  std::size_t num_nodes() const noexcept { return n_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const ad::Tensor& features() const noexcept { return features_; }
  std::size_t feature_dim() const noexcept { return features_.cols; }
  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<int>& labels() const {
    if (!labels_) throw ConfigError("Graph: no labels");
    return *labels_;
  }
  std::size_t num_classes() const {
    if (!labels_ || labels_->empty()) return 0;
    return static_cast<std::size_t>(*std::max_element(labels_->begin(), labels_->end())) + 1;
  }

  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adjacency_.at(i); }
  std::size_t degree(std::size_t i) const { return adjacency_.at(i).size(); }
  bool has_edge(std::size_t u, std::size_t v) const {
    const auto& a = adjacency_.at(u);
    return std::binary_search(a.begin(), a.end(), v);
  }

  const Mask& train_mask() const noexcept { return train_; }
  const Mask& val_mask() const noexcept { return val_; }
  const Mask& test_mask() const noexcept { return test_; }
  bool has_masks() const noexcept { return !train_.empty(); }

  void set_masks(Mask train, Mask val, Mask test) {
    if (train.size() != n_ || val.size() != n_ || test.size() != n_) throw ShapeError("Graph: mask sizes must equal n");
    for (std::size_t i = 0; i < n_; ++i)
      if (train[i] + val[i] + test[i] > 1) throw ShapeError("Graph: masks overlap at node " + std::to_string(i));
    train_ = std::move(train);
    val_ = std::move(val);
    test_ = std::move(test);
  }

  /// Same nodes, features, labels and masks over a different edge set.
  Graph with_edges(std::vector<Edge> edges) const {
    Graph g(n_, std::move(edges), features_, labels_);
    g.train_ = train_;
    g.val_ = val_;
    g.test_ = test_;
    return g;
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_ && a.features_.same_shape(b.features_) &&
           a.features_.data == b.features_.data && a.labels_ == b.labels_ && a.train_ == b.train_ &&
           a.val_ == b.val_ && a.test_ == b.test_;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  ad::Tensor features_;
  std::optional<std::vector<int>> labels_;
  std::vector<std::vector<std::size_t>> adjacency_;
  Mask train_, val_, test_;
};

inline std::vector<std::size_t> mask_indices(const Mask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && !s.empty();
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

/// Feature CSV: row i holds the features of node i.
inline ad::Tensor read_features_csv(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<double> data;
  std::size_t cols = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::size_t count = 0, pos = 0;
    while (true) {
      const auto comma = t.find(',', pos);
      const auto field = t.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      double v;
      if (!detail::parse_number(field, v))
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad feature value '" + std::string(field) + "'",
                         std::string(field), lineno);
      data.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": ragged feature row (" + std::to_string(count) +
                           " values, expected " + std::to_string(cols) + ")",
                       std::string(t), lineno);
    ++rows;
  }
  return ad::Tensor(rows, cols, std::move(data));
}

/// Edge list: one "u v" pair per line, '#' starts a comment. Endpoints are checked against n.
inline std::vector<Edge> read_edge_list(const std::filesystem::path& path, std::size_t n) {
  auto in = detail::open_input(path);
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(std::string_view(line).substr(0, line.find('#')));
    if (t.empty()) continue;
    std::istringstream ss{std::string(t)};
    std::string a, b, extra;
    ss >> a >> b;
    std::size_t u, v;
    if (b.empty() || (ss >> extra) || !detail::parse_number(a, u) || !detail::parse_number(b, v))
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 'u v'", std::string(t), lineno);
    if (u >= n || v >= n)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": node index out of range (n = " +
                           std::to_string(n) + ")",
                       std::string(t), lineno);
    edges.emplace_back(u, v);
  }
  return edges;
}

inline std::vector<int> read_labels(const std::filesystem::path& path, std::size_t n) {
  auto in = detail::open_input(path);
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    int y;
    if (!detail::parse_number(t, y) || y < 0)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad label", std::string(t), lineno);
    labels.push_back(y);
  }
  if (labels.size() != n)
    throw ParseError(path.string() + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " nodes",
                     "", lineno);
  return labels;
}

inline Graph load_dataset(const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                          const std::optional<std::filesystem::path>& label_path = {}) {
  ad::Tensor features = read_features_csv(feature_path);
  const std::size_t n = features.rows;
  auto edges = read_edge_list(edge_path, n);
  std::optional<std::vector<int>> labels;
  if (label_path) labels = read_labels(*label_path, n);
  return Graph(n, std::move(edges), std::move(features), std::move(labels));
}

/// Directory layout: edges.txt, features.csv and optionally labels.txt.
inline Graph load_dataset_dir(const std::filesystem::path& dir) {
  const auto labels = dir / "labels.txt";
  return load_dataset(dir / "edges.txt", dir / "features.csv",
                      std::filesystem::exists(labels) ? std::optional(labels) : std::nullopt);
}

inline void save_dataset(const Graph& g, const std::filesystem::path& edge_path, const std::filesystem::path& feature_path,
                         const std::optional<std::filesystem::path>& label_path = {}) {
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
  };
  {
    auto out = open(edge_path);
    for (auto [u, v] : g.edges()) out << u << ' ' << v << '\n';
  }
  {
    auto out = open(feature_path);
    const auto& f = g.features();
    for (std::size_t r = 0; r < f.rows; ++r) {
      for (std::size_t c = 0; c < f.cols; ++c) {
        if (c) out << ',';
        out << detail::format_double(f(r, c));
      }
      out << '\n';
    }
  }
  if (label_path && g.has_labels()) {
    auto out = open(*label_path);
    for (int y : g.labels()) out << y << '\n';
  }
}

inline void save_dataset_dir(const Graph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(g, dir / "edges.txt", dir / "features.csv", dir / "labels.txt");
}

// ---------------------------------------------------------------------------
// Splits

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Node split, stratified by label when labels exist. Nodes left over when the fractions sum
/// to less than one stay outside every mask.
inline Graph split(const Graph& g, SplitFractions f, std::uint64_t seed) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0))
    throw ConfigError("split: train, val and test fractions must all be positive");
  if (f.train + f.val + f.test > 1.0 + 1e-12) throw ConfigError("split: fractions sum to more than one");
  Rng rng(derive_seed(seed, 0x5b117));
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<std::size_t>> groups;
  bool stratified = g.has_labels();
  if (stratified) {
    groups.assign(g.num_classes(), {});
    for (std::size_t i = 0; i < n; ++i) groups[static_cast<std::size_t>(g.labels()[i])].push_back(i);
    for (const auto& grp : groups)
      if (!grp.empty() && grp.size() < 3) {
        warn("split: a class has fewer nodes than splits, falling back to a uniform split");
        stratified = false;
        break;
      }
  }
  if (!stratified) {
    groups.assign(1, {});
    for (std::size_t i = 0; i < n; ++i) groups[0].push_back(i);
  }
  Mask train(n, 0), val(n, 0), test(n, 0);
  for (auto& grp : groups) {
    rng.shuffle(grp);
    const std::size_t m = grp.size();
    const auto count = [m](double frac) { return static_cast<std::size_t>(std::llround(frac * static_cast<double>(m))); };
    const std::size_t n_train = std::min(m, count(f.train));
    const std::size_t n_val = std::min(m - n_train, count(f.val));
    const std::size_t n_test = std::min(m - n_train - n_val, count(f.test));
    for (std::size_t k = 0; k < n_train; ++k) train[grp[k]] = 1;
    for (std::size_t k = n_train; k < n_train + n_val; ++k) val[grp[k]] = 1;
    for (std::size_t k = n_train + n_val; k < n_train + n_val + n_test; ++k) test[grp[k]] = 1;
  }
  Graph out = g;
  out.set_masks(std::move(train), std::move(val), std::move(test));
  return out;
}

/// Held-out edges and an equal number of sampled non-edges for link prediction.
struct EdgeSplit {
  std::vector<Edge> train;
  std::vector<Edge> val_pos, val_neg;
  std::vector<Edge> test_pos, test_neg;
};

inline std::vector<Edge> sample_non_edges(const Graph& g, std::size_t count, Rng& rng,
                                          const std::vector<Edge>& exclude = {}) {
  const std::size_t n = g.num_nodes();
  const std::size_t max_pairs = n * (n - 1) / 2;
  if (count + g.num_edges() + exclude.size() > max_pairs) throw ConfigError("sample_non_edges: graph too dense");
  std::vector<Edge> taken = exclude;
  std::sort(taken.begin(), taken.end());
  std::vector<Edge> out;
  while (out.size() < count) {
    std::size_t u = rng.below(n), v = rng.below(n);
    if (u == v || g.has_edge(u, v)) continue;
    if (u > v) std::swap(u, v);
    const Edge e{u, v};
    if (std::binary_search(taken.begin(), taken.end(), e)) continue;
    taken.insert(std::upper_bound(taken.begin(), taken.end(), e), e);
    out.push_back(e);
  }
  return out;
}

inline EdgeSplit split_edges(const Graph& g, SplitFractions f, std::uint64_t seed) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0)) throw ConfigError("split_edges: fractions must all be positive");
  Rng rng(derive_seed(seed, 0xed9e));
  std::vector<Edge> edges = g.edges();
  rng.shuffle(edges);
  const auto m = static_cast<double>(edges.size());
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * m));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * m));
  if (n_val + n_test >= edges.size()) throw ConfigError("split_edges: too few edges to hold out");
  EdgeSplit s;
  s.val_pos.assign(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.test_pos.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_val),
                    edges.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  s.train.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), edges.end());
  for (auto* v : {&s.val_pos, &s.test_pos, &s.train}) std::sort(v->begin(), v->end());
  s.val_neg = sample_non_edges(g, n_val, rng);
  s.test_neg = sample_non_edges(g, n_test, rng, s.val_neg);
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic generators

enum class SyntheticKind { tree, cycle, sbm };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::tree;
  std::size_t depth = 6, branching = 2;             // tree
  std::size_t cycle_nodes = 8;                      // cycle
  std::size_t blocks = 2, block_size = 50;          // sbm
  double p_in = 0.1, p_out = 0.01;                  // sbm
  double feature_noise = 0.5;                       // std of the Gaussian noise on indicator features
};

/// "tree:depth,branching", "cycle:n" or "sbm:blocks,size,p_in,p_out", each optionally followed by
/// ",noise=<std>".
inline SyntheticSpec parse_synthetic_spec(std::string_view text) {
  const auto colon = text.find(':');
  const std::string kind(text.substr(0, colon));
  std::vector<std::string> args;
  SyntheticSpec s;
  if (colon != std::string_view::npos) {
    std::string rest(text.substr(colon + 1));
    std::stringstream ss(rest);
    std::string a;
    while (std::getline(ss, a, ',')) {
      if (a.rfind("noise=", 0) == 0) {
        if (!detail::parse_number(std::string_view(a).substr(6), s.feature_noise) || s.feature_noise < 0)
          throw ConfigError("synthetic spec: bad noise '" + a + "'");
      } else {
        args.push_back(a);
      }
    }
  }
  auto size_arg = [&](std::size_t i) {
    std::size_t v;
    if (i >= args.size() || !detail::parse_number(args[i], v)) throw ConfigError("synthetic spec: bad argument list in '" + std::string(text) + "'");
    return v;
  };
  auto real_arg = [&](std::size_t i) {
    double v;
    if (i >= args.size() || !detail::parse_number(args[i], v)) throw ConfigError("synthetic spec: bad argument list in '" + std::string(text) + "'");
    return v;
  };
  if (kind == "tree") {
    s.kind = SyntheticKind::tree;
    if (args.size() != 2) throw ConfigError("synthetic spec: tree takes depth,branching");
    s.depth = size_arg(0);
    s.branching = size_arg(1);
  } else if (kind == "cycle") {
    s.kind = SyntheticKind::cycle;
    if (args.size() != 1) throw ConfigError("synthetic spec: cycle takes n");
    s.cycle_nodes = size_arg(0);
  } else if (kind == "sbm") {
    s.kind = SyntheticKind::sbm;
    if (args.size() != 4) throw ConfigError("synthetic spec: sbm takes blocks,size,p_in,p_out");
    s.blocks = size_arg(0);
    s.block_size = size_arg(1);
    s.p_in = real_arg(2);
    s.p_out = real_arg(3);
  } else {
    throw ConfigError("synthetic spec: unknown kind '" + kind + "'");
  }
  return s;
}

namespace detail {
inline ad::Tensor noisy_one_hot(const std::vector<int>& labels, std::size_t classes, double noise, Rng& rng) {
  ad::Tensor f(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t c = 0; c < classes; ++c)
      f(i, c) = (static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0) + noise * rng.normal();
  return f;
}
}  // namespace detail

inline Graph generate_synthetic(const SyntheticSpec& s, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5e7));
  std::vector<Edge> edges;
  std::vector<int> labels;
  std::size_t classes = 0;
  switch (s.kind) {
    case SyntheticKind::tree: {
      if (s.branching < 1 || s.depth < 1 || s.depth > 20) throw ConfigError("tree: need depth in [1, 20] and branching >= 1");
      std::size_t level_size = 1, n = 0;
      for (std::size_t lvl = 0; lvl <= s.depth; ++lvl) {
        for (std::size_t k = 0; k < level_size; ++k) labels.push_back(static_cast<int>(lvl));
        n += level_size;
        level_size *= s.branching;
        if (n > 5'000'000) throw ConfigError("tree: too many nodes");
      }
      for (std::size_t child = 1; child < n; ++child) edges.emplace_back((child - 1) / s.branching, child);
      classes = s.depth + 1;
      break;
    }
    case SyntheticKind::cycle: {
      if (s.cycle_nodes < 3) throw ConfigError("cycle: need at least 3 nodes");
      for (std::size_t i = 0; i < s.cycle_nodes; ++i) {
        edges.emplace_back(i, (i + 1) % s.cycle_nodes);
        labels.push_back(static_cast<int>(i % 2));
      }
      classes = 2;
      break;
    }
    case SyntheticKind::sbm: {
      if (s.blocks < 1 || s.block_size < 1) throw ConfigError("sbm: need at least one non-empty block");
      if (!(s.p_in >= 0 && s.p_in <= 1 && s.p_out >= 0 && s.p_out <= 1)) throw ConfigError("sbm: probabilities must lie in [0, 1]");
      const std::size_t n = s.blocks * s.block_size;
      for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i / s.block_size));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (rng.uniform() < (labels[i] == labels[j] ? s.p_in : s.p_out)) edges.emplace_back(i, j);
      classes = s.blocks;
      break;
    }
  }
  ad::Tensor features = detail::noisy_one_hot(labels, classes, s.feature_noise, rng);
  const std::size_t n = labels.size();
  return Graph(n, std::move(edges), std::move(features), std::move(labels));
}

}  // namespace gsg
