#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every op evaluates eagerly and appends a node holding its value and a backward
// closure. Node ids are assigned in creation order, so walking the tape backwards
// from the loss is a valid reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gsg/errors.hpp"

namespace gsg::ad {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("Tensor: value count does not match shape");
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(n, 1, std::move(v));
  }
  static Tensor row_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(1, n, std::move(v));
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows_in) {
    Tensor t;
    t.rows = rows_in.size();
    t.cols = t.rows ? rows_in.begin()->size() : 0;
    for (const auto& r : rows_in) {
      if (r.size() != t.cols) throw ShapeError("Tensor::from_rows: ragged rows");
      t.data.insert(t.data.end(), r.begin(), r.end());
    }
    return t;
  }

  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }
  bool same_shape(const Tensor& o) const noexcept { return rows == o.rows && cols == o.cols; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  double item() const {
    if (rows != 1 || cols != 1) throw ShapeError("Tensor::item: tensor is not a scalar");
    return data[0];
  }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("Tensor +=: shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class GradientStore {
 public:
  bool contains(Var v) const { return grads_.count(v.id()) != 0; }
  bool contains(std::size_t id) const { return grads_.count(id) != 0; }
  const Tensor& at(Var v) const { return at(v.id()); }
  const Tensor& at(std::size_t id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw Error("GradientStore: node " + std::to_string(id) + " has no gradient");
    return it->second;
  }
  /// Gradient of v, or zeros of v's shape when v does not influence the loss.
  Tensor get_or_zero(Var v) const {
    auto it = grads_.find(v.id());
    if (it != grads_.end()) return it->second;
    return Tensor(v.rows(), v.cols());
  }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Residuals recorded by straight-through ops so that a forward pass can be replayed with the
/// sampled noise frozen: output = input + residual, where residual = sampled - input at record time.
struct StraightThroughReplay {
  enum class Mode { record, replay };
  Mode mode = Mode::record;
  std::vector<Tensor> residuals;
  std::size_t cursor = 0;

  void start_record() {
    mode = Mode::record;
    residuals.clear();
    cursor = 0;
  }
  void start_replay() {
    mode = Mode::replay;
    cursor = 0;
  }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self, const Tensor& grad)>;

  Var leaf(Tensor value, std::string name = "leaf") { return push(std::move(value), std::move(name), nullptr); }
  Var constant(Tensor value) { return push(std::move(value), "constant", nullptr); }

  Var push(Tensor value, std::string op, Backward backward) {
    nodes_.push_back(Node{std::move(value), std::move(op), std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulator for node id; only valid inside a backward closure.
  Tensor& grad(std::size_t id) {
    Tensor& g = grads_[id];
    if (g.empty() && nodes_[id].value.size() != 0) g = Tensor(nodes_[id].value.rows, nodes_[id].value.cols);
    return g;
  }

  /// Kinked ops log which side of the kink each element fell on; the finite-difference
  /// harness skips coordinates whose perturbation changes this log.
  void record_branch(int side) { branches_.push_back(static_cast<std::int8_t>(side)); }
  const std::vector<std::int8_t>& branches() const noexcept { return branches_; }

  StraightThroughReplay* replay = nullptr;

  GradientStore backward(Var loss) {
    const Tensor& lv = value(loss.id());
    if (lv.rows != 1 || lv.cols != 1) throw ShapeError("backward: loss must be a scalar");
    grads_.assign(nodes_.size(), Tensor());
    grads_[loss.id()] = Tensor::scalar(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Tensor& g = grads_[i];
      if (g.empty()) continue;
      for (double v : g.data)
        if (!std::isfinite(v))
          throw NumericError("backward: non-finite gradient at node " + std::to_string(i) + " (" + nodes_[i].op + ")");
      if (nodes_[i].backward) nodes_[i].backward(*this, i, g);
    }
    GradientStore store;
    for (std::size_t i = 0; i < grads_.size(); ++i)
      if (!grads_[i].empty()) store.grads_.emplace(i, std::move(grads_[i]));
    grads_.clear();
    return store;
  }

 private:
  struct Node {
    Tensor value;
    std::string op;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::int8_t> branches_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Straight-through gradient rules

using GradientRule = std::function<Tensor(const Tensor& upstream)>;

/// Gradient rule for a non-differentiable spike op: the backward pass treats the op as the
/// identity on its probability or potential input.
inline GradientRule straight_through(std::string_view tag) {
  if (tag == "heaviside" || tag == "bernoulli_sample" || tag == "spike_rate")
    return [](const Tensor& upstream) { return upstream; };
  throw ConfigError("straight_through: no gradient rule registered for '" + std::string(tag) + "'");
}

/// Wraps a sampled/thresholded output computed from input as a straight-through node.
inline Var straight_through_node(Var input, Tensor sampled, std::string op, std::string_view rule_tag) {
  Tape& t = input.tape();
  GradientRule rule = straight_through(rule_tag);
  if (!input.value().same_shape(sampled)) throw ShapeError(op + ": output shape differs from input");
  if (t.replay) {
    auto& r = *t.replay;
    if (r.mode == StraightThroughReplay::Mode::record) {
      Tensor residual = sampled;
      for (std::size_t i = 0; i < residual.size(); ++i) residual.data[i] -= input.value().data[i];
      r.residuals.push_back(std::move(residual));
    } else {
      if (r.cursor >= r.residuals.size() || !r.residuals[r.cursor].same_shape(sampled))
        throw CheckInvalidError(op + ": replay does not match the recorded forward pass");
      const Tensor& residual = r.residuals[r.cursor++];
      for (std::size_t i = 0; i < sampled.size(); ++i) sampled.data[i] = input.value().data[i] + residual.data[i];
    }
  }
  const std::size_t in = input.id();
  return t.push(std::move(sampled), std::move(op), [in, rule](Tape& tape, std::size_t, const Tensor& g) {
    tape.grad(in) += rule(g);
  });
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {
inline void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     ")");
}

/// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class F, class D>
Var unary(Var x, std::string op, F f, D dfdx) {
  Tape& t = x.tape();
  Tensor out = x.value();
  for (double& v : out.data) v = f(v);
  const std::size_t in = x.id();
  return t.push(std::move(out), std::move(op), [in, dfdx](Tape& tape, std::size_t self, const Tensor& g) {
    const Tensor& xv = tape.value(in);
    const Tensor& yv = tape.value(self);
    Tensor& gx = tape.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * dfdx(xv.data[i], yv.data[i]);
  });
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), "add", [ia, ib](Tape& t, std::size_t, const Tensor& g) {
    t.grad(ia) += g;
    t.grad(ib) += g;
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), "sub", [ia, ib](Tape& t, std::size_t, const Tensor& g) {
    t.grad(ia) += g;
    Tensor& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), "mul", [ia, ib](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
    Tensor& gb = t.grad(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
  });
}

inline Var scale(Var x, double c) {
  return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var square(Var x) {
  return detail::unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var exp(Var x) {
  return detail::unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  for (double v : x.value().data)
    if (!(v > 0.0)) throw NumericError("log: argument must be positive");
  return detail::unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double softplus_value(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

inline Var sigmoid(Var x) {
  return detail::unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var x) {
  return detail::unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var softplus(Var x) {
  return detail::unary(x, "softplus", softplus_value, [](double v, double) { return sigmoid_value(v); });
}

/// max(x, 0). Kinked at 0.
inline Var relu(Var x) {
  for (double v : x.value().data) x.tape().record_branch(v > 0 ? 1 : (v < 0 ? -1 : 0));
  return detail::unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
                       [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

/// max(x, lo). Kinked at lo.
inline Var clamp_min(Var x, double lo) {
  for (double v : x.value().data) x.tape().record_branch(v > lo ? 1 : (v < lo ? -1 : 0));
  return detail::unary(x, "clamp_min", [lo](double v) { return v > lo ? v : lo; },
                       [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

/// Elementwise product with a constant mask (dropout, selection).
inline Var mul_const(Var x, Tensor mask) {
  if (!x.value().same_shape(mask)) throw ShapeError("mul_const: shape mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask.data[i];
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "mul_const", [in, mask = std::move(mask)](Tape& t, std::size_t, const Tensor& g) {
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * mask.data[i];
  });
}

/// Rescales every row whose Euclidean norm exceeds r to norm r. Kinked at norm r.
inline Var clip_row_norm(Var x, double r) {
  if (!(r > 0.0)) throw ConfigError("clip_row_norm: radius must be positive");
  const Tensor& xv = x.value();
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows; ++i) {
    double n2 = 0.0;
    for (double v : xv.row(i)) n2 += v * v;
    const double n = std::sqrt(n2);
    x.tape().record_branch(n > r ? 1 : (n < r ? -1 : 0));
    if (n > r)
      for (double& v : out.row(i)) v *= r / n;
  }
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "clip_row_norm", [in, r](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& X = t.value(in);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < X.rows; ++i) {
      const auto xr = X.row(i), gr = g.row(i);
      double n2 = 0.0, xg = 0.0;
      for (std::size_t c = 0; c < xr.size(); ++c) {
        n2 += xr[c] * xr[c];
        xg += xr[c] * gr[c];
      }
      const double n = std::sqrt(n2);
      auto out = gx.row(i);
      if (n <= r) {
        for (std::size_t c = 0; c < xr.size(); ++c) out[c] += gr[c];
        continue;
      }
      // y = r x / |x|:  dy^T g = (r / |x|) (g - x (x.g) / |x|^2)
      for (std::size_t c = 0; c < xr.size(); ++c) out[c] += (r / n) * (gr[c] - xr[c] * xg / n2);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and linear algebra

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  const std::size_t in = x.id();
  return x.tape().push(Tensor::scalar(s), "sum", [in](Tape& t, std::size_t, const Tensor& g) {
    Tensor& gx = t.grad(in);
    for (double& v : gx.data) v += g.data[0];
  });
}

inline Var mean(Var x) {
  if (x.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

/// n x m -> n x 1
inline Var row_sum(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows, 1);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (double v : xv.row(r)) out.data[r] += v;
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "row_sum", [in](Tape& t, std::size_t, const Tensor& g) {
    Tensor& gx = t.grad(in);
    for (std::size_t r = 0; r < gx.rows; ++r)
      for (double& v : gx.row(r)) v += g.data[r];
  });
}

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols != bv.rows) throw ShapeError("matmul: inner dimensions differ");
  Tensor out(av.rows, bv.cols);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t k = 0; k < av.cols; ++k) {
      const double aik = av(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < bv.cols; ++j) out(i, j) += aik * bv(k, j);
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), "matmul", [ia, ib](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    Tensor& gA = t.grad(ia);
    for (std::size_t i = 0; i < A.rows; ++i)
      for (std::size_t k = 0; k < A.cols; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < B.cols; ++j) acc += g(i, j) * B(k, j);
        gA(i, k) += acc;
      }
    Tensor& gB = t.grad(ib);
    for (std::size_t i = 0; i < A.rows; ++i)
      for (std::size_t k = 0; k < A.cols; ++k) {
        const double aik = A(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < B.cols; ++j) gB(k, j) += aik * g(i, j);
      }
  });
}

/// x (n x m) + b (1 x m) broadcast over rows.
inline Var add_row(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.rows != 1 || bv.cols != xv.cols) throw ShapeError("add_row: bias must be 1 x cols");
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += bv.data[c];
  const std::size_t ix = x.id(), ib = b.id();
  return x.tape().push(std::move(out), "add_row", [ix, ib](Tape& t, std::size_t, const Tensor& g) {
    t.grad(ix) += g;
    Tensor& gb = t.grad(ib);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) gb.data[c] += g(r, c);
  });
}

/// Row-wise dot product: n x m, n x m -> n x 1.
inline Var row_dot(Var a, Var b) {
  detail::require_same(a, b, "row_dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r)
    for (std::size_t c = 0; c < av.cols; ++c) out.data[r] += av(r, c) * bv(r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), "row_dot", [ia, ib](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    Tensor& gA = t.grad(ia);
    Tensor& gB = t.grad(ib);
    for (std::size_t r = 0; r < A.rows; ++r)
      for (std::size_t c = 0; c < A.cols; ++c) {
        gA(r, c) += g.data[r] * B(r, c);
        gB(r, c) += g.data[r] * A(r, c);
      }
  });
}

/// Scales row r of x (n x m) by w (n x 1).
inline Var scale_rows(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rows != xv.rows || wv.cols != 1) throw ShapeError("scale_rows: weights must be rows x 1");
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (double& v : out.row(r)) v *= wv.data[r];
  const std::size_t ix = x.id(), iw = w.id();
  return x.tape().push(std::move(out), "scale_rows", [ix, iw](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    Tensor& gx = t.grad(ix);
    Tensor& gw = t.grad(iw);
    for (std::size_t r = 0; r < X.rows; ++r)
      for (std::size_t c = 0; c < X.cols; ++c) {
        gx(r, c) += g(r, c) * W.data[r];
        gw.data[r] += g(r, c) * X(r, c);
      }
  });
}

// ---------------------------------------------------------------------------
// Indexing

inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin > end || end > xv.cols) throw ShapeError("slice_cols: range out of bounds");
  Tensor out(xv.rows, end - begin);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "slice_cols", [in, begin](Tape& t, std::size_t, const Tensor& g) {
    Tensor& gx = t.grad(in);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) gx(r, c + begin) += g(r, c);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, column offset)
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols; ++c) out(r, off + c) = pv(r, c);
    spans.emplace_back(p.id(), off);
    off += pv.cols;
  }
  return parts.front().tape().push(std::move(out), "concat_cols",
                                   [spans = std::move(spans)](Tape& t, std::size_t, const Tensor& g) {
                                     for (auto [id, o] : spans) {
                                       Tensor& gp = t.grad(id);
                                       for (std::size_t r = 0; r < gp.rows; ++r)
                                         for (std::size_t c = 0; c < gp.cols; ++c) gp(r, c) += g(r, o + c);
                                     }
                                   });
}

/// out[k] = x[index[k]]
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  Tensor out(index.size(), xv.cols);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= xv.rows) throw ShapeError("gather_rows: index out of range");
    for (std::size_t c = 0; c < xv.cols; ++c) out(k, c) = xv(index[k], c);
  }
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "gather_rows",
                       [in, index = std::move(index)](Tape& t, std::size_t, const Tensor& g) {
                         Tensor& gx = t.grad(in);
                         for (std::size_t k = 0; k < index.size(); ++k)
                           for (std::size_t c = 0; c < g.cols; ++c) gx(index[k], c) += g(k, c);
                       });
}

/// out[s] = sum of rows k with segment[k] == s.
inline Var segment_sum(Var x, std::vector<std::size_t> segment, std::size_t segments) {
  const Tensor& xv = x.value();
  if (segment.size() != xv.rows) throw ShapeError("segment_sum: one segment id per row required");
  Tensor out(segments, xv.cols);
  for (std::size_t k = 0; k < segment.size(); ++k) {
    if (segment[k] >= segments) throw ShapeError("segment_sum: segment id out of range");
    for (std::size_t c = 0; c < xv.cols; ++c) out(segment[k], c) += xv(k, c);
  }
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "segment_sum",
                       [in, segment = std::move(segment)](Tape& t, std::size_t, const Tensor& g) {
                         Tensor& gx = t.grad(in);
                         for (std::size_t k = 0; k < segment.size(); ++k)
                           for (std::size_t c = 0; c < g.cols; ++c) gx(k, c) += g(segment[k], c);
                       });
}

/// Softmax of a column of scores within each segment.
inline Var segment_softmax(Var scores, std::vector<std::size_t> segment, std::size_t segments) {
  const Tensor& sv = scores.value();
  if (sv.cols != 1 || segment.size() != sv.rows) throw ShapeError("segment_softmax: expects E x 1 scores");
  std::vector<double> mx(segments, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < segment.size(); ++k) {
    if (segment[k] >= segments) throw ShapeError("segment_softmax: segment id out of range");
    mx[segment[k]] = std::max(mx[segment[k]], sv.data[k]);
  }
  Tensor out(sv.rows, 1);
  std::vector<double> z(segments, 0.0);
  for (std::size_t k = 0; k < segment.size(); ++k) {
    out.data[k] = std::exp(sv.data[k] - mx[segment[k]]);
    z[segment[k]] += out.data[k];
  }
  for (std::size_t k = 0; k < segment.size(); ++k) out.data[k] /= z[segment[k]];
  const std::size_t in = scores.id();
  return scores.tape().push(
      std::move(out), "segment_softmax",
      [in, segments, segment = std::move(segment)](Tape& t, std::size_t self, const Tensor& g) {
        const Tensor& a = t.value(self);
        std::vector<double> dot(segments, 0.0);
        for (std::size_t k = 0; k < segment.size(); ++k) dot[segment[k]] += a.data[k] * g.data[k];
        Tensor& gs = t.grad(in);
        for (std::size_t k = 0; k < segment.size(); ++k) gs.data[k] += a.data[k] * (g.data[k] - dot[segment[k]]);
      });
}

inline Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    const auto row = xv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < xv.cols; ++c) z += out(r, c) = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < xv.cols; ++c) out(r, c) /= z;
  }
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "softmax_rows", [in](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(in);
    for (std::size_t r = 0; r < y.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols; ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < y.cols; ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

/// out[r] = x[r, column[r]] as an n x 1 column.
inline Var pick(Var x, std::vector<std::size_t> column) {
  const Tensor& xv = x.value();
  if (column.size() != xv.rows) throw ShapeError("pick: one column index per row required");
  Tensor out(xv.rows, 1);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    if (column[r] >= xv.cols) throw ShapeError("pick: column index out of range");
    out.data[r] = xv(r, column[r]);
  }
  const std::size_t in = x.id();
  return x.tape().push(std::move(out), "pick", [in, column = std::move(column)](Tape& t, std::size_t, const Tensor& g) {
    Tensor& gx = t.grad(in);
    for (std::size_t r = 0; r < column.size(); ++r) gx(r, column[r]) += g.data[r];
  });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct FiniteDiffReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  std::vector<std::size_t> skipped;  // coordinates whose stencil crosses a kink
  double max_rel_error = 0.0;
  bool passed = false;
};

using ScalarFunction = std::function<Var(Tape&, Var)>;

/// Compares the reverse-mode gradient of f at x against central differences.
/// Relative error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
/// Straight-through noise is recorded once at x and frozen for the perturbed evaluations.
inline FiniteDiffReport finite_diff_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-5,
                                          double tol = 1e-4) {
  FiniteDiffReport report;
  StraightThroughReplay replay;

  replay.start_record();
  Tape base;
  base.replay = &replay;
  Var xv = base.leaf(x, "input");
  Var loss = f(base, xv);
  const double v0 = loss.value().item();
  const GradientStore grads = base.backward(loss);
  const Tensor g = grads.get_or_zero(xv);

  {
    StraightThroughReplay again;
    again.start_record();
    Tape check;
    check.replay = &again;
    const double v1 = f(check, check.leaf(x, "input")).value().item();
    bool same = (v1 == v0 || (std::isnan(v0) && std::isnan(v1))) && again.residuals.size() == replay.residuals.size();
    for (std::size_t i = 0; same && i < again.residuals.size(); ++i)
      same = again.residuals[i].data == replay.residuals[i].data;
    if (!same) throw CheckInvalidError("finite_diff_check: function is not deterministic across evaluations");
  }

  auto eval = [&](const Tensor& at) {
    replay.start_replay();
    Tape t;
    t.replay = &replay;
    const double v = f(t, t.leaf(at, "input")).value().item();
    return std::pair{v, t.branches()};
  };

  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp.data[i] += eps;
    xm.data[i] -= eps;
    const auto [fp, bp] = eval(xp);
    const auto [fm, bm] = eval(xm);
    const double fd = (fp - fm) / (2.0 * eps);
    report.analytic.push_back(g.data[i]);
    report.numeric.push_back(fd);
    if (bp != bm) {
      report.skipped.push_back(i);
      report.rel_error.push_back(0.0);
      continue;
    }
    const double err = std::abs(g.data[i] - fd) / std::max({1.0, std::abs(g.data[i]), std::abs(fd)});
    report.rel_error.push_back(err);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace gsg::ad
