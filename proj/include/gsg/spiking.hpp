#pragma once

// Bernoulli spike encoding and integrate-and-fire dynamics.
//
// Randomness is counter-based: the uniform draw for (seed, layer, step, neuron) is a pure
// hash, so any partitioning of neurons across threads reproduces the same trains.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gsg/autodiff.hpp"
#include "gsg/errors.hpp"

namespace gsg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Identifies one independent spike stream: a run seed and a layer (or layer/component) key.
struct SpikeStream {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
};

/// Uniform [0, 1) draw for one (stream, time step, neuron).
inline double spike_uniform(const SpikeStream& stream, std::uint64_t step, std::uint64_t neuron) {
  std::uint64_t h = splitmix64(stream.seed);
  h = splitmix64(h ^ stream.layer);
  h = splitmix64(h ^ step);
  h = splitmix64(h ^ neuron);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

class SpikeTrain {
 public:
  SpikeTrain(std::size_t neurons, std::size_t steps) : neurons_(neurons), steps_(steps), bits_(neurons * steps, 0) {
    if (steps == 0) throw DomainError("SpikeTrain: T must be positive");
  }

  std::size_t neurons() const noexcept { return neurons_; }
  std::size_t steps() const noexcept { return steps_; }
  std::uint8_t operator()(std::size_t neuron, std::size_t step) const { return bits_[neuron * steps_ + step]; }
  std::uint8_t& operator()(std::size_t neuron, std::size_t step) { return bits_[neuron * steps_ + step]; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto b : bits_) c += b;
    return c;
  }

  friend bool operator==(const SpikeTrain&, const SpikeTrain&) = default;

 private:
  std::size_t neurons_;
  std::size_t steps_;
  std::vector<std::uint8_t> bits_;
};

struct IFNeuronState {
  std::vector<double> u;  // membrane potential per neuron; empty means all zero
  double v_th = 1.0;
  double lambda = 1.0;
  double bias = 0.0;

  void validate() const {
    if (!(v_th > 0.0)) throw ConfigError("IF neuron: threshold must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("IF neuron: decay must lie in [0, 1]");
  }
};

inline double spike_probability(double x) { return ad::sigmoid_value(x); }

inline std::vector<double> spike_probability(std::span<const double> x) {
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) p[i] = spike_probability(x[i]);
  return p;
}

namespace detail {
inline void check_probabilities(std::span<const double> p) {
  for (double v : p) {
    if (std::isnan(v)) throw NumericError("spike sampling: probability is NaN");
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("spike sampling: probability outside [0, 1]");
  }
}
}  // namespace detail

/// Independent Bernoulli(p[i]) for every neuron i and step t < T.
inline SpikeTrain sample_spike_train(std::span<const double> p, std::size_t T, const SpikeStream& stream) {
  detail::check_probabilities(p);
  SpikeTrain train(p.size(), T);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t t = 0; t < T; ++t) train(i, t) = spike_uniform(stream, t, i) < p[i] ? 1 : 0;
  return train;
}

struct IFStepResult {
  IFNeuronState state;
  std::vector<std::uint8_t> spike;
};

/// One step of u' = lambda (u - V_th s_prev) + input + b, s' = [u' >= V_th].
inline IFStepResult if_step(IFNeuronState state, std::span<const double> input, std::span<const std::uint8_t> prev_spike) {
  state.validate();
  if (state.u.empty()) state.u.assign(input.size(), 0.0);
  if (state.u.size() != input.size() || prev_spike.size() != input.size())
    throw ShapeError("if_step: state, input and spike sizes differ");
  IFStepResult out{std::move(state), std::vector<std::uint8_t>(input.size())};
  auto& s = out.state;
  for (std::size_t i = 0; i < input.size(); ++i) {
    s.u[i] = s.lambda * (s.u[i] - s.v_th * prev_spike[i]) + input[i] + s.bias;
    out.spike[i] = s.u[i] >= s.v_th ? 1 : 0;
  }
  return out;
}

/// Runs if_step over all T columns of a per-step input matrix (neurons x T, row-major) and
/// returns the firing rate (spike count / T) of each neuron.
inline std::vector<double> if_integrate(std::span<const double> input, std::size_t neurons, std::size_t T,
                                        IFNeuronState state) {
  if (T == 0) throw DomainError("if_integrate: T must be positive");
  if (input.size() != neurons * T) throw ShapeError("if_integrate: input must be neurons x T");
  state.validate();
  if (state.u.empty()) state.u.assign(neurons, 0.0);
  if (state.u.size() != neurons) throw ShapeError("if_integrate: state size differs from neuron count");
  std::vector<double> rate(neurons, 0.0);
  for (std::size_t i = 0; i < neurons; ++i) {
    double u = state.u[i];
    bool fired = false;
    std::size_t count = 0;
    for (std::size_t t = 0; t < T; ++t) {
      u = state.lambda * (u - (fired ? state.v_th : 0.0)) + input[i * T + t] + state.bias;
      fired = u >= state.v_th;
      count += fired;
    }
    rate[i] = static_cast<double>(count) / static_cast<double>(T);
  }
  return rate;
}

inline std::vector<double> if_integrate(const SpikeTrain& train, IFNeuronState state) {
  std::vector<double> input(train.bits().begin(), train.bits().end());
  return if_integrate(input, train.neurons(), train.steps(), std::move(state));
}

namespace ad {

/// Heaviside spike [u >= V_th] with a straight-through gradient to u.
inline Var heaviside(Var u, double v_th) {
  Tensor s = u.value();
  for (double& v : s.data) v = v >= v_th ? 1.0 : 0.0;
  return straight_through_node(u, std::move(s), "heaviside", "heaviside");
}

/// One Bernoulli draw per element at time step `step`, straight-through gradient to p.
inline Var bernoulli_sample(Var p, const SpikeStream& stream, std::uint64_t step = 0) {
  gsg::detail::check_probabilities(p.value().data);
  Tensor s = p.value();
  for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = spike_uniform(stream, step, i) < s.data[i] ? 1.0 : 0.0;
  return straight_through_node(p, std::move(s), "bernoulli_sample", "bernoulli_sample");
}

/// Samples a T-step Bernoulli train from probabilities p, feeds it through IF neurons and returns
/// the firing rates, with a straight-through gradient from rate to p. When spikes_per_row is
/// given, the number of emitted output spikes of each row is added to it.
inline Var spike_rate(Var p, std::size_t T, const IFNeuronState& neuron, const SpikeStream& stream,
                      std::vector<std::uint64_t>* spikes_per_row = nullptr) {
  const Tensor& pv = p.value();
  gsg::detail::check_probabilities(pv.data);
  if (T == 0) throw DomainError("spike_rate: T must be positive");
  const SpikeTrain train = sample_spike_train(pv.data, T, stream);
  const std::vector<double> rate = if_integrate(train, neuron);
  Tensor out(pv.rows, pv.cols, rate);
  if (spikes_per_row) {
    if (spikes_per_row->size() != pv.rows) spikes_per_row->assign(pv.rows, 0);
    for (std::size_t r = 0; r < pv.rows; ++r)
      for (std::size_t c = 0; c < pv.cols; ++c)
        (*spikes_per_row)[r] += static_cast<std::uint64_t>(std::llround(rate[r * pv.cols + c] * static_cast<double>(T)));
  }
  return straight_through_node(p, std::move(out), "spike_rate", "spike_rate");
}

}  // namespace ad
}  // namespace gsg
