// Parameterised building blocks shared by both branches.
#pragma once

#include <cmath>
#include <random>
#include <string>

#include "bit/autodiff.hpp"
#include "bit/ops.hpp"

namespace bit {

using Rng = std::mt19937_64;

// Training enables dropout; rng must then be non-null.
struct RunMode {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename S>
Matrix<S> uniform_init(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <typename S>
Matrix<S> normal_init(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

// Absolute sinusoidal encoding: even columns sin(pos / 10000^(2i/H)),
// odd columns the matching cos.
template <typename S>
Matrix<S> sinusoidal_encoding(Index length, Index width) {
  Matrix<S> pe(length, width);
  for (Index p = 0; p < length; ++p) {
    for (Index c = 0; c < width; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(width));
      const double angle = static_cast<double>(p) * freq;
      pe(p, c) = static_cast<S>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename S>
ad::Var<S> dropout(ad::Var<S> x, double rate, const RunMode& mode) {
  if (!mode.training || rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  Matrix<S> m(x.rows(), x.cols());
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*mode.rng) ? scale : S(0);
  return ad::mask(x, std::move(m));
}

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(ad::ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = &store.add(name + ".weight", uniform_init<S>(in, out, bound, rng));
    bias_ = &store.add(name + ".bias", uniform_init<S>(1, out, bound, rng));
  }

  ad::Var<S> operator()(ad::Tape<S>& t, ad::Var<S> x) const {
    return ad::linear(x, t.parameter(*weight_), t.parameter(*bias_));
  }

  static std::size_t count(Index in, Index out) { return static_cast<std::size_t>(in * out + out); }

 private:
  ad::Parameter<S>* weight_ = nullptr;
  ad::Parameter<S>* bias_ = nullptr;
};

template <typename S>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ad::ParameterStore<S>& store, const std::string& name, Index width) {
    gain_ = &store.add(name + ".gain", Matrix<S>::Ones(1, width));
    bias_ = &store.add(name + ".bias", Matrix<S>::Zero(1, width));
  }

  ad::Var<S> operator()(ad::Tape<S>& t, ad::Var<S> x) const {
    return ad::layer_norm(x, t.parameter(*gain_), t.parameter(*bias_));
  }

  static std::size_t count(Index width) { return static_cast<std::size_t>(2 * width); }

 private:
  ad::Parameter<S>* gain_ = nullptr;
  ad::Parameter<S>* bias_ = nullptr;
};

}  // namespace bit
