#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "ugsr/dense_net.hpp"

namespace ugsr {

enum class OptimKind : std::uint32_t { sgd = 0, adam = 1 };

inline const char* to_string(OptimKind k) { return k == OptimKind::sgd ? "sgd" : "adam"; }

struct OptimSettings {
  OptimKind kind = OptimKind::sgd;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct OptimState {
  OptimSettings settings;
  std::uint64_t step = 0;
  // Adam moments, shaped like the parameters; empty until the first Adam step.
  std::vector<LayerGrad<Scalar>> m;
  std::vector<LayerGrad<Scalar>> v;

  OptimState() = default;
  explicit OptimState(OptimSettings s) : settings(s) {}
};

namespace detail {

template <typename Scalar>
void init_moments(std::vector<LayerGrad<Scalar>>& moments, const DenseNet<Scalar>& net) {
  moments.resize(net.depth());
  for (std::size_t i = 0; i < net.depth(); ++i) {
    moments[i].weight = Matrix<Scalar>::Zero(net.layers()[i].in_dim(), net.layers()[i].out_dim());
    moments[i].bias = RowVector<Scalar>::Zero(net.layers()[i].out_dim());
  }
}

}  // namespace detail

// One update of every parameter of `net` from net.grads().
template <typename Scalar>
void optim_step(OptimState<Scalar>& state, DenseNet<Scalar>& net) {
  auto& grads = net.grads();
  if (grads.size() != net.depth()) throw ConfigError("gradient count does not match network depth");
  for (std::size_t i = 0; i < net.depth(); ++i) {
    const auto& l = net.layers()[i];
    if (grads[i].weight.rows() != l.weight.rows() || grads[i].weight.cols() != l.weight.cols() ||
        grads[i].bias.size() != l.bias.size())
      throw ConfigError("gradient shape mismatch at layer " + std::to_string(i));
    if (!grads[i].weight.allFinite() || !grads[i].bias.allFinite())
      throw NumericError("non-finite gradient at layer " + std::to_string(i));
  }

  const auto lr = static_cast<Scalar>(state.settings.lr);
  ++state.step;
  if (state.settings.kind == OptimKind::sgd) {
    for (std::size_t i = 0; i < net.depth(); ++i) {
      net.layers()[i].weight -= lr * grads[i].weight;
      net.layers()[i].bias -= lr * grads[i].bias;
    }
    return;
  }

  if (state.m.size() != net.depth()) detail::init_moments(state.m, net);
  if (state.v.size() != net.depth()) detail::init_moments(state.v, net);
  const auto b1 = static_cast<Scalar>(state.settings.beta1);
  const auto b2 = static_cast<Scalar>(state.settings.beta2);
  const auto eps = static_cast<Scalar>(state.settings.epsilon);
  const auto t = static_cast<double>(state.step);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(state.settings.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(state.settings.beta2, t));

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < net.depth(); ++i) {
    update(net.layers()[i].weight, state.m[i].weight, state.v[i].weight, grads[i].weight);
    update(net.layers()[i].bias, state.m[i].bias, state.v[i].bias, grads[i].bias);
  }
}

}  // namespace ugsr
