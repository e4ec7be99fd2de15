#pragma once

// Dense (fully connected) network substrate with explicit forward/backward.
//
// Batches are row-major in the data sense: one sample per row. Each layer
// computes  Y = act(X * W + b)  with W of shape (in x out) and b a row vector.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ugsr/errors.hpp"

namespace ugsr {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

enum class Activation : std::uint32_t { none = 0, relu = 1, softmax = 2, sigmoid = 3 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // in x out
  RowVector<Scalar> bias;
  Activation activation = Activation::none;

  Index in_dim() const { return weight.rows(); }
  Index out_dim() const { return weight.cols(); }
};

template <typename Scalar>
struct LayerGrad {
  Matrix<Scalar> weight;
  RowVector<Scalar> bias;
};

template <typename Scalar>
class DenseNet {
 public:
  using scalar_type = Scalar;

  DenseNet() = default;

  explicit DenseNet(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.bias.size() != l.out_dim())
        throw ConfigError("layer " + std::to_string(i) + ": bias length does not match out-dim");
      if (i > 0 && layers_[i - 1].out_dim() != l.in_dim())
        throw ConfigError("layer " + std::to_string(i) + ": in-dim " + std::to_string(l.in_dim()) +
                          " does not chain with previous out-dim " +
                          std::to_string(layers_[i - 1].out_dim()));
    }
    zero_grad();
  }

  // He-normal init for relu layers, Glorot-normal otherwise; zero biases.
  static DenseNet random(std::span<const Index> dims, std::span<const Activation> acts,
                         std::mt19937_64& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
      throw ConfigError("DenseNet::random needs n+1 dims for n activations");
    std::vector<DenseLayer<Scalar>> layers;
    layers.reserve(acts.size());
    for (std::size_t i = 0; i < acts.size(); ++i) {
      const Index in = dims[i];
      const Index out = dims[i + 1];
      if (in <= 0 || out <= 0) throw ConfigError("layer dimensions must be positive");
      const double stddev = acts[i] == Activation::relu ? std::sqrt(2.0 / double(in))
                                                        : std::sqrt(2.0 / double(in + out));
      std::normal_distribution<double> normal(0.0, stddev);
      DenseLayer<Scalar> layer;
      layer.weight.resize(in, out);
      for (Index c = 0; c < out; ++c)
        for (Index r = 0; r < in; ++r) layer.weight(r, c) = static_cast<Scalar>(normal(rng));
      layer.bias = RowVector<Scalar>::Zero(out);
      layer.activation = acts[i];
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
  }

  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Index in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  Index out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
  const std::vector<LayerGrad<Scalar>>& grads() const { return grads_; }
  std::vector<LayerGrad<Scalar>>& grads() { return grads_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += std::size_t(l.weight.size() + l.bias.size());
    return n;
  }

  void zero_grad() {
    grads_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      grads_[i].weight = Matrix<Scalar>::Zero(layers_[i].in_dim(), layers_[i].out_dim());
      grads_[i].bias = RowVector<Scalar>::Zero(layers_[i].out_dim());
    }
  }

  template <typename Other>
  DenseNet<Other> cast() const {
    std::vector<DenseLayer<Other>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_)
      out.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>(), l.activation});
    return DenseNet<Other>(std::move(out));
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }

 private:
  std::vector<DenseLayer<Scalar>> layers_;
  std::vector<LayerGrad<Scalar>> grads_;
};

// Cached activations of one forward pass: activations[0] is the input,
// activations[i + 1] the post-activation output of layer i.
template <typename Scalar>
struct ForwardPass {
  std::vector<Matrix<Scalar>> activations;

  bool empty() const { return activations.empty(); }
  const Matrix<Scalar>& output() const {
    if (activations.empty()) throw StateError("forward pass is empty");
    return activations.back();
  }
};

// Extra gradient injected at an intermediate activation during backward,
// e.g. a contrastive loss on a hidden feature layer.
template <typename Scalar>
struct ActivationGrad {
  std::size_t index;  // into ForwardPass::activations, 1..depth
  Matrix<Scalar> grad;
};

namespace detail {

template <typename Scalar>
void apply_activation(Matrix<Scalar>& z, Activation act) {
  switch (act) {
    case Activation::none: break;
    case Activation::relu: z = z.cwiseMax(Scalar(0)); break;
    case Activation::sigmoid:
      z = z.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
      break;
    case Activation::softmax:
      for (Index r = 0; r < z.rows(); ++r) {
        const Scalar m = z.row(r).maxCoeff();
        z.row(r) = (z.row(r).array() - m).exp().matrix();
        z.row(r) /= z.row(r).sum();
      }
      break;
  }
}

// dL/dz given dL/dy and y = act(z).
template <typename Scalar>
Matrix<Scalar> activation_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& grad_y,
                                   Activation act) {
  switch (act) {
    case Activation::none: return grad_y;
    case Activation::relu:
      return (y.array() > Scalar(0)).select(grad_y, Matrix<Scalar>::Zero(y.rows(), y.cols()));
    case Activation::sigmoid:
      return (grad_y.array() * y.array() * (Scalar(1) - y.array())).matrix();
    case Activation::softmax: {
      const Vector<Scalar> dot = (grad_y.array() * y.array()).rowwise().sum();
      return (y.array() * (grad_y.colwise() - dot).array()).matrix();
    }
  }
  return grad_y;
}

}  // namespace detail

template <typename Scalar, typename Derived>
ForwardPass<Scalar> forward(const DenseNet<Scalar>& net, const Eigen::MatrixBase<Derived>& batch) {
  if (net.empty()) throw ConfigError("forward on an empty network");
  if (batch.cols() != net.in_dim())
    throw ConfigError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                      std::to_string(net.in_dim()));
  ForwardPass<Scalar> pass;
  pass.activations.reserve(net.depth() + 1);
  pass.activations.emplace_back(batch.template cast<Scalar>());
  for (const auto& layer : net.layers()) {
    Matrix<Scalar> z = pass.activations.back() * layer.weight;
    z.rowwise() += layer.bias;
    detail::apply_activation(z, layer.activation);
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

// Output only; nothing cached.
template <typename Scalar, typename Derived>
Matrix<Scalar> infer(const DenseNet<Scalar>& net, const Eigen::MatrixBase<Derived>& batch) {
  if (net.empty()) throw ConfigError("infer on an empty network");
  if (batch.cols() != net.in_dim())
    throw ConfigError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                      std::to_string(net.in_dim()));
  Matrix<Scalar> x = batch.template cast<Scalar>();
  for (const auto& layer : net.layers()) {
    Matrix<Scalar> z = x * layer.weight;
    z.rowwise() += layer.bias;
    detail::apply_activation(z, layer.activation);
    x = std::move(z);
  }
  return x;
}

// Overwrites net.grads() with dL/dparams and returns dL/dinput.
template <typename Scalar>
Matrix<Scalar> backward(DenseNet<Scalar>& net, const ForwardPass<Scalar>& pass,
                        const Matrix<Scalar>& upstream,
                        std::span<const ActivationGrad<Scalar>> taps = {}) {
  if (pass.empty()) throw StateError("backward called before forward");
  if (pass.activations.size() != net.depth() + 1)
    throw StateError("forward pass does not belong to this network");
  const auto& out = pass.output();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw ConfigError("upstream gradient shape does not match network output");
  for (const auto& t : taps)
    if (t.index == 0 || t.index > net.depth() ||
        t.grad.rows() != pass.activations[t.index].rows() ||
        t.grad.cols() != pass.activations[t.index].cols())
      throw ConfigError("activation gradient does not match a hidden activation");

  auto& grads = net.grads();
  grads.resize(net.depth());
  Matrix<Scalar> grad_y = upstream;
  for (std::size_t i = net.depth(); i-- > 0;) {
    for (const auto& t : taps)
      if (t.index == i + 1) grad_y += t.grad;
    const auto& layer = net.layers()[i];
    const Matrix<Scalar> grad_z =
        detail::activation_backward(pass.activations[i + 1], grad_y, layer.activation);
    grads[i].weight.noalias() = pass.activations[i].transpose() * grad_z;
    grads[i].bias = grad_z.colwise().sum();
    grad_y.noalias() = grad_z * layer.weight.transpose();
  }
  return grad_y;
}

}  // namespace ugsr
