#pragma once

// Loss functions for the sampler and detector. Every loss returns its value
// together with the gradient with respect to its first argument, so callers
// can chain straight into backward().

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "ugsr/dense_net.hpp"
#include "ugsr/special.hpp"

namespace ugsr {

inline constexpr double kProbClampLow = 1e-7;
inline constexpr double kProbClampHigh = 1.0 - 1e-7;

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  Matrix<Scalar> grad;
};

struct LossWeights {
  double lambda1 = 1.0;  // evidential term of the multi-class head
  double lambda2 = 1.0;  // BCE term of the binary head
  double lambda3 = 1.0;  // weighted BCE term of the detector
  double temperature = 0.1;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("loss weights must be >= 0");
    if (!(temperature > 0)) throw ConfigError("contrastive temperature must be > 0");
  }
};

template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  Matrix<typename Derived::Scalar> p = logits;
  detail::apply_activation(p, Activation::softmax);
  return p;
}

template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& probs, const Matrix<Scalar>& grad_probs) {
  return detail::activation_backward(probs, grad_probs, Activation::softmax);
}

template <typename Scalar>
Matrix<Scalar> one_hot(const std::vector<int>& labels, Index classes) {
  Matrix<Scalar> y = Matrix<Scalar>::Zero(Index(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw ConfigError("label outside class range");
    y(Index(i), labels[i]) = Scalar(1);
  }
  return y;
}

// Mean over rows of -sum_c y_c log p_c.
template <typename Scalar>
LossValue<Scalar> cross_entropy(const Matrix<Scalar>& probs, const Matrix<Scalar>& onehot) {
  if (probs.rows() != onehot.rows() || probs.cols() != onehot.cols())
    throw ConfigError("cross_entropy: shape mismatch");
  const Index n = probs.rows();
  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(n, probs.cols());
  if (n == 0) return out;
  const auto lo = static_cast<Scalar>(kProbClampLow);
  const auto hi = static_cast<Scalar>(kProbClampHigh);
  double total = 0;
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < probs.cols(); ++c) {
      const Scalar y = onehot(i, c);
      if (y == Scalar(0)) continue;
      const Scalar p = probs(i, c);
      const Scalar pc = std::clamp(p, lo, hi);
      total -= double(y) * std::log(double(pc));
      if (p > lo && p < hi) out.grad(i, c) = -y / (pc * Scalar(n));
    }
  out.value = static_cast<Scalar>(total / double(n));
  return out;
}

// Mean negative log-likelihood of binary labels under probabilities p.
template <typename Scalar>
LossValue<Scalar> weighted_bce(const Vector<Scalar>& p, const Vector<Scalar>& y,
                               const Vector<Scalar>& w) {
  if (p.size() != y.size() || p.size() != w.size()) throw ConfigError("bce: shape mismatch");
  if ((w.array() < Scalar(0)).any()) throw ConfigError("bce: negative sample weight");
  const Index n = p.size();
  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(n, 1);
  if (n == 0) return out;
  const auto lo = static_cast<Scalar>(kProbClampLow);
  const auto hi = static_cast<Scalar>(kProbClampHigh);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar pc = std::clamp(p(i), lo, hi);
    total -= double(w(i)) * (double(y(i)) * std::log(double(pc)) +
                             double(1 - y(i)) * std::log(1.0 - double(pc)));
    if (p(i) > lo && p(i) < hi)
      out.grad(i, 0) = w(i) * (-y(i) / pc + (Scalar(1) - y(i)) / (Scalar(1) - pc)) / Scalar(n);
  }
  out.value = static_cast<Scalar>(total / double(n));
  return out;
}

template <typename Scalar>
LossValue<Scalar> bce(const Vector<Scalar>& p, const Vector<Scalar>& y) {
  return weighted_bce<Scalar>(p, y, Vector<Scalar>::Ones(p.size()));
}

// Inverse class frequency, scaled so the weights sum to the sample count:
// w_i = N / (K * N_{class(i)}) with K the number of classes present.
template <typename Scalar>
Vector<Scalar> inverse_frequency_weights(const std::vector<int>& labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  Vector<Scalar> w(Index(labels.size()));
  const double n = double(labels.size());
  const double k = double(counts.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    w(Index(i)) = static_cast<Scalar>(n / (k * double(counts[labels[i]])));
  return w;
}

// Supervised contrastive loss on the rows of `embeddings` (normalized here).
// Positives of anchor i: other rows with the same label. Denominator: all
// rows except i. Averaged over anchors that have at least one positive.
template <typename Scalar>
LossValue<Scalar> supcon(const Matrix<Scalar>& embeddings, const std::vector<int>& labels,
                         double temperature) {
  const Index n = embeddings.rows();
  if (Index(labels.size()) != n) throw ConfigError("supcon: label count mismatch");
  if (n < 2) throw ContractError("supcon needs a batch of at least 2");
  if (!(temperature > 0)) throw ConfigError("supcon: temperature must be > 0");

  const Vector<Scalar> norms = embeddings.rowwise().norm().cwiseMax(Scalar(1e-12));
  const Matrix<Scalar> z = norms.cwiseInverse().asDiagonal() * embeddings;
  const Matrix<Scalar> sim = (z * z.transpose()) / static_cast<Scalar>(temperature);

  Matrix<Scalar> g = Matrix<Scalar>::Zero(n, n);  // dL/dsim
  std::vector<Index> positives(std::size_t(n), 0);
  Index anchors = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < n; ++k)
      if (k != i && labels[std::size_t(k)] == labels[std::size_t(i)]) ++positives[std::size_t(i)];
    if (positives[std::size_t(i)] > 0) ++anchors;
  }

  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(n, embeddings.cols());
  if (anchors == 0) return out;

  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const Index np = positives[std::size_t(i)];
    if (np == 0) continue;
    Scalar m = std::numeric_limits<Scalar>::lowest();
    for (Index a = 0; a < n; ++a)
      if (a != i) m = std::max(m, sim(i, a));
    double denom = 0;
    for (Index a = 0; a < n; ++a)
      if (a != i) denom += std::exp(double(sim(i, a) - m));
    const double lse = double(m) + std::log(denom);
    double li = 0;
    for (Index a = 0; a < n; ++a) {
      if (a == i) continue;
      const double soft = std::exp(double(sim(i, a)) - lse);
      const bool pos = labels[std::size_t(a)] == labels[std::size_t(i)];
      if (pos) li -= double(sim(i, a)) - lse;
      g(i, a) = static_cast<Scalar>((soft - (pos ? 1.0 / double(np) : 0.0)) / double(anchors));
    }
    total += li / double(np);
  }
  out.value = static_cast<Scalar>(total / double(anchors));

  const Matrix<Scalar> grad_z =
      ((g + g.transpose()) * z) / static_cast<Scalar>(temperature);
  const Vector<Scalar> radial = (grad_z.array() * z.array()).rowwise().sum();
  out.grad = norms.cwiseInverse().asDiagonal() * (grad_z - radial.asDiagonal() * z);
  return out;
}

// Dirichlet concentration per sample: alpha = softplus(logits) + 1.
template <typename Scalar>
struct DirichletEvidence {
  Matrix<Scalar> alpha;      // samples x classes, entries >= 1
  Vector<Scalar> strength;   // row sums of alpha
};

template <typename Scalar>
Scalar softplus(Scalar x) {
  if (std::isinf(x)) return x > 0 ? x : Scalar(0);
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Derived>
DirichletEvidence<typename Derived::Scalar> evidence_from_logits(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  DirichletEvidence<Scalar> ev;
  ev.alpha = logits.unaryExpr([](Scalar v) { return softplus(v) + Scalar(1); });
  ev.strength = ev.alpha.rowwise().sum();
  return ev;
}

// d alpha / d logit = sigmoid(logit).
template <typename Scalar>
Matrix<Scalar> evidence_backward(const Matrix<Scalar>& logits, const Matrix<Scalar>& grad_alpha) {
  return (grad_alpha.array() *
          logits.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); }).array())
      .matrix();
}

// Expected cross-entropy under the Dirichlet: mean over rows of
// sum_c y_c (psi(S) - psi(alpha_c)). Gradient is with respect to alpha.
template <typename Scalar>
LossValue<Scalar> evidential_loss(const Matrix<Scalar>& alpha, const Matrix<Scalar>& onehot) {
  if (alpha.rows() != onehot.rows() || alpha.cols() != onehot.cols())
    throw ConfigError("evidential_loss: shape mismatch");
  if (alpha.size() > 0 && !(alpha.minCoeff() >= Scalar(1)))
    throw ContractError("evidential_loss: concentration below 1");
  const Index n = alpha.rows();
  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(n, alpha.cols());
  if (n == 0) return out;
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double s = double(alpha.row(i).sum());
    const double psi_s = digamma(s);
    const double tri_s = trigamma(s);
    const double ysum = double(onehot.row(i).sum());
    for (Index c = 0; c < alpha.cols(); ++c) {
      const double y = double(onehot(i, c));
      if (y != 0) total += y * (psi_s - digamma(double(alpha(i, c))));
      out.grad(i, c) = static_cast<Scalar>(
          (ysum * tri_s - (y != 0 ? y * trigamma(double(alpha(i, c))) : 0.0)) / double(n));
    }
  }
  out.value = static_cast<Scalar>(total / double(n));
  return out;
}

}  // namespace ugsr
