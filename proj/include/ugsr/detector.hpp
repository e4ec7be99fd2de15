#pragma once

// Deployed detector: encoder (d -> 512-d embedding) and binary classifier.

#include <random>
#include <vector>

#include "ugsr/dense_net.hpp"
#include "ugsr/log.hpp"
#include "ugsr/losses.hpp"
#include "ugsr/optim.hpp"
#include "ugsr/sampler.hpp"
#include "ugsr/training.hpp"

namespace ugsr {

inline constexpr Index kEmbeddingDim = 512;

template <typename Scalar>
struct Detector {
  DenseNet<Scalar> encoder;
  DenseNet<Scalar> classifier;

  static Detector create(const NetworkShape& shape, std::mt19937_64& rng) {
    Detector d;
    d.encoder = make_trunk<Scalar>(shape, 0, rng);
    d.classifier = make_binary_head<Scalar>(shape, shape.embed_width, rng);
    return d;
  }

  Index embedding_dim() const { return encoder.out_dim(); }
};

template <typename Scalar, typename Derived>
Matrix<Scalar> embed(const Detector<Scalar>& d, const Eigen::MatrixBase<Derived>& x) {
  return infer(d.encoder, x);
}

template <typename Scalar, typename Derived>
Vector<Scalar> predict(const Detector<Scalar>& d, const Eigen::MatrixBase<Derived>& x) {
  return infer(d.classifier, infer(d.encoder, x)).col(0);
}

// Embeddings and probabilities from a single encoder pass.
template <typename Scalar, typename Derived>
std::pair<Matrix<Scalar>, Vector<Scalar>> embed_and_predict(const Detector<Scalar>& d,
                                                            const Eigen::MatrixBase<Derived>& x) {
  Matrix<Scalar> e = infer(d.encoder, x);
  Vector<Scalar> p = infer(d.classifier, e).col(0);
  return {std::move(e), std::move(p)};
}

// supcon(encoder embeddings) + lambda3 * weighted BCE(classifier output).
// Fills gradients of both networks.
template <typename Scalar>
EpochLoss detector_loss(Detector<Scalar>& d, const Matrix<Scalar>& x, const std::vector<int>& y_bin,
                        const Vector<Scalar>& weights, const LossWeights& w) {
  const auto enc = forward(d.encoder, x);
  const Matrix<Scalar>& z = enc.output();
  const auto cls = forward(d.classifier, z);
  const auto wb = weighted_bce<Scalar>(cls.output().col(0), as_vector<Scalar>(y_bin), weights);
  Matrix<Scalar> grad_z = backward<Scalar>(d.classifier, cls, static_cast<Scalar>(w.lambda3) * wb.grad);
  double con = 0;
  if (x.rows() >= 2) {
    const auto sc = supcon<Scalar>(z, y_bin, w.temperature);
    con = double(sc.value);
    grad_z += sc.grad;
  }
  backward<Scalar>(d.encoder, enc, grad_z);
  return {con + w.lambda3 * double(wb.value), con, double(wb.value)};
}

// Joint training of encoder and classifier. `weights` holds one
// non-negative weight per training sample.
template <typename Scalar>
TrainLog train_detector(Detector<Scalar>& d, const LabeledBatch<Scalar>& data,
                        const Vector<Scalar>& weights, const TrainSettings& settings,
                        std::mt19937_64& rng) {
  TrainLog log;
  if (data.empty()) throw ContractError("train_detector: empty training data");
  if (weights.size() != data.size()) throw ConfigError("train_detector: one weight per sample");
  settings.weights.validate();
  OptimState<Scalar> enc_opt(settings.optim), cls_opt(settings.optim);
  for (std::size_t e = 0; e < settings.epochs; ++e) {
    EpochLoss epoch;
    for (const auto& rows : epoch_batches(data.size(), settings.batch_size, rng)) {
      const auto batch = gather(data, rows);
      Vector<Scalar> w(Index(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) w(Index(i)) = weights(rows[i]);
      detail::accumulate(epoch, detector_loss(d, batch.x, batch.y_bin, w, settings.weights),
                         double(rows.size()));
      optim_step(enc_opt, d.encoder);
      optim_step(cls_opt, d.classifier);
    }
    log.push_back(detail::scaled(epoch, 1.0 / double(data.size())));
  }
  return log;
}

}  // namespace ugsr
