#pragma once

// Hierarchical uncertainty sampler: an evidential multi-class head F_mul
// followed by a binary head F_bin that consumes F_mul's logits.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "ugsr/dense_net.hpp"
#include "ugsr/log.hpp"
#include "ugsr/losses.hpp"
#include "ugsr/optim.hpp"
#include "ugsr/training.hpp"

namespace ugsr {

struct NetworkShape {
  Index input_dim = 0;
  Index classes = 2;        // C + 1, benign included
  Index hidden_width = 512;
  Index embed_width = 512;
  std::array<Index, 3> head_widths{256, 128, 64};
};

// d -> h -> h -> h -> h -> embed. With out_width > 0 (F_mul) the embed layer
// is ReLU and a linear head follows; with out_width == 0 (detector encoder)
// the embed layer itself is linear, so embeddings are signed.
template <typename Scalar>
DenseNet<Scalar> make_trunk(const NetworkShape& shape, Index out_width, std::mt19937_64& rng) {
  const Index h = shape.hidden_width;
  const std::array<Index, 7> dims{shape.input_dim, h, h, h, h, shape.embed_width, out_width};
  std::array<Activation, 6> acts{};
  acts.fill(Activation::relu);
  acts[5] = Activation::none;
  if (out_width == 0) {
    acts[4] = Activation::none;
    return DenseNet<Scalar>::random(std::span(dims).first(6), std::span(acts).first(5), rng);
  }
  return DenseNet<Scalar>::random(dims, acts, rng);
}

// in -> 256 -> 128 -> 64 (ReLU) -> 1 (sigmoid). Shared by F_bin and the detector classifier.
template <typename Scalar>
DenseNet<Scalar> make_binary_head(const NetworkShape& shape, Index in_width, std::mt19937_64& rng) {
  const std::array<Index, 5> dims{in_width, shape.head_widths[0], shape.head_widths[1],
                                  shape.head_widths[2], 1};
  const std::array<Activation, 4> acts{Activation::relu, Activation::relu, Activation::relu,
                                       Activation::sigmoid};
  return DenseNet<Scalar>::random(dims, acts, rng);
}

template <typename Scalar>
struct HierarchicalSampler {
  DenseNet<Scalar> f_mul;  // logits over C + 1 classes
  DenseNet<Scalar> f_bin;  // malware probability from those logits
  Index classes = 2;

  static HierarchicalSampler create(const NetworkShape& shape, std::mt19937_64& rng) {
    if (shape.classes < 2) throw ConfigError("sampler needs at least two classes");
    HierarchicalSampler s;
    s.classes = shape.classes;
    s.f_mul = make_trunk<Scalar>(shape, shape.classes, rng);
    s.f_bin = make_binary_head<Scalar>(shape, shape.classes, rng);
    return s;
  }
};

// Which part of the sampler stays fixed while fine-tuning.
enum class FreezeRule : std::uint32_t { freeze_bin = 0, freeze_mul = 1 };

inline const char* to_string(FreezeRule r) {
  return r == FreezeRule::freeze_bin ? "freeze_bin" : "freeze_mul";
}

struct SamplerTrainLog {
  TrainLog stage1;  // F_mul: CE + lambda1 * evidential
  TrainLog stage2;  // F_bin: supcon + lambda2 * BCE
};

// Dirichlet vacuity (C + 1) / S per row of logits.
template <typename Derived>
Vector<typename Derived::Scalar> vacuity(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const auto ev = evidence_from_logits(logits);
  return (Scalar(logits.cols()) * ev.strength.cwiseInverse()).eval();
}

template <typename Scalar, typename Derived>
Vector<Scalar> multiclass_uncertainty(const HierarchicalSampler<Scalar>& s,
                                      const Eigen::MatrixBase<Derived>& x) {
  return vacuity(infer(s.f_mul, x));
}

// Distance-to-boundary complement 1 - |2p - 1|.
template <typename Scalar>
Vector<Scalar> boundary_score(const Vector<Scalar>& p) {
  return (Scalar(1) - (Scalar(2) * p.array() - Scalar(1)).abs()).matrix();
}

template <typename Scalar, typename Derived>
Vector<Scalar> sampler_probability(const HierarchicalSampler<Scalar>& s,
                                   const Eigen::MatrixBase<Derived>& x) {
  return infer(s.f_bin, infer(s.f_mul, x)).col(0);
}

template <typename Scalar, typename Derived>
Vector<Scalar> binary_uncertainty(const HierarchicalSampler<Scalar>& s,
                                  const Eigen::MatrixBase<Derived>& x) {
  return boundary_score<Scalar>(sampler_probability(s, x));
}

// F_mul objective on one batch: CE(softmax(logits)) + lambda1 * evidential.
// Fills f_mul's gradients; `extra_logit_grad`, when non-empty, is added to
// dL/dlogits before backpropagating (used when a frozen F_bin sits on top).
template <typename Scalar>
EpochLoss multiclass_loss(DenseNet<Scalar>& f_mul, const LabeledBatch<Scalar>& batch,
                          const LossWeights& w, const Matrix<Scalar>& extra_logit_grad = {}) {
  const auto pass = forward(f_mul, batch.x);
  const Matrix<Scalar>& logits = pass.output();
  const Matrix<Scalar> y = one_hot<Scalar>(batch.y_mul, logits.cols());
  const Matrix<Scalar> probs = softmax_rows(logits);
  const auto ce = cross_entropy<Scalar>(probs, y);
  const auto ev = evidence_from_logits(logits);
  const auto evi = evidential_loss<Scalar>(ev.alpha, y);
  Matrix<Scalar> grad = softmax_backward<Scalar>(probs, ce.grad) +
                        static_cast<Scalar>(w.lambda1) * evidence_backward<Scalar>(logits, evi.grad);
  if (extra_logit_grad.size() > 0) grad += extra_logit_grad;
  backward(f_mul, pass, grad);
  return {double(ce.value) + w.lambda1 * double(evi.value), double(ce.value), double(evi.value)};
}

// F_bin objective: supcon on its last hidden layer + lambda2 * BCE on its
// output. Fills f_bin's gradients and returns dL/dinput through `input_grad`.
template <typename Scalar>
EpochLoss binary_head_loss(DenseNet<Scalar>& f_bin, const Matrix<Scalar>& inputs,
                           const std::vector<int>& y_bin, const LossWeights& w,
                           Matrix<Scalar>* input_grad = nullptr) {
  const auto pass = forward(f_bin, inputs);
  const Vector<Scalar> p = pass.output().col(0);
  const auto b = bce<Scalar>(p, as_vector<Scalar>(y_bin));
  const std::size_t feature = f_bin.depth() - 1;
  std::vector<ActivationGrad<Scalar>> taps;
  double con = 0;
  if (inputs.rows() >= 2) {
    auto sc = supcon<Scalar>(pass.activations[feature], y_bin, w.temperature);
    con = double(sc.value);
    taps.push_back({feature, std::move(sc.grad)});
  }
  const Matrix<Scalar> g = backward<Scalar>(f_bin, pass, static_cast<Scalar>(w.lambda2) * b.grad, taps);
  if (input_grad) *input_grad = g;
  return {con + w.lambda2 * double(b.value), con, double(b.value)};
}

namespace detail {

inline void accumulate(EpochLoss& acc, const EpochLoss& l, double weight) {
  acc.total += weight * l.total;
  acc.first += weight * l.first;
  acc.second += weight * l.second;
}

inline EpochLoss scaled(EpochLoss l, double s) {
  l.total *= s;
  l.first *= s;
  l.second *= s;
  return l;
}

}  // namespace detail

// Stage 1 trains F_mul; stage 2 trains F_bin on top of frozen F_mul logits.
// With train_mul = false stage 1 is skipped and the log stays empty.
template <typename Scalar>
SamplerTrainLog train_sampler_static(HierarchicalSampler<Scalar>& s, const LabeledBatch<Scalar>& data,
                                     const TrainSettings& settings, std::mt19937_64& rng,
                                     bool train_mul = true) {
  if (data.empty()) throw ContractError("train_sampler_static: empty training data");
  settings.weights.validate();
  SamplerTrainLog log;
  if (train_mul) {
    OptimState<Scalar> opt(settings.optim);
    for (std::size_t e = 0; e < settings.epochs; ++e) {
      EpochLoss epoch;
      for (const auto& rows : epoch_batches(data.size(), settings.batch_size, rng)) {
        const auto batch = gather(data, rows);
        detail::accumulate(epoch, multiclass_loss(s.f_mul, batch, settings.weights), double(rows.size()));
        optim_step(opt, s.f_mul);
      }
      log.stage1.push_back(detail::scaled(epoch, 1.0 / double(data.size())));
    }
  }

  const Matrix<Scalar> logits = infer(s.f_mul, data.x);
  OptimState<Scalar> opt(settings.optim);
  for (std::size_t e = 0; e < settings.epochs; ++e) {
    EpochLoss epoch;
    for (const auto& rows : epoch_batches(data.size(), settings.batch_size, rng)) {
      Matrix<Scalar> in(Index(rows.size()), logits.cols());
      std::vector<int> y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        in.row(Index(i)) = logits.row(rows[i]);
        y[i] = data.y_bin[std::size_t(rows[i])];
      }
      detail::accumulate(epoch, binary_head_loss(s.f_bin, in, y, settings.weights), double(rows.size()));
      optim_step(opt, s.f_bin);
    }
    log.stage2.push_back(detail::scaled(epoch, 1.0 / double(data.size())));
  }
  return log;
}

// Continual fine-tuning. freeze_bin: F_mul is updated with its own objective
// plus the F_bin objective backpropagated through the frozen F_bin.
// freeze_mul: only F_bin is updated, on frozen F_mul logits.
template <typename Scalar>
TrainLog finetune_sampler(HierarchicalSampler<Scalar>& s, const LabeledBatch<Scalar>& data,
                          const TrainSettings& settings, FreezeRule rule, std::mt19937_64& rng,
                          OptimState<Scalar>* optimizer = nullptr) {
  TrainLog log;
  if (data.empty()) {
    log::warn("finetune_sampler: no training data, skipping");
    return log;
  }
  settings.weights.validate();
  OptimState<Scalar> local(settings.optim);
  OptimState<Scalar>& opt = optimizer ? *optimizer : local;

  for (std::size_t e = 0; e < settings.epochs; ++e) {
    EpochLoss epoch;
    for (const auto& rows : epoch_batches(data.size(), settings.batch_size, rng)) {
      const auto batch = gather(data, rows);
      EpochLoss l;
      if (rule == FreezeRule::freeze_bin) {
        const Matrix<Scalar> logits = infer(s.f_mul, batch.x);
        Matrix<Scalar> through_bin;
        const auto bin = binary_head_loss(s.f_bin, logits, batch.y_bin, settings.weights, &through_bin);
        const auto mul = multiclass_loss(s.f_mul, batch, settings.weights, through_bin);
        l = {mul.total + bin.total, mul.total, bin.total};
        optim_step(opt, s.f_mul);
      } else {
        l = binary_head_loss(s.f_bin, infer(s.f_mul, batch.x), batch.y_bin, settings.weights);
        optim_step(opt, s.f_bin);
      }
      detail::accumulate(epoch, l, double(rows.size()));
    }
    log.push_back(detail::scaled(epoch, 1.0 / double(data.size())));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Budgeted selection

struct BudgetPolicy {
  std::size_t budget = 50;
  double mu = 0.5;
  double benign_quota = 0.10;

  void validate() const {
    if (mu < 0 || mu > 1) throw ConfigError("mu must lie in [0, 1]");
    if (benign_quota < 0 || benign_quota > 1) throw ConfigError("benign quota must lie in [0, 1]");
  }
  std::size_t multiclass_share() const;  // floor(mu * B)
  std::size_t binary_share() const { return budget - multiclass_share(); }
  std::size_t quota_count() const;       // ceil(quota * B)
};

struct ScoredSample {
  std::uint64_t id = 0;
  double s_mul = 0;
  double s_bin = 0;
  bool benign = false;  // stands in for the label when enforcing the quota
};

// floor(mu*B) ids by descending s_mul, then the remaining share by
// descending s_bin among the rest; ties go to the smaller id. If fewer than
// ceil(quota*B) selected samples are benign, the worst-ranked malware picks
// (rank = the score they were picked by) are swapped for the best unselected
// benign samples by s_bin. With |scored| <= B everything is returned.
std::vector<std::uint64_t> select_budget(std::span<const ScoredSample> scored,
                                         const BudgetPolicy& policy);

}  // namespace ugsr
