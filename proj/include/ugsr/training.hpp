#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "ugsr/dense_net.hpp"
#include "ugsr/losses.hpp"
#include "ugsr/optim.hpp"

namespace ugsr {

struct TrainSettings {
  std::size_t epochs = 200;
  std::size_t batch_size = 1024;
  OptimSettings optim;
  LossWeights weights;
};

// Mean batch loss of one epoch, plus the two components of the composite.
struct EpochLoss {
  double total = 0;
  double first = 0;   // CE / supcon
  double second = 0;  // evidential / BCE / weighted BCE (unscaled)
};

using TrainLog = std::vector<EpochLoss>;

// A labeled design matrix. y_mul uses 0 for benign, family index otherwise.
template <typename Scalar>
struct LabeledBatch {
  Matrix<Scalar> x;
  std::vector<int> y_mul;
  std::vector<int> y_bin;

  Index size() const { return x.rows(); }
  bool empty() const { return x.rows() == 0; }
};

template <typename Scalar>
LabeledBatch<Scalar> gather(const LabeledBatch<Scalar>& data, std::span<const Index> rows) {
  LabeledBatch<Scalar> out;
  out.x.resize(Index(rows.size()), data.x.cols());
  out.y_mul.reserve(rows.size());
  out.y_bin.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(Index(i)) = data.x.row(rows[i]);
    out.y_mul.push_back(data.y_mul[std::size_t(rows[i])]);
    out.y_bin.push_back(data.y_bin[std::size_t(rows[i])]);
  }
  return out;
}

// Shuffled minibatch index lists for one epoch. A trailing batch of one
// sample is folded into its predecessor so contrastive terms stay defined.
inline std::vector<std::vector<Index>> epoch_batches(Index n, std::size_t batch_size,
                                                     std::mt19937_64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bs = std::max<std::size_t>(batch_size, 1);
  std::vector<std::vector<Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    batches.emplace_back(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

template <typename Scalar>
Vector<Scalar> as_vector(const std::vector<int>& v) {
  Vector<Scalar> out(Index(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(Index(i)) = static_cast<Scalar>(v[i]);
  return out;
}

}  // namespace ugsr
