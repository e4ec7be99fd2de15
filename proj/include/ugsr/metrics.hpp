#pragma once

// Confusion-matrix metrics for imbalanced binary detection. Undefined
// ratios (0/0) are std::nullopt and propagate through every metric.

#include <cstdint>
#include <optional>
#include <span>

namespace ugsr {

using Metric = std::optional<double>;

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t positives() const { return tp + fn; }
  std::uint64_t negatives() const { return tn + fp; }
  void add(int truth, int predicted);

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Positive class = malware (1). Predictions are thresholded by the caller.
Confusion confusion(std::span<const int> truth, std::span<const int> predicted);

struct Rates {
  Metric tpr;
  Metric tnr;
  Metric precision;
  Metric recall;
};

Rates rates(const Confusion& c);
Metric macc(Metric tpr, Metric tnr);
Metric f2(Metric precision, Metric recall);
Metric gmean(Metric tpr, Metric tnr);

struct MetricSet {
  Metric tpr, tnr, f2, gmean, macc;
};

MetricSet evaluate(const Confusion& c);

}  // namespace ugsr
