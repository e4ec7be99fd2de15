#include "ugsr/metrics.hpp"

#include <cmath>

#include "ugsr/errors.hpp"

namespace ugsr {

namespace {

Metric ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return double(num) / double(den);
}

}  // namespace

void Confusion::add(int truth, int predicted) {
  if (truth == 1) {
    predicted == 1 ? ++tp : ++fn;
  } else {
    predicted == 1 ? ++fp : ++tn;
  }
}

Confusion confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ConfigError("confusion: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], predicted[i]);
  return c;
}

Rates rates(const Confusion& c) {
  Rates r;
  r.tpr = ratio(c.tp, c.tp + c.fn);
  r.tnr = ratio(c.tn, c.tn + c.fp);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = r.tpr;
  return r;
}

Metric macc(Metric tpr, Metric tnr) {
  if (!tpr || !tnr) return std::nullopt;
  return (*tpr + *tnr) / 2.0;
}

Metric f2(Metric precision, Metric recall) {
  if (!precision || !recall) return std::nullopt;
  const double p = *precision;
  const double r = *recall;
  if (p == 0 && r == 0) return 0.0;
  return 5.0 * p * r / (4.0 * p + r);
}

Metric gmean(Metric tpr, Metric tnr) {
  if (!tpr || !tnr) return std::nullopt;
  return std::sqrt(*tpr * *tnr);
}

MetricSet evaluate(const Confusion& c) {
  const auto r = rates(c);
  return {r.tpr, r.tnr, f2(r.precision, r.recall), gmean(r.tpr, r.tnr), macc(r.tpr, r.tnr)};
}

}  // namespace ugsr
