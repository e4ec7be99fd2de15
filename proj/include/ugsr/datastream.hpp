#pragma once

// Sample stream contract: CSV I/O, a synthetic drifting stream generator,
// the ground-truth labeling oracle and the replay memory bank.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "ugsr/training.hpp"

namespace ugsr {

struct Sample {
  std::uint64_t id = 0;
  Eigen::VectorXf features;
  int y_bin = 0;
  int y_mul = 0;  // 0 benign, family index otherwise
  std::uint32_t month = 0;

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.y_bin == b.y_bin && a.y_mul == b.y_mul && a.month == b.month &&
           a.features.size() == b.features.size() && a.features == b.features;
  }
};

using Stream = std::vector<Sample>;

// Throws ConfigError on y_bin/y_mul inconsistency or non-finite features.
void validate_sample(const Sample& s);

Stream read_csv(std::istream& in);
Stream load_csv(const std::string& path);
void write_csv(std::ostream& out, std::span<const Sample> samples);
void save_csv(const std::string& path, std::span<const Sample> samples);

struct DriftConfig {
  Eigen::Index dim = 16;
  std::uint32_t families = 8;  // C
  std::uint32_t months = 18;
  std::uint32_t static_months = 12;
  double ratio = 9.0;          // benign per malware
  std::size_t per_month = 2000;
  std::uint64_t seed = 1;

  std::size_t benign_modes = 3;
  double benign_spread = 0.5;       // stddev of benign mode centers
  double noise = 1.0;               // per-feature stddev around a center
  double signature_amplitude = 3.0; // family offset on each signature feature
  std::size_t signature_size = 3;   // features a family elevates
  double drift_velocity = 0.15;     // per-month center displacement (norm)
  double inheritance = 0.5;         // share of the parent signature a late family keeps
  // Month each family first appears; empty selects the default schedule
  // (first half at month 0, the rest spread over the continual months).
  std::vector<std::uint32_t> birth_months;

  void validate() const;
  std::uint32_t birth_month(std::uint32_t family) const;  // family in 1..C
};

// Per month: benign rows from a drifting Gaussian mixture, malware rows from
// per-family drifting Gaussians. Families born during the static months take
// their signature features from the first half of the feature range. A later
// family is a variant of a random earlier one: it sits on the parent's mode,
// keeps `inheritance` of the parent's signature and adds its own signature in
// the second half. Row order within a month is shuffled, ids are assigned in
// output order.
Stream generate_stream(const DriftConfig& config);

std::vector<Sample> month_slice(std::span<const Sample> stream, std::uint32_t month);
std::uint32_t month_count(std::span<const Sample> stream);  // max month + 1
int family_count(std::span<const Sample> stream);           // max y_mul

template <typename Scalar>
LabeledBatch<Scalar> to_batch(std::span<const Sample> samples) {
  LabeledBatch<Scalar> b;
  const Eigen::Index d = samples.empty() ? 0 : samples.front().features.size();
  b.x.resize(Eigen::Index(samples.size()), d);
  b.y_mul.reserve(samples.size());
  b.y_bin.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    b.x.row(Eigen::Index(i)) = samples[i].features.template cast<Scalar>().transpose();
    b.y_mul.push_back(samples[i].y_mul);
    b.y_bin.push_back(samples[i].y_bin);
  }
  return b;
}

struct Labels {
  int y_bin = 0;
  int y_mul = 0;
};

// Ground-truth stand-in for the analyst. Each period has a label budget.
class LabelOracle {
 public:
  explicit LabelOracle(std::span<const Sample> stream);

  void begin_period(std::size_t budget);
  std::vector<Labels> label(std::span<const std::uint64_t> ids);

  std::size_t consumed() const { return consumed_; }
  std::size_t total_consumed() const { return total_; }
  std::size_t budget() const { return budget_; }

 private:
  std::unordered_map<std::uint64_t, Labels> truth_;
  std::size_t budget_ = 0;
  std::size_t consumed_ = 0;
  std::size_t total_ = 0;
};

class MemoryBank {
 public:
  // Rejects ids already present.
  void append(std::span<const Sample> samples, std::uint32_t month);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<Sample>& samples() const { return samples_; }
  std::uint32_t acquired(std::size_t i) const { return acquired_.at(i); }
  bool contains(std::uint64_t id) const { return ids_.count(id) > 0; }

 private:
  std::vector<Sample> samples_;
  std::vector<std::uint32_t> acquired_;
  std::unordered_set<std::uint64_t> ids_;
};

// ceil(fraction * |bank|) samples drawn uniformly without replacement.
std::vector<Sample> replay_draw(const MemoryBank& bank, double fraction, std::uint64_t seed);

}  // namespace ugsr
