#pragma once

// End-to-end continual learning loop: static training, then per month
// evaluate -> select -> label -> bank -> fine-tune -> codebook update.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ugsr/codebook.hpp"
#include "ugsr/datastream.hpp"
#include "ugsr/detector.hpp"
#include "ugsr/metrics.hpp"
#include "ugsr/sampler.hpp"

namespace ugsr {

struct RunConfig {
  // Active sampling
  std::size_t budget = 50;
  double mu = 0.5;
  double benign_quota = 0.10;
  double replay_fraction = 0.2;
  double finetune_benign_ratio = 0.4;
  std::uint32_t static_months = 12;

  // Networks and optimization
  Index hidden_width = 512;
  std::size_t static_epochs = 200;
  std::size_t static_batch = 1024;
  OptimKind static_optimizer = OptimKind::sgd;
  double static_lr = 3e-4;
  std::size_t continual_epochs = 50;
  std::size_t continual_batch = 1024;
  OptimKind continual_optimizer = OptimKind::adam;
  double continual_lr = 5e-5;
  LossWeights loss;
  FreezeRule sampler_freeze = FreezeRule::freeze_bin;

  // Codebook and fusion
  std::size_t k = 3;
  std::size_t theta = 3;
  CodebookCapacity capacity;
  GeometryParams geometry;

  // Ablations
  bool retrieval_enabled = true;
  bool fmul_enabled = true;

  std::uint32_t classes = 0;  // C + 1; 0 infers it from the stream
  std::uint64_t seed = 1;

  void validate() const;
  BudgetPolicy budget_policy() const { return {budget, mu, benign_quota}; }
  TrainSettings static_settings() const;
  TrainSettings continual_settings() const;

  // Every field as key=value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  // Unknown keys are a ConfigError; missing keys keep their defaults.
  static RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

void write_config(std::ostream& out, const RunConfig& config);
RunConfig read_config(std::istream& in);

struct PeriodReport {
  std::uint32_t month = 0;
  Confusion confusion;
  MetricSet metrics;
  std::size_t labels_used = 0;
  std::size_t codebook_total = 0;
  std::map<std::uint32_t, std::size_t> codebook_per_class;
  std::vector<std::uint64_t> selected;  // ids labeled this month, in selection order
};

struct RunReport {
  RunConfig config;
  std::vector<PeriodReport> months;
  MetricSet averages;
};

// Unweighted per-month means; absent months are skipped per metric.
MetricSet average_metrics(std::span<const PeriodReport> months);

struct StaticLogs {
  SamplerTrainLog sampler;
  TrainLog detector;
};

struct ModelState {
  HierarchicalSampler<float> sampler;
  Detector<float> detector;
  Codebook codebook;
  MemoryBank bank;
  StaticLogs logs;
};

// Observer hooks; `trace` receives the name of each step as it starts.
struct RunHooks {
  std::function<void(std::string_view step, std::uint32_t month)> trace;
  std::function<void(const PeriodReport&)> on_period;
};

std::uint32_t resolve_classes(const RunConfig& config, std::span<const Sample> stream);

std::vector<CodebookCandidate> codebook_candidates(const Detector<float>& detector,
                                                   std::span<const Sample> samples);

ModelState static_phase(const RunConfig& config, std::span<const Sample> static_data,
                        std::uint32_t classes);

// Per-sample fused malware probabilities for a month.
std::vector<double> fused_probabilities(const ModelState& state, std::span<const Sample> month,
                                        const RunConfig& config);

PeriodReport evaluate_period(const ModelState& state, std::span<const Sample> month_data,
                             const RunConfig& config);

PeriodReport continual_step(ModelState& state, std::span<const Sample> month_data,
                            const RunConfig& config, LabelOracle& oracle, std::uint32_t month,
                            const RunHooks& hooks = {});

// Continual months only, starting from a trained state.
RunReport run_continual(ModelState state, const RunConfig& config, std::span<const Sample> stream,
                        const RunHooks& hooks = {});

RunReport run_experiment(const RunConfig& config, std::span<const Sample> stream,
                         const RunHooks& hooks = {});

// Fine-tuning set: labeled + replay, with benign rows oversampled (drawn
// with replacement from the benign replay rows, else all benign rows) until
// their share reaches `benign_ratio`.
std::vector<Sample> compose_finetune_set(std::span<const Sample> labeled,
                                         std::span<const Sample> replay, double benign_ratio,
                                         std::uint64_t seed);

}  // namespace ugsr
