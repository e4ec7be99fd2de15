#include "ugsr/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include "ugsr/errors.hpp"
#include "ugsr/log.hpp"
#include "ugsr/seed.hpp"

namespace ugsr {

namespace {

// Seed tags, one per consumer of randomness.
enum : std::uint64_t {
  kSeedSamplerInit = 1,
  kSeedDetectorInit = 2,
  kSeedSamplerTrain = 3,
  kSeedDetectorTrain = 4,
  kSeedReplay = 5,
  kSeedBalance = 6,
  kSeedSamplerTune = 7,
  kSeedDetectorTune = 8,
};

constexpr std::size_t kChunk = 2048;

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config " + key + ": not a number '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config " + key + ": not a non-negative integer '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config " + key + ": expected true or false, got '" + v + "'");
}

OptimKind parse_optim(const std::string& key, const std::string& v) {
  if (v == "sgd") return OptimKind::sgd;
  if (v == "adam") return OptimKind::adam;
  throw ConfigError("config " + key + ": expected sgd or adam, got '" + v + "'");
}

FreezeRule parse_freeze(const std::string& key, const std::string& v) {
  if (v == "freeze_bin") return FreezeRule::freeze_bin;
  if (v == "freeze_mul") return FreezeRule::freeze_mul;
  throw ConfigError("config " + key + ": expected freeze_bin or freeze_mul, got '" + v + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  budget_policy().validate();
  loss.validate();
  if (replay_fraction < 0 || replay_fraction > 1) throw ConfigError("replay fraction must lie in [0, 1]");
  if (finetune_benign_ratio < 0 || finetune_benign_ratio >= 1)
    throw ConfigError("fine-tune benign ratio must lie in [0, 1)");
  if (static_months < 1) throw ConfigError("need at least one static month");
  if (hidden_width < 1) throw ConfigError("hidden width must be positive");
  if (static_batch < 2 || continual_batch < 2) throw ConfigError("batch sizes must be at least 2");
  if (!(static_lr > 0) || !(continual_lr > 0)) throw ConfigError("learning rates must be > 0");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (theta < 1 || theta > k) throw ConfigError("theta must lie in [1, k]");
  if (classes == 1) throw ConfigError("classes must be 0 (infer) or at least 2");
}

TrainSettings RunConfig::static_settings() const {
  TrainSettings s;
  s.epochs = static_epochs;
  s.batch_size = static_batch;
  s.optim.kind = static_optimizer;
  s.optim.lr = static_lr;
  s.weights = loss;
  return s;
}

TrainSettings RunConfig::continual_settings() const {
  TrainSettings s;
  s.epochs = continual_epochs;
  s.batch_size = continual_batch;
  s.optim.kind = continual_optimizer;
  s.optim.lr = continual_lr;
  s.weights = loss;
  return s;
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  return {
      {"budget", fmt_int(budget)},
      {"mu", fmt_double(mu)},
      {"benign_quota", fmt_double(benign_quota)},
      {"replay_fraction", fmt_double(replay_fraction)},
      {"finetune_benign_ratio", fmt_double(finetune_benign_ratio)},
      {"static_months", fmt_int(static_months)},
      {"hidden_width", fmt_int(hidden_width)},
      {"static_epochs", fmt_int(static_epochs)},
      {"static_batch", fmt_int(static_batch)},
      {"static_optimizer", to_string(static_optimizer)},
      {"static_lr", fmt_double(static_lr)},
      {"continual_epochs", fmt_int(continual_epochs)},
      {"continual_batch", fmt_int(continual_batch)},
      {"continual_optimizer", to_string(continual_optimizer)},
      {"continual_lr", fmt_double(continual_lr)},
      {"lambda1", fmt_double(loss.lambda1)},
      {"lambda2", fmt_double(loss.lambda2)},
      {"lambda3", fmt_double(loss.lambda3)},
      {"temperature", fmt_double(loss.temperature)},
      {"sampler_freeze", to_string(sampler_freeze)},
      {"k", fmt_int(k)},
      {"theta", fmt_int(theta)},
      {"n_benign", fmt_int(capacity.benign)},
      {"n_mal", fmt_int(capacity.per_family)},
      {"theta1", fmt_double(geometry.pull_base)},
      {"theta2", fmt_double(geometry.pull_confidence)},
      {"theta3", fmt_double(geometry.orthogonal)},
      {"geometry_enabled", fmt_bool(geometry.enabled)},
      {"retrieval_enabled", fmt_bool(retrieval_enabled)},
      {"fmul_enabled", fmt_bool(fmul_enabled)},
      {"classes", fmt_int(classes)},
      {"seed", fmt_int(seed)},
  };
}

RunConfig RunConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RunConfig c;
  for (const auto& [key, v] : pairs) {
    if (key == "budget") c.budget = parse_uint(key, v);
    else if (key == "mu") c.mu = parse_double(key, v);
    else if (key == "benign_quota") c.benign_quota = parse_double(key, v);
    else if (key == "replay_fraction") c.replay_fraction = parse_double(key, v);
    else if (key == "finetune_benign_ratio") c.finetune_benign_ratio = parse_double(key, v);
    else if (key == "static_months") c.static_months = std::uint32_t(parse_uint(key, v));
    else if (key == "hidden_width") c.hidden_width = Index(parse_uint(key, v));
    else if (key == "static_epochs") c.static_epochs = parse_uint(key, v);
    else if (key == "static_batch") c.static_batch = parse_uint(key, v);
    else if (key == "static_optimizer") c.static_optimizer = parse_optim(key, v);
    else if (key == "static_lr") c.static_lr = parse_double(key, v);
    else if (key == "continual_epochs") c.continual_epochs = parse_uint(key, v);
    else if (key == "continual_batch") c.continual_batch = parse_uint(key, v);
    else if (key == "continual_optimizer") c.continual_optimizer = parse_optim(key, v);
    else if (key == "continual_lr") c.continual_lr = parse_double(key, v);
    else if (key == "lambda1") c.loss.lambda1 = parse_double(key, v);
    else if (key == "lambda2") c.loss.lambda2 = parse_double(key, v);
    else if (key == "lambda3") c.loss.lambda3 = parse_double(key, v);
    else if (key == "temperature") c.loss.temperature = parse_double(key, v);
    else if (key == "sampler_freeze") c.sampler_freeze = parse_freeze(key, v);
    else if (key == "k") c.k = parse_uint(key, v);
    else if (key == "theta") c.theta = parse_uint(key, v);
    else if (key == "n_benign") c.capacity.benign = parse_uint(key, v);
    else if (key == "n_mal") c.capacity.per_family = parse_uint(key, v);
    else if (key == "theta1") c.geometry.pull_base = parse_double(key, v);
    else if (key == "theta2") c.geometry.pull_confidence = parse_double(key, v);
    else if (key == "theta3") c.geometry.orthogonal = parse_double(key, v);
    else if (key == "geometry_enabled") c.geometry.enabled = parse_bool(key, v);
    else if (key == "retrieval_enabled") c.retrieval_enabled = parse_bool(key, v);
    else if (key == "fmul_enabled") c.fmul_enabled = parse_bool(key, v);
    else if (key == "classes") c.classes = std::uint32_t(parse_uint(key, v));
    else if (key == "seed") c.seed = parse_uint(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

void write_config(std::ostream& out, const RunConfig& config) {
  for (const auto& [k, v] : config.to_pairs()) out << k << '=' << v << '\n';
}

RunConfig read_config(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line without '='", lineno);
    pairs.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return RunConfig::from_pairs(pairs);
}

// ---------------------------------------------------------------------------
// Reporting helpers

MetricSet average_metrics(std::span<const PeriodReport> months) {
  auto mean = [&](Metric MetricSet::*field) -> Metric {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& m : months)
      if (const auto& v = m.metrics.*field) {
        sum += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / double(n);
  };
  return {mean(&MetricSet::tpr), mean(&MetricSet::tnr), mean(&MetricSet::f2), mean(&MetricSet::gmean),
          mean(&MetricSet::macc)};
}

// ---------------------------------------------------------------------------
// Phases

std::uint32_t resolve_classes(const RunConfig& config, std::span<const Sample> stream) {
  const auto needed = std::uint32_t(family_count(stream)) + 1;
  if (config.classes == 0) return std::max<std::uint32_t>(needed, 2);
  if (config.classes < needed)
    throw ConfigError("stream has " + std::to_string(needed - 1) + " families but classes = " +
                      std::to_string(config.classes));
  return config.classes;
}

std::vector<CodebookCandidate> codebook_candidates(const Detector<float>& detector,
                                                   std::span<const Sample> samples) {
  std::vector<CodebookCandidate> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto chunk = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const auto batch = to_batch<float>(chunk);
    const auto [emb, p] = embed_and_predict(detector, batch.x);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out.push_back({std::uint32_t(chunk[i].y_mul), emb.row(Index(i)).transpose().cast<double>(),
                     classifier_confidence(double(p(Index(i))), chunk[i].y_bin)});
  }
  return out;
}

namespace {

// Per-class top-capacity candidates by confidence (ties by input order),
// computed without holding every embedding.
std::vector<CodebookCandidate> top_candidates(const Detector<float>& detector,
                                              std::span<const Sample> samples,
                                              const CodebookCapacity& cap) {
  std::vector<double> conf(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto chunk = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const auto p = predict(detector, to_batch<float>(chunk).x);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      conf[start + i] = classifier_confidence(double(p(Index(i))), chunk[i].y_bin);
  }
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[std::uint32_t(samples[i].y_mul)].push_back(i);
  std::vector<Sample> kept;
  for (auto& [id, idx] : by_class) {
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return conf[a] > conf[b]; });
    const std::size_t c = id == kBenignClass ? cap.benign : cap.per_family;
    for (std::size_t r = 0; r < std::min(c, idx.size()); ++r) kept.push_back(samples[idx[r]]);
  }
  return codebook_candidates(detector, kept);
}

}  // namespace

ModelState static_phase(const RunConfig& config, std::span<const Sample> static_data,
                        std::uint32_t classes) {
  config.validate();
  if (static_data.empty()) throw ContractError("static phase: no training data");
  NetworkShape shape;
  shape.input_dim = static_data.front().features.size();
  shape.classes = Index(classes);
  shape.hidden_width = config.hidden_width;
  shape.embed_width = kEmbeddingDim;

  std::mt19937_64 sampler_init(derive_seed(config.seed, kSeedSamplerInit));
  std::mt19937_64 detector_init(derive_seed(config.seed, kSeedDetectorInit));
  ModelState state{HierarchicalSampler<float>::create(shape, sampler_init),
                   Detector<float>::create(shape, detector_init),
                   Codebook(kEmbeddingDim, config.capacity, config.geometry),
                   MemoryBank{},
                   {}};

  const auto data = to_batch<float>(static_data);
  const auto settings = config.static_settings();
  std::mt19937_64 sampler_rng(derive_seed(config.seed, kSeedSamplerTrain));
  state.logs.sampler = train_sampler_static(state.sampler, data, settings, sampler_rng, config.fmul_enabled);

  std::mt19937_64 detector_rng(derive_seed(config.seed, kSeedDetectorTrain));
  const auto weights = inverse_frequency_weights<float>(data.y_bin);
  state.logs.detector = train_detector(state.detector, data, weights, settings, detector_rng);

  const auto candidates = top_candidates(state.detector, static_data, config.capacity);
  state.codebook = build_codebook(kEmbeddingDim, config.capacity, config.geometry, candidates);
  return state;
}

std::vector<double> fused_probabilities(const ModelState& state, std::span<const Sample> month,
                                        const RunConfig& config) {
  std::vector<double> out;
  out.reserve(month.size());
  const bool retrieval = config.retrieval_enabled && state.codebook.size() > 0;
  std::vector<std::uint32_t> classes;
  for (std::size_t start = 0; start < month.size(); start += kChunk) {
    const auto chunk = month.subspan(start, std::min(kChunk, month.size() - start));
    const auto [emb, p] = embed_and_predict(state.detector, to_batch<float>(chunk).x);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const double pd = double(p(Index(i)));
      if (!retrieval) {
        out.push_back(pd);
        continue;
      }
      const Eigen::VectorXd query = emb.row(Index(i)).transpose().cast<double>();
      classes.clear();
      for (const auto& m : retrieve(state.codebook, query, config.k)) classes.push_back(m.entry->class_id);
      out.push_back(fuse_decision(classes, pd, config.k, config.theta));
    }
  }
  return out;
}

PeriodReport evaluate_period(const ModelState& state, std::span<const Sample> month_data,
                             const RunConfig& config) {
  PeriodReport r;
  r.month = month_data.empty() ? 0 : month_data.front().month;
  const auto fused = fused_probabilities(state, month_data, config);
  for (std::size_t i = 0; i < month_data.size(); ++i)
    r.confusion.add(month_data[i].y_bin, fused[i] >= 0.5 ? 1 : 0);
  r.metrics = evaluate(r.confusion);
  r.codebook_total = state.codebook.size();
  for (const auto& [id, entries] : state.codebook.classes()) r.codebook_per_class[id] = entries.size();
  return r;
}

std::vector<Sample> compose_finetune_set(std::span<const Sample> labeled,
                                         std::span<const Sample> replay, double benign_ratio,
                                         std::uint64_t seed) {
  std::vector<Sample> out(labeled.begin(), labeled.end());
  out.insert(out.end(), replay.begin(), replay.end());
  std::vector<const Sample*> pool;
  for (const auto& s : replay)
    if (s.y_bin == 0) pool.push_back(&s);
  if (pool.empty())
    for (const auto& s : labeled)
      if (s.y_bin == 0) pool.push_back(&s);
  if (pool.empty() || out.empty()) return out;

  std::size_t benign = 0;
  for (const auto& s : out) benign += s.y_bin == 0 ? 1 : 0;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  while (double(benign) < benign_ratio * double(out.size())) {
    out.push_back(*pool[pick(rng)]);
    ++benign;
  }
  return out;
}

PeriodReport continual_step(ModelState& state, std::span<const Sample> month_data,
                            const RunConfig& config, LabelOracle& oracle, std::uint32_t month,
                            const RunHooks& hooks) {
  auto trace = [&](std::string_view step) {
    if (hooks.trace) hooks.trace(step, month);
  };

  trace("evaluate");
  PeriodReport report = evaluate_period(state, month_data, config);
  report.month = month;
  if (config.budget == 0 || month_data.empty()) return report;

  trace("score");
  const auto batch = to_batch<float>(month_data);
  const Matrix<float> logits = infer(state.sampler.f_mul, batch.x);
  const Vector<float> p = infer(state.sampler.f_bin, logits).col(0);
  const Vector<float> s_bin = boundary_score<float>(p);
  const Vector<float> s_mul = config.fmul_enabled ? vacuity(logits) : s_bin;
  std::vector<ScoredSample> scored(month_data.size());
  for (std::size_t i = 0; i < month_data.size(); ++i)
    scored[i] = {month_data[i].id, double(s_mul(Index(i))), double(s_bin(Index(i))), p(Index(i)) < 0.5f};

  trace("select");
  const auto ids = select_budget(scored, config.budget_policy());

  trace("label");
  oracle.begin_period(config.budget);
  const auto labels = oracle.label(ids);
  std::unordered_map<std::uint64_t, const Sample*> by_id;
  for (const auto& s : month_data) by_id[s.id] = &s;
  std::vector<Sample> labeled;
  labeled.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Sample s = *by_id.at(ids[i]);
    s.y_bin = labels[i].y_bin;
    s.y_mul = labels[i].y_mul;
    labeled.push_back(std::move(s));
  }
  report.labels_used = ids.size();
  report.selected = ids;

  trace("bank");
  const auto replay = replay_draw(state.bank, config.replay_fraction,
                                  derive_seed(config.seed, kSeedReplay, month));
  state.bank.append(labeled, month);

  const auto train_set = compose_finetune_set(labeled, replay, config.finetune_benign_ratio,
                                              derive_seed(config.seed, kSeedBalance, month));
  const auto train = to_batch<float>(train_set);
  const auto settings = config.continual_settings();

  trace("finetune_sampler");
  std::mt19937_64 sampler_rng(derive_seed(config.seed, kSeedSamplerTune, month));
  const auto rule = config.fmul_enabled ? config.sampler_freeze : FreezeRule::freeze_mul;
  finetune_sampler(state.sampler, train, settings, rule, sampler_rng);

  trace("finetune_detector");
  if (!train.empty()) {
    std::mt19937_64 detector_rng(derive_seed(config.seed, kSeedDetectorTune, month));
    train_detector(state.detector, train, inverse_frequency_weights<float>(train.y_bin), settings,
                   detector_rng);
  }

  trace("codebook");
  const auto candidates = codebook_candidates(state.detector, labeled);
  state.codebook.update(candidates);

  report.codebook_total = state.codebook.size();
  report.codebook_per_class.clear();
  for (const auto& [id, entries] : state.codebook.classes()) report.codebook_per_class[id] = entries.size();
  return report;
}

RunReport run_continual(ModelState state, const RunConfig& config, std::span<const Sample> stream,
                        const RunHooks& hooks) {
  RunReport report;
  report.config = config;
  LabelOracle oracle(stream);
  const auto months = month_count(stream);
  for (std::uint32_t m = config.static_months; m < months; ++m) {
    const auto data = month_slice(stream, m);
    auto period = continual_step(state, data, config, oracle, m, hooks);
    if (hooks.on_period) hooks.on_period(period);
    report.months.push_back(std::move(period));
  }
  report.averages = average_metrics(report.months);
  return report;
}

RunReport run_experiment(const RunConfig& config, std::span<const Sample> stream, const RunHooks& hooks) {
  config.validate();
  const auto months = month_count(stream);
  if (months <= config.static_months)
    throw ContractError("stream needs months beyond the " + std::to_string(config.static_months) +
                        " static months");
  std::vector<Sample> static_data;
  for (const auto& s : stream)
    if (s.month < config.static_months) static_data.push_back(s);
  if (hooks.trace) hooks.trace("static", 0);
  auto state = static_phase(config, static_data, resolve_classes(config, stream));
  return run_continual(std::move(state), config, stream, hooks);
}

}  // namespace ugsr
