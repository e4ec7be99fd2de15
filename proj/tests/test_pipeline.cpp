#include <doctest.h>

#include <sstream>

#include "support/oracles.hpp"
#include "ugsr/pipeline.hpp"
#include "ugsr/report.hpp"

using namespace ugsr;

namespace {

DriftConfig tiny_stream() {
  DriftConfig d;
  d.dim = 8;
  d.families = 4;
  d.months = 5;
  d.static_months = 3;
  d.per_month = 200;
  d.seed = 3;
  return d;
}

RunConfig tiny_run() {
  RunConfig c;
  c.budget = 10;
  c.static_months = 3;
  c.hidden_width = 16;
  c.static_epochs = 3;
  c.static_batch = 64;
  c.static_optimizer = OptimKind::adam;
  c.static_lr = 1e-3;
  c.continual_epochs = 2;
  c.continual_batch = 64;
  c.seed = 7;
  return c;
}

const Stream& stream() {
  static const Stream s = generate_stream(tiny_stream());
  return s;
}

std::vector<Sample> static_part(const RunConfig& c) {
  std::vector<Sample> out;
  for (const auto& s : stream())
    if (s.month < c.static_months) out.push_back(s);
  return out;
}

std::string per_month_text(const RunReport& r) {
  std::ostringstream o;
  write_per_month(o, r);
  return o.str();
}

}  // namespace

TEST_CASE("pipeline: steps run in order and evaluation comes first") {
  std::vector<std::pair<std::string, std::uint32_t>> trace;
  RunHooks hooks;
  hooks.trace = [&](std::string_view s, std::uint32_t m) { trace.emplace_back(std::string(s), m); };
  run_experiment(tiny_run(), stream(), hooks);
  const std::vector<std::string> step{"evaluate", "score", "select", "label", "bank",
                                      "finetune_sampler", "finetune_detector", "codebook"};
  REQUIRE(trace.size() == 1 + 2 * step.size());
  CHECK(trace[0].first == "static");
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t i = 0; i < step.size(); ++i) {
      CHECK(trace[1 + m * step.size() + i].first == step[i]);
      CHECK(trace[1 + m * step.size() + i].second == 3 + m);
    }
}

TEST_CASE("pipeline: budgets, bank growth and confusion totals") {
  const auto cfg = tiny_run();
  auto state = static_phase(cfg, static_part(cfg), resolve_classes(cfg, stream()));
  for (const auto& [id, entries] : state.codebook.classes())
    CHECK(entries.size() <= state.codebook.capacity_of(id));
  LabelOracle oracle(stream());
  std::size_t bank = 0;
  for (std::uint32_t m = 3; m < 5; ++m) {
    const auto data = month_slice(stream(), m);
    const auto r = continual_step(state, data, cfg, oracle, m);
    CHECK(r.labels_used <= cfg.budget);
    CHECK(r.selected.size() == r.labels_used);
    bank += r.labels_used;
    CHECK(state.bank.size() == bank);
    std::uint64_t malware = 0;
    for (const auto& s : data) malware += s.y_bin;
    CHECK(r.confusion.tp + r.confusion.fn == malware);
    CHECK(r.confusion.tn + r.confusion.fp == data.size() - malware);
    for (const auto& [id, n] : r.codebook_per_class) CHECK(n <= state.codebook.capacity_of(id));
  }
  CHECK(oracle.total_consumed() == bank);
}

TEST_CASE("pipeline: zero budget only evaluates") {
  auto cfg = tiny_run();
  cfg.budget = 0;
  std::vector<std::string> steps;
  RunHooks hooks;
  hooks.trace = [&](std::string_view s, std::uint32_t) { steps.emplace_back(s); };
  const auto r = run_experiment(cfg, stream(), hooks);
  CHECK(steps == std::vector<std::string>{"static", "evaluate", "evaluate"});
  for (const auto& m : r.months) {
    CHECK(m.labels_used == 0);
    CHECK(m.codebook_total == r.months.front().codebook_total);
  }
}

TEST_CASE("pipeline: identical seeds give identical reports") {
  const auto a = run_experiment(tiny_run(), stream());
  const auto b = run_experiment(tiny_run(), stream());
  CHECK(per_month_text(a) == per_month_text(b));
  auto other = tiny_run();
  other.seed = 8;
  CHECK(per_month_text(run_experiment(other, stream())) != per_month_text(a));
}

TEST_CASE("pipeline: retrieval switch changes evaluation only") {
  auto off = tiny_run();
  off.retrieval_enabled = false;
  const auto a = run_experiment(tiny_run(), stream());
  const auto b = run_experiment(off, stream());
  REQUIRE(a.months.size() == b.months.size());
  for (std::size_t i = 0; i < a.months.size(); ++i) {
    CHECK(a.months[i].selected == b.months[i].selected);
    CHECK(a.months[i].labels_used == b.months[i].labels_used);
    CHECK(a.months[i].codebook_per_class == b.months[i].codebook_per_class);
  }
}

TEST_CASE("pipeline: fused decisions match a hand trace") {
  const auto cfg = tiny_run();
  const auto state = static_phase(cfg, static_part(cfg), resolve_classes(cfg, stream()));
  const auto month = month_slice(stream(), 3);
  const std::vector<Sample> micro(month.begin(), month.begin() + 20);
  const auto fused = fused_probabilities(state, micro, cfg);
  auto plain = cfg;
  plain.retrieval_enabled = false;
  const auto raw = fused_probabilities(state, micro, plain);
  for (std::size_t i = 0; i < micro.size(); ++i) {
    const Eigen::MatrixXf x = micro[i].features.transpose();
    const double p = predict(state.detector, x)(0);
    CHECK(raw[i] == doctest::Approx(p).epsilon(1e-6));
    const Eigen::VectorXd q = embed(state.detector, x).row(0).transpose().cast<double>();
    std::vector<std::uint32_t> classes;
    for (const auto& m : oracle::exhaustive_retrieve(state.codebook, q, cfg.k)) classes.push_back(m.class_id);
    CHECK(fused[i] == doctest::Approx(oracle::fuse_truth(classes, p, cfg.theta)).epsilon(1e-6));
  }

  const auto no_ret = evaluate_period(state, month, plain);
  Confusion c;
  for (std::size_t i = 0; i < month.size(); ++i) {
    const Eigen::MatrixXf x = month[i].features.transpose();
    c.add(month[i].y_bin, predict(state.detector, x)(0) >= 0.5f ? 1 : 0);
  }
  CHECK(no_ret.confusion == c);
}

TEST_CASE("pipeline: all-benign month leaves TPR absent") {
  const auto cfg = tiny_run();
  const auto state = static_phase(cfg, static_part(cfg), resolve_classes(cfg, stream()));
  std::vector<Sample> benign;
  for (const auto& s : month_slice(stream(), 4))
    if (s.y_bin == 0) benign.push_back(s);
  const auto r = evaluate_period(state, benign, cfg);
  CHECK_FALSE(r.metrics.tpr.has_value());
  CHECK(r.metrics.tnr.has_value());
  CHECK_FALSE(r.metrics.macc.has_value());
}

TEST_CASE("pipeline: disabling F_mul skips its training and scores by s_bin") {
  auto cfg = tiny_run();
  cfg.fmul_enabled = false;
  const auto data = static_part(cfg);
  const auto classes = resolve_classes(cfg, stream());
  const auto state = static_phase(cfg, data, classes);
  CHECK(state.logs.sampler.stage1.empty());
  CHECK(state.logs.sampler.stage2.size() == cfg.static_epochs);
  // F_mul stays at its initialization, which the enabled run changes.
  auto on = tiny_run();
  const auto trained = static_phase(on, data, classes);
  CHECK_FALSE(trained.sampler.f_mul == state.sampler.f_mul);
  CHECK(trained.detector.encoder == state.detector.encoder);

  // With s_mul = s_bin the selection is the plain top-B by s_bin.
  const auto month = month_slice(stream(), 3);
  const auto x = to_batch<float>(month).x;
  const Vector<float> p = sampler_probability(state.sampler, x);
  const Vector<float> s_bin = boundary_score<float>(p);
  std::vector<ScoredSample> scored;
  for (std::size_t i = 0; i < month.size(); ++i)
    scored.push_back({month[i].id, s_bin(Index(i)), s_bin(Index(i)), p(Index(i)) < 0.5f});
  auto copy = state;
  LabelOracle oracle(stream());
  const auto r = continual_step(copy, month, cfg, oracle, 3);
  auto want = oracle::brute_select(scored, cfg.budget, cfg.mu, cfg.benign_quota);
  auto got = r.selected;
  std::sort(got.begin(), got.end());
  CHECK(got == want);
}

TEST_CASE("compose_finetune_set: benign share reaches the target") {
  const auto month = month_slice(stream(), 3);
  std::vector<Sample> labeled, replay;
  for (const auto& s : month) {
    if (s.y_bin == 1 && labeled.size() < 10) labeled.push_back(s);
    else if (s.y_bin == 0 && replay.size() < 3) replay.push_back(s);
  }
  const auto set = compose_finetune_set(labeled, replay, 0.4, 1);
  std::size_t benign = 0;
  for (const auto& s : set) benign += s.y_bin == 0;
  CHECK(double(benign) >= 0.4 * double(set.size()));
  CHECK(double(benign - 1) < 0.4 * double(set.size() - 1));
  for (const auto& s : set)
    if (s.y_bin == 0)
      CHECK(std::any_of(replay.begin(), replay.end(), [&](const Sample& r) { return r.id == s.id; }));
  CHECK(compose_finetune_set(labeled, {}, 0.4, 1).size() == labeled.size());
  CHECK(compose_finetune_set(labeled, replay, 0.4, 1) == set);
}

TEST_CASE("config: every field round-trips through key=value") {
  RunConfig c = tiny_run();
  c.mu = 0.25;
  c.geometry.orthogonal = 0.75;
  c.loss.temperature = 0.2;
  c.retrieval_enabled = false;
  c.sampler_freeze = FreezeRule::freeze_mul;
  c.classes = 9;
  std::stringstream buf;
  write_config(buf, c);
  const auto back = read_config(buf);
  CHECK(back.to_pairs() == c.to_pairs());

  std::stringstream unknown("budget=3\nwarp=9\n");
  CHECK_THROWS_AS(read_config(unknown), ConfigError);
  std::stringstream partial("budget=3\n");
  const auto p = read_config(partial);
  CHECK(p.budget == 3);
  CHECK(p.mu == RunConfig{}.mu);
}

TEST_CASE("config: validation") {
  auto c = RunConfig{};
  c.mu = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.theta = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.replay_fraction = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());
}

TEST_CASE("averages are plain means of the monthly values") {
  std::vector<PeriodReport> months(3);
  months[0].metrics = evaluate({8, 3, 87, 2});
  months[1].metrics = evaluate({5, 0, 90, 5});
  months[2].metrics = evaluate({0, 2, 98, 0});  // no malware: tpr absent
  const auto avg = average_metrics(months);
  CHECK(*avg.tnr == doctest::Approx((87.0 / 90 + 1.0 + 0.98) / 3));
  CHECK(*avg.tpr == doctest::Approx((0.8 + 0.5) / 2));
  CHECK(*avg.macc == doctest::Approx((*months[0].metrics.macc + *months[1].metrics.macc) / 2));
  CHECK_FALSE(average_metrics({}).tpr.has_value());
}
