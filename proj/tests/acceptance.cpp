// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "ugsr/codebook.hpp"
#include "ugsr/log.hpp"
#include "ugsr/metrics.hpp"
#include "ugsr/pipeline.hpp"
#include "ugsr/profiles.hpp"
#include "ugsr/report.hpp"
#include "ugsr/sampler.hpp"

using namespace ugsr;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(const std::string& name, bool ok, const std::string& detail, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%s %-24s %s [%.1fs]\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

void metric_arithmetic() {
  const auto t0 = Clock::now();
  const double m = *macc(0.9295, 0.9558);
  bool ok = std::abs(m - 0.94265) < 1e-12 && std::abs(100 * m - 94.26) <= 0.005;
  double worst = 0;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng), b = u(rng);
    worst = std::max(worst, std::abs(*f2(a, b) - oracle::f2_def(a, b)));
    worst = std::max(worst, std::abs(*gmean(a, b) - oracle::gmean_def(a, b)));
    worst = std::max(worst, std::abs(*macc(a, b) - oracle::macc_def(a, b)));
  }
  ok = ok && worst <= 1e-9 && *f2(0.0, 0.0) == 0.0;
  verdict("metric-arithmetic", ok, fmt("macc=%.5f (x100 %.3f vs 94.26); max |f2,gmean - oracle| = %.1e", m, 100 * m, worst), t0);
}

void gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const auto& [name, rep] : gradcheck::run(seed)) {
      checked += rep.checked;
      skipped += rep.skipped;
      if (rep.max_rel_error > worst) {
        worst = rep.max_rel_error;
        worst_name = name + " seed " + std::to_string(seed);
      }
    }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool ok = worst < gradcheck::kTolerance && checked > 0 && skipped * 5 <= checked + skipped && secs < 30;
  verdict("gradient-suite", ok,
          fmt("20 seeds, %zu coords (%zu kink-skipped), h=%g, max rel err %.2e (%s)", checked, skipped,
              gradcheck::kStep, worst, worst_name.c_str()),
          t0);
}

void evidential_oracle() {
  const auto t0 = Clock::now();
  auto loss = [](double a0, double a1) {
    Matrix<double> alpha(1, 2), y(1, 2);
    alpha << a0, a1;
    y << 1, 0;
    return evidential_loss<double>(alpha, y).value;
  };
  const double l1 = loss(1, 1), l2 = loss(100, 1), l3 = loss(1, 100);
  const double e1 = oracle::evidential_int({1, 1}, 0), e2 = oracle::evidential_int({100, 1}, 0),
               e3 = oracle::evidential_int({1, 100}, 0);
  const bool ok = std::abs(l1 - 1.0) < 1e-6 && std::abs(l2 - 0.01) < 1e-6 && std::abs(l3 - e3) < 1e-6 &&
                  std::abs(l1 - e1) < 1e-9 && std::abs(l2 - e2) < 1e-9 && std::abs(l3 - 5.1874) < 1e-4;
  verdict("evidential-oracle", ok, fmt("alpha (1,1) -> %.7f, (100,1) -> %.7f, (1,100) -> %.7f (H_100 = %.7f)", l1, l2, l3, e3), t0);
}

void sampler_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> grid(0, 20);
  int mismatches = 0, quota_misses = 0, feasible = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = std::size_t(rng() % 201);
    const auto b = std::size_t(rng() % 51);
    const double mu = std::array{0.0, 0.5, 1.0}[t % 3];
    std::vector<ScoredSample> s(n);
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < n; ++i) s[i] = {ids[i], grid(rng) / 20.0, grid(rng) / 20.0, rng() % 4 == 0};
    const BudgetPolicy policy{b, mu, 0.10};
    auto got = select_budget(s, policy);
    std::sort(got.begin(), got.end());
    if (got != oracle::brute_select(s, b, mu, 0.10)) ++mismatches;
    std::size_t benign = 0;
    for (const auto& x : s) benign += x.benign;
    if (n > b && benign >= policy.quota_count()) {
      ++feasible;
      const std::set<std::uint64_t> chosen(got.begin(), got.end());
      std::size_t picked = 0;
      for (const auto& x : s) picked += x.benign && chosen.count(x.id);
      if (picked < policy.quota_count()) ++quota_misses;
    }
  }
  verdict("sampler-oracle", mismatches == 0 && quota_misses == 0,
          fmt("1000 instances: %d oracle mismatches; quota met in %d/%d feasible", mismatches,
              feasible - quota_misses, feasible),
          t0);
}

std::vector<CodebookCandidate> candidates(std::mt19937_64& rng, std::size_t n, Eigen::Index dim) {
  std::normal_distribution<double> normal(0, 1);
  std::vector<CodebookCandidate> out(n);
  for (auto& c : out) {
    c.class_id = std::uint32_t(rng() % 13);
    c.vector = Eigen::VectorXd(dim);
    for (Eigen::Index i = 0; i < dim; ++i) c.vector(i) = normal(rng);
    c.confidence = double(rng() % 21) / 20;
  }
  return out;
}

void codebook_invariants() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  const CodebookCapacity cap{50, 3};
  Codebook cb(8, cap, {});
  std::size_t violations = 0;
  for (int op = 0; op < 10000; ++op) {
    const auto c = candidates(rng, 1 + rng() % 16, 8);
    if (op % 97 == 0)
      cb = build_codebook(8, cap, {}, c);
    else
      cb.update(c);
    for (const auto& [id, entries] : cb.classes())
      if (entries.size() > cb.capacity_of(id)) ++violations;
  }

  std::size_t retrieval_mismatch = 0, queries = 0;
  for (int t = 0; t < 30; ++t) {
    const auto book = build_codebook(8, cap, {}, candidates(rng, 500, 8));
    for (int q = 0; q < 20; ++q) {
      Eigen::VectorXd query = Eigen::VectorXd::Random(8);
      if (q == 0) query.setZero();
      for (std::size_t k : {1, 3, 5}) {
        ++queries;
        const auto got = retrieve(book, query, k);
        const auto want = oracle::exhaustive_retrieve(book, query, k);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i)
          same = got[i].entry->class_id == want[i].class_id && got[i].entry->sequence == want[i].sequence;
        retrieval_mismatch += same ? 0 : 1;
      }
    }
  }

  std::size_t table_rows = 0, table_mismatch = 0;
  for (std::uint32_t a = 0; a < 4; ++a)
    for (std::uint32_t b = 0; b < 4; ++b)
      for (std::uint32_t c = 0; c < 4; ++c)
        for (double p : {0.2, 0.7}) {
          const std::vector<std::uint32_t> m{a, b, c};
          ++table_rows;
          table_mismatch += fuse_decision(m, p, 3, 3) != oracle::fuse_truth(m, p, 3);
        }
  verdict("codebook-invariants", violations == 0 && retrieval_mismatch == 0 && table_mismatch == 0,
          fmt("10^4 ops: %zu capacity violations; retrieve k=1,3,5: %zu/%zu mismatches; fuse table: %zu/%zu mismatches",
              violations, retrieval_mismatch, queries, table_mismatch, table_rows),
          t0);
}

void geometry() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0, 1);
  std::uniform_real_distribution<double> lambda(0, 1);
  int pull_fail = 0;
  double worst_cos = 0;
  for (int t = 0; t < 1000; ++t) {
    Eigen::VectorXd v(512), c(512);
    for (Eigen::Index i = 0; i < 512; ++i) {
      v(i) = normal(rng);
      c(i) = normal(rng);
    }
    const double lam = t == 0 ? 1.0 : std::max(lambda(rng), 1e-6);
    if (!((pull_to_centroid(v, c, lam) - c).norm() < (v - c).norm())) ++pull_fail;
    const Eigen::VectorXd unit = c.normalized();
    worst_cos = std::max(worst_cos, std::abs(cosine_similarity(orthogonalize(v, unit, 1.0), unit)));
  }
  verdict("geometry", pull_fail == 0 && worst_cos < 1e-6,
          fmt("1000 vectors (512-d): pull failures %d; max |cos(v', c)| = %.1e", pull_fail, worst_cos), t0);
}

// ---------------------------------------------------------------------------
// Synthetic stream experiments

struct Arm {
  std::string name;
  std::function<void(RunConfig&)> tweak;
};

std::string csv_bytes(const RunReport& r) {
  std::ostringstream o;
  write_per_month(o, r);
  write_summary(o, r);
  return o.str();
}

struct SeedResult {
  std::map<std::string, MetricSet> arms;
  std::string ugsr_csv;
};

SeedResult run_seed(std::uint64_t seed, const std::vector<Arm>& arms) {
  DriftConfig drift;
  drift.seed = seed;
  const auto stream = generate_stream(drift);
  RunConfig base = desk_profile();
  base.seed = seed;
  base.budget = 10;
  std::vector<Sample> static_data;
  for (const auto& s : stream)
    if (s.month < base.static_months) static_data.push_back(s);
  const auto state = static_phase(base, static_data, resolve_classes(base, stream));
  SeedResult out;
  for (const auto& arm : arms) {
    RunConfig c = base;
    arm.tweak(c);
    const auto report = run_continual(state, c, stream);
    out.arms[arm.name] = report.averages;
    if (arm.name == "ugsr") out.ugsr_csv = csv_bytes(report);
  }
  return out;
}

void experiments() {
  const std::vector<Arm> arms{
      {"static", [](RunConfig& c) { c.budget = 0; c.retrieval_enabled = false; }},
      {"ugsr", [](RunConfig&) {}},
      {"no-retrieval", [](RunConfig& c) { c.retrieval_enabled = false; }},
      {"B2", [](RunConfig& c) { c.budget = 2; }},
      {"B50", [](RunConfig& c) { c.budget = 50; }},
  };
  const auto t0 = Clock::now();
  std::map<std::string, std::vector<double>> macc_by, tpr_by;
  std::string seed1_csv;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = run_seed(seed, arms);
    std::printf("  seed %llu:", static_cast<unsigned long long>(seed));
    for (const auto& a : arms) {
      const auto& m = r.arms.at(a.name);
      macc_by[a.name].push_back(m.macc.value_or(0));
      tpr_by[a.name].push_back(m.tpr.value_or(0));
      std::printf(" %s %.3f/%.3f", a.name.c_str(), m.tpr.value_or(0), m.macc.value_or(0));
    }
    std::printf("  (tpr/macc)\n");
    std::fflush(stdout);
    if (seed == 1) seed1_csv = r.ugsr_csv;
  }
  const double e2e_secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::map<std::string, double> mm, mt;
  for (const auto& a : arms) {
    mm[a.name] = median(macc_by[a.name]);
    mt[a.name] = median(tpr_by[a.name]);
  }
  const bool a_ok = mm["ugsr"] >= mm["no-retrieval"] && mm["ugsr"] >= mm["static"];
  const bool b_ok = mt["ugsr"] - mt["static"] >= 0.05;
  verdict("e2e-synthetic", a_ok && b_ok && e2e_secs < 25 * 60,
          fmt("median mACC ugsr %.4f, no-retrieval %.4f, static %.4f (a:%s); median TPR ugsr %.4f vs static %.4f, "
              "+%.1f pp (b:%s)",
              mm["ugsr"], mm["no-retrieval"], mm["static"], a_ok ? "ok" : "no", mt["ugsr"], mt["static"],
              100 * (mt["ugsr"] - mt["static"]), b_ok ? "ok" : "no"),
          t0);
  verdict("budget-monotonicity", mm["B2"] <= mm["ugsr"] && mm["ugsr"] <= mm["B50"],
          fmt("median mACC B=2 %.4f, B=10 %.4f, B=50 %.4f", mm["B2"], mm["ugsr"], mm["B50"]), t0);

  const auto t1 = Clock::now();
  DriftConfig drift;
  drift.seed = 1;
  RunConfig cfg = desk_profile();
  cfg.seed = 1;
  cfg.budget = 10;
  const auto a = csv_bytes(run_experiment(cfg, generate_stream(drift)));
  const auto b = csv_bytes(run_experiment(cfg, generate_stream(drift)));
  verdict("determinism", a == b && a == seed1_csv,
          fmt("two fresh runs (seed 1, B=10): %s; matches the shared-static run: %s",
              a == b ? "byte-identical" : "differ", a == seed1_csv ? "yes" : "no"),
          t1);
}

}  // namespace

int main() {
  log::set_level(log::Level::quiet);
  const auto t0 = Clock::now();
  metric_arithmetic();
  gradient_suite();
  evidential_oracle();
  sampler_oracle();
  codebook_invariants();
  geometry();
  experiments();
  std::printf("%s: %d failed, total %.0fs\n", failures ? "FAIL" : "PASS", failures,
              std::chrono::duration<double>(Clock::now() - t0).count());
  return failures ? 1 : 0;
}
