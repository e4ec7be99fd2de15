#include "ugsr/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ugsr {

std::size_t BudgetPolicy::multiclass_share() const {
  return static_cast<std::size_t>(std::floor(mu * double(budget) + 1e-9));
}

std::size_t BudgetPolicy::quota_count() const {
  return static_cast<std::size_t>(std::ceil(benign_quota * double(budget) - 1e-9));
}

namespace {

struct Pick {
  std::size_t index;
  double score;  // the score the sample was picked by
};

// Strict "ranks before": higher score, then smaller id.
bool ranks_before(double sa, std::uint64_t ia, double sb, std::uint64_t ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

}  // namespace

std::vector<std::uint64_t> select_budget(std::span<const ScoredSample> scored,
                                         const BudgetPolicy& policy) {
  policy.validate();
  const std::size_t n = scored.size();
  if (n <= policy.budget) {
    std::vector<std::uint64_t> all;
    all.reserve(n);
    for (const auto& s : scored) all.push_back(s.id);
    std::sort(all.begin(), all.end());
    return all;
  }

  std::vector<std::size_t> by_mul(n), by_bin(n);
  std::iota(by_mul.begin(), by_mul.end(), std::size_t{0});
  std::iota(by_bin.begin(), by_bin.end(), std::size_t{0});
  std::sort(by_mul.begin(), by_mul.end(), [&](std::size_t a, std::size_t b) {
    return ranks_before(scored[a].s_mul, scored[a].id, scored[b].s_mul, scored[b].id);
  });
  std::sort(by_bin.begin(), by_bin.end(), [&](std::size_t a, std::size_t b) {
    return ranks_before(scored[a].s_bin, scored[a].id, scored[b].s_bin, scored[b].id);
  });

  std::vector<bool> taken(n, false);
  std::vector<Pick> picks;
  picks.reserve(policy.budget);
  for (std::size_t r = 0; r < n && picks.size() < policy.multiclass_share(); ++r) {
    taken[by_mul[r]] = true;
    picks.push_back({by_mul[r], scored[by_mul[r]].s_mul});
  }
  for (std::size_t r = 0; r < n && picks.size() < policy.budget; ++r) {
    if (taken[by_bin[r]]) continue;
    taken[by_bin[r]] = true;
    picks.push_back({by_bin[r], scored[by_bin[r]].s_bin});
  }

  const std::size_t quota = policy.quota_count();
  std::size_t benign = 0;
  for (const auto& p : picks) benign += scored[p.index].benign ? 1 : 0;
  if (benign < quota) {
    // Malware picks, worst-ranked first.
    std::vector<std::size_t> malware;
    for (std::size_t i = 0; i < picks.size(); ++i)
      if (!scored[picks[i].index].benign) malware.push_back(i);
    std::sort(malware.begin(), malware.end(), [&](std::size_t a, std::size_t b) {
      return ranks_before(picks[b].score, scored[picks[b].index].id, picks[a].score,
                          scored[picks[a].index].id);
    });
    std::size_t next_malware = 0;
    for (std::size_t r = 0; r < n && benign < quota && next_malware < malware.size(); ++r) {
      const std::size_t cand = by_bin[r];
      if (taken[cand] || !scored[cand].benign) continue;
      Pick& victim = picks[malware[next_malware++]];
      taken[victim.index] = false;
      taken[cand] = true;
      victim = {cand, scored[cand].s_bin};
      ++benign;
    }
  }

  std::vector<std::uint64_t> ids;
  ids.reserve(picks.size());
  for (const auto& p : picks) ids.push_back(scored[p.index].id);
  return ids;
}

}  // namespace ugsr
