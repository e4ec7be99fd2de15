#include "ugsr/datastream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "ugsr/errors.hpp"
#include "ugsr/seed.hpp"

namespace ugsr {

void validate_sample(const Sample& s) {
  if (s.y_bin != 0 && s.y_bin != 1) throw ConfigError("y_bin must be 0 or 1");
  if (s.y_mul < 0) throw ConfigError("y_mul must be non-negative");
  if ((s.y_bin == 0) != (s.y_mul == 0))
    throw ConfigError("label mismatch: y_bin = 0 exactly when y_mul = 0");
  if (!s.features.allFinite()) throw ConfigError("non-finite feature value");
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view field, const char* what, std::size_t line) {
  field = trim(field);
  T value{};
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, value);
  if (field.empty() || res.ec != std::errc() || res.ptr != end)
    throw ParseError(std::string("bad ") + what + " value '" + std::string(field) + "'", line);
  return value;
}

}  // namespace

Stream read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing CSV header", 1);
  const auto header = split(trim(line));
  std::size_t col = 0;
  bool has_id = false;
  if (!header.empty() && trim(header[0]) == "id") {
    has_id = true;
    col = 1;
  }
  const char* required[] = {"month", "y_bin", "y_mul"};
  for (const char* name : required) {
    if (col >= header.size() || trim(header[col]) != name)
      throw ParseError(std::string("CSV header: expected column '") + name + "'", 1);
    ++col;
  }
  const std::size_t dim = header.size() - col;
  for (std::size_t f = 0; f < dim; ++f)
    if (trim(header[col + f]) != "f" + std::to_string(f))
      throw ParseError("CSV header: expected feature column f" + std::to_string(f), 1);

  Stream out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line));
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       lineno);
    Sample s;
    std::size_t c = 0;
    s.id = has_id ? parse_number<std::uint64_t>(fields[c++], "id", lineno) : std::uint64_t(out.size());
    s.month = parse_number<std::uint32_t>(fields[c++], "month", lineno);
    s.y_bin = parse_number<int>(fields[c++], "y_bin", lineno);
    s.y_mul = parse_number<int>(fields[c++], "y_mul", lineno);
    s.features.resize(Eigen::Index(dim));
    for (std::size_t f = 0; f < dim; ++f)
      s.features(Eigen::Index(f)) = parse_number<float>(fields[c++], "feature", lineno);
    try {
      validate_sample(s);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
    out.push_back(std::move(s));
  }
  return out;
}

Stream load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_csv(in);
}

void write_csv(std::ostream& out, std::span<const Sample> samples) {
  const Eigen::Index dim = samples.empty() ? 0 : samples.front().features.size();
  out << "id,month,y_bin,y_mul";
  for (Eigen::Index f = 0; f < dim; ++f) out << ",f" << f;
  out << '\n';
  char buf[32];
  for (const auto& s : samples) {
    if (s.features.size() != dim) throw ConfigError("inconsistent feature dimension");
    out << s.id << ',' << s.month << ',' << s.y_bin << ',' << s.y_mul;
    for (Eigen::Index f = 0; f < dim; ++f) {
      std::snprintf(buf, sizeof buf, "%.9g", double(s.features(f)));
      out << ',' << buf;
    }
    out << '\n';
  }
}

void save_csv(const std::string& path, std::span<const Sample> samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_csv(out, samples);
  if (!out) throw std::runtime_error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Synthetic drifting stream

void DriftConfig::validate() const {
  if (dim < 2) throw ConfigError("feature dimension must be at least 2");
  if (families < 1) throw ConfigError("need at least one malware family");
  if (months < 2) throw ConfigError("need at least 2 months (static + continual)");
  if (static_months < 1 || static_months >= months)
    throw ConfigError("static months must leave at least one continual month");
  if (!(ratio > 0)) throw ConfigError("benign:malware ratio must be > 0");
  if (per_month < 1) throw ConfigError("samples per month must be positive");
  if (benign_modes < 1) throw ConfigError("need at least one benign mode");
  if (inheritance < 0 || inheritance > 1) throw ConfigError("inheritance must lie in [0, 1]");
  if (signature_size < 1 || Eigen::Index(signature_size) > dim / 2)
    throw ConfigError("signature size must lie in [1, dim/2]");
  if (!birth_months.empty() && birth_months.size() != families)
    throw ConfigError("birth_months needs one entry per family");
  for (std::uint32_t f = 1; f <= families; ++f)
    if (birth_month(f) >= months) throw ConfigError("family born after the last month");
  bool any_static = false;
  for (std::uint32_t f = 1; f <= families; ++f) any_static |= birth_month(f) < static_months;
  if (!any_static) throw ConfigError("at least one family must exist during the static months");
}

std::uint32_t DriftConfig::birth_month(std::uint32_t family) const {
  if (!birth_months.empty()) return birth_months.at(family - 1);
  const std::uint32_t early = (families + 1) / 2;
  if (family <= early) return 0;
  const std::uint32_t late = families - early;
  const std::uint32_t i = family - early - 1;
  return static_months + (i * (months - static_months)) / late;
}

namespace {

Eigen::VectorXd random_direction(Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
  return v / v.norm();
}

std::vector<Eigen::Index> pick_features(std::size_t count, Eigen::Index lo, Eigen::Index hi,
                                        std::mt19937_64& rng) {
  std::vector<Eigen::Index> pool(std::size_t(hi - lo));
  std::iota(pool.begin(), pool.end(), lo);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(count, pool.size()));
  return pool;
}

}  // namespace

Stream generate_stream(const DriftConfig& config) {
  config.validate();
  const Eigen::Index d = config.dim;
  const Eigen::Index half = d / 2;
  std::mt19937_64 layout_rng(derive_seed(config.seed, 0x6c61796f7574ULL));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Eigen::VectorXd> benign_center, benign_velocity;
  for (std::size_t m = 0; m < config.benign_modes; ++m) {
    Eigen::VectorXd c(d);
    for (Eigen::Index i = 0; i < d; ++i) c(i) = config.benign_spread * normal(layout_rng);
    benign_center.push_back(c);
    benign_velocity.push_back(config.drift_velocity * random_direction(d, layout_rng));
  }

  std::vector<Eigen::VectorXd> family_center(config.families + 1), family_velocity(config.families + 1);
  std::vector<std::uint32_t> early_families;
  std::uniform_int_distribution<std::size_t> mode(0, config.benign_modes - 1);
  for (std::uint32_t f = 1; f <= config.families; ++f) {
    if (config.birth_month(f) >= config.static_months) continue;
    Eigen::VectorXd c = benign_center[mode(layout_rng)];
    for (const auto i : pick_features(config.signature_size, 0, half, layout_rng)) c(i) += config.signature_amplitude;
    family_center[f] = c;
    early_families.push_back(f);
  }
  std::uniform_int_distribution<std::size_t> pick_parent(0, early_families.size() - 1);
  for (std::uint32_t f = 1; f <= config.families; ++f) {
    if (config.birth_month(f) < config.static_months) continue;
    const auto parent = early_families[pick_parent(layout_rng)];
    const Eigen::VectorXd base = benign_center[mode(layout_rng)];
    Eigen::VectorXd c = base + config.inheritance * (family_center[parent] - base);
    for (const auto i : pick_features(config.signature_size, half, d, layout_rng)) c(i) += config.signature_amplitude;
    family_center[f] = c;
  }
  for (std::uint32_t f = 1; f <= config.families; ++f)
    family_velocity[f] = config.drift_velocity * random_direction(d, layout_rng);

  const double malware_fraction = 1.0 / (1.0 + config.ratio);
  const std::size_t n_mal = std::size_t(std::llround(double(config.per_month) * malware_fraction));
  const std::size_t n_ben = config.per_month - n_mal;

  Stream out;
  out.reserve(config.per_month * config.months);
  std::uint64_t next_id = 0;
  for (std::uint32_t month = 0; month < config.months; ++month) {
    std::mt19937_64 rng(derive_seed(config.seed, 0x6d6f6e7468ULL, month));
    std::vector<std::uint32_t> alive;
    for (std::uint32_t f = 1; f <= config.families; ++f)
      if (config.birth_month(f) <= month) alive.push_back(f);

    auto draw = [&](const Eigen::VectorXd& center, const Eigen::VectorXd& velocity) {
      Eigen::VectorXf x(d);
      for (Eigen::Index i = 0; i < d; ++i)
        x(i) = static_cast<float>(center(i) + double(month) * velocity(i) + config.noise * normal(rng));
      return x;
    };

    std::vector<Sample> rows;
    rows.reserve(config.per_month);
    std::uniform_int_distribution<std::size_t> pick_mode(0, config.benign_modes - 1);
    for (std::size_t i = 0; i < n_ben; ++i) {
      const auto m = pick_mode(rng);
      rows.push_back({0, draw(benign_center[m], benign_velocity[m]), 0, 0, month});
    }
    std::uniform_int_distribution<std::size_t> pick_family(0, alive.size() - 1);
    for (std::size_t i = 0; i < n_mal; ++i) {
      const auto f = alive[pick_family(rng)];
      rows.push_back({0, draw(family_center[f], family_velocity[f]), 1, int(f), month});
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (auto& r : rows) {
      r.id = next_id++;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<Sample> month_slice(std::span<const Sample> stream, std::uint32_t month) {
  std::vector<Sample> out;
  for (const auto& s : stream)
    if (s.month == month) out.push_back(s);
  return out;
}

std::uint32_t month_count(std::span<const Sample> stream) {
  std::uint32_t m = 0;
  for (const auto& s : stream) m = std::max(m, s.month + 1);
  return m;
}

int family_count(std::span<const Sample> stream) {
  int c = 0;
  for (const auto& s : stream) c = std::max(c, s.y_mul);
  return c;
}

// ---------------------------------------------------------------------------
// Oracle and memory bank

LabelOracle::LabelOracle(std::span<const Sample> stream) {
  truth_.reserve(stream.size());
  for (const auto& s : stream) truth_[s.id] = {s.y_bin, s.y_mul};
}

void LabelOracle::begin_period(std::size_t budget) {
  budget_ = budget;
  consumed_ = 0;
}

std::vector<Labels> LabelOracle::label(std::span<const std::uint64_t> ids) {
  if (consumed_ + ids.size() > budget_)
    throw BudgetExceeded("label budget exceeded: " + std::to_string(consumed_ + ids.size()) + " > " +
                         std::to_string(budget_));
  std::vector<Labels> out;
  out.reserve(ids.size());
  for (const auto id : ids) {
    const auto it = truth_.find(id);
    if (it == truth_.end()) throw ContractError("label request for unknown id " + std::to_string(id));
    out.push_back(it->second);
  }
  consumed_ += ids.size();
  total_ += ids.size();
  return out;
}

void MemoryBank::append(std::span<const Sample> samples, std::uint32_t month) {
  std::unordered_set<std::uint64_t> incoming;
  for (const auto& s : samples)
    if (ids_.count(s.id) || !incoming.insert(s.id).second)
      throw ContractError("memory bank already holds id " + std::to_string(s.id));
  for (const auto& s : samples) {
    samples_.push_back(s);
    acquired_.push_back(month);
    ids_.insert(s.id);
  }
}

std::vector<Sample> replay_draw(const MemoryBank& bank, double fraction, std::uint64_t seed) {
  if (fraction < 0 || fraction > 1) throw ConfigError("replay fraction must lie in [0, 1]");
  const std::size_t n = bank.size();
  const auto take = std::min(n, std::size_t(std::ceil(fraction * double(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Sample> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(bank.samples()[idx[i]]);
  return out;
}

}  // namespace ugsr
