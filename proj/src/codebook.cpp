#include "ugsr/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "binary_io.hpp"
#include "ugsr/errors.hpp"
#include "ugsr/log.hpp"

namespace ugsr {

namespace {

constexpr char kCodebookMagic[9] = "UGSRCDBK";
constexpr std::uint32_t kCodebookVersion = 1;

}  // namespace

Codebook::Codebook(Eigen::Index dim, CodebookCapacity capacity, GeometryParams geometry)
    : dim_(dim), capacity_(capacity), geometry_(geometry) {
  if (dim <= 0) throw ConfigError("codebook dimension must be positive");
}

std::size_t Codebook::size() const {
  std::size_t n = 0;
  for (const auto& [id, entries] : classes_) n += entries.size();
  return n;
}

std::size_t Codebook::class_size(std::uint32_t class_id) const {
  const auto it = classes_.find(class_id);
  return it == classes_.end() ? 0 : it->second.size();
}

const Eigen::VectorXd& Codebook::centroid(std::uint32_t class_id) const {
  const auto it = centroids_.find(class_id);
  if (it == centroids_.end() || !has_class(class_id))
    throw ContractError("centroid of empty class " + std::to_string(class_id));
  return it->second;
}

void Codebook::insert_raw(std::uint32_t class_id, Eigen::VectorXd vector, double confidence) {
  if (vector.size() != dim_) throw ConfigError("codebook entry has wrong dimension");
  if (!vector.allFinite()) throw ConfigError("codebook entry is not finite");
  if (!(confidence >= 0 && confidence <= 1)) throw ConfigError("confidence outside [0, 1]");
  auto& entries = classes_[class_id];
  if (entries.size() >= capacity_of(class_id))
    throw ContractError("class " + std::to_string(class_id) + " is at capacity");
  entries.push_back({class_id, std::move(vector), confidence, next_sequence_++});
}

void Codebook::recompute_centroids() {
  centroids_.clear();
  for (const auto& [id, entries] : classes_) {
    if (entries.empty()) continue;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
    for (const auto& e : entries) sum += e.vector;
    centroids_[id] = sum / double(entries.size());
  }
}

std::vector<std::uint32_t> Codebook::update(std::span<const CodebookCandidate> candidates) {
  std::set<std::uint32_t> mutated;
  for (const auto& c : candidates) {
    if (c.vector.size() != dim_) throw ConfigError("codebook candidate has wrong dimension");
    if (!c.vector.allFinite()) throw ConfigError("codebook candidate is not finite");
    if (!(c.confidence >= 0 && c.confidence <= 1)) throw ConfigError("confidence outside [0, 1]");
    const std::size_t cap = capacity_of(c.class_id);
    if (cap == 0) continue;
    auto& entries = classes_[c.class_id];
    if (entries.size() < cap) {
      entries.push_back({c.class_id, c.vector, c.confidence, next_sequence_++});
      mutated.insert(c.class_id);
      continue;
    }
    auto weakest = std::min_element(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      return a.confidence != b.confidence ? a.confidence < b.confidence : a.sequence < b.sequence;
    });
    if (c.confidence > weakest->confidence) {
      *weakest = {c.class_id, c.vector, c.confidence, next_sequence_++};
      mutated.insert(c.class_id);
    }
  }
  for (auto it = classes_.begin(); it != classes_.end();)
    it = it->second.empty() ? classes_.erase(it) : std::next(it);
  std::vector<std::uint32_t> ids(mutated.begin(), mutated.end());
  shape(ids);
  return ids;
}

void Codebook::shape(std::span<const std::uint32_t> mutated) {
  for (const auto id : mutated) {
    const auto& entries = classes_.at(id);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
    for (const auto& e : entries) sum += e.vector;
    centroids_[id] = sum / double(entries.size());
  }
  if (!geometry_.enabled) return;

  for (const auto id : mutated)
    for (auto& e : classes_.at(id))
      e.vector = pull_to_centroid(e.vector, centroids_.at(id), pull_factor(geometry_, e.confidence));

  const bool any_malware = std::any_of(mutated.begin(), mutated.end(),
                                       [](std::uint32_t id) { return id != kBenignClass; });
  if (!any_malware || geometry_.orthogonal == 0) return;
  const auto benign = centroids_.find(kBenignClass);
  if (benign == centroids_.end() || !has_class(kBenignClass) || benign->second.norm() == 0) {
    log::warn("codebook: no usable benign centroid, orthogonalization skipped");
    return;
  }
  for (const auto id : mutated) {
    if (id == kBenignClass) continue;
    for (auto& e : classes_.at(id))
      e.vector = orthogonalize(e.vector, benign->second, geometry_.orthogonal);
  }
}

Codebook build_codebook(Eigen::Index dim, CodebookCapacity capacity, GeometryParams geometry,
                        std::span<const CodebookCandidate> candidates) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < candidates.size(); ++i) by_class[candidates[i].class_id].push_back(i);

  std::vector<CodebookCandidate> kept;
  for (auto& [id, idx] : by_class) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return candidates[a].confidence > candidates[b].confidence;
    });
    const std::size_t cap = id == kBenignClass ? capacity.benign : capacity.per_family;
    for (std::size_t r = 0; r < std::min(cap, idx.size()); ++r) kept.push_back(candidates[idx[r]]);
  }
  Codebook book(dim, capacity, geometry);
  book.update(kept);
  return book;
}

Eigen::VectorXd centroid(const Codebook& codebook, std::uint32_t class_id) {
  return codebook.centroid(class_id);
}

double pull_factor(const GeometryParams& g, double confidence) {
  return std::clamp(g.pull_base + g.pull_confidence * confidence, 0.0, 1.0);
}

Eigen::VectorXd pull_to_centroid(const Eigen::VectorXd& v, const Eigen::VectorXd& centroid,
                                 double lambda) {
  return v + std::clamp(lambda, 0.0, 1.0) * (centroid - v);
}

Eigen::VectorXd orthogonalize(const Eigen::VectorXd& v, const Eigen::VectorXd& benign_centroid,
                              double theta3) {
  const double cn = benign_centroid.norm();
  const double vn = v.norm();
  if (cn == 0 || vn == 0) return v;
  const Eigen::VectorXd unit = benign_centroid / cn;
  const double cosine = v.dot(unit) / vn;
  return v - theta3 * cosine * vn * unit;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double n = a.norm() * b.norm();
  return n == 0 ? 0.0 : a.dot(b) / n;
}

std::vector<Match> retrieve(const Codebook& codebook, const Eigen::VectorXd& query, std::size_t k) {
  if (k == 0) throw ContractError("retrieve: k must be at least 1");
  if (codebook.size() == 0) throw ContractError("retrieve: empty codebook");
  if (query.size() != codebook.dim()) throw ConfigError("retrieve: query has wrong dimension");
  std::vector<Match> all;
  all.reserve(codebook.size());
  for (const auto& [id, entries] : codebook.classes())
    for (const auto& e : entries) all.push_back({&e, cosine_similarity(query, e.vector)});
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + std::ptrdiff_t(take), all.end(),
                    [](const Match& a, const Match& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      if (a.entry->class_id != b.entry->class_id)
                        return a.entry->class_id < b.entry->class_id;
                      return a.entry->sequence < b.entry->sequence;
                    });
  all.resize(take);
  return all;
}

double fuse_decision(std::span<const std::uint32_t> match_classes, double p, std::size_t k,
                     std::size_t theta) {
  if (match_classes.size() > k) throw ContractError("fuse_decision: more matches than k");
  if (theta == 0 || theta > k) throw ConfigError("fuse_decision: theta must lie in [1, k]");
  const auto benign = std::size_t(std::count(match_classes.begin(), match_classes.end(), kBenignClass));
  const auto malware = match_classes.size() - benign;
  if (benign >= theta) return 0.0;
  if (malware >= theta) return 1.0;
  return p;
}

double classifier_confidence(double p, int y_bin) {
  const bool predicted_malware = p >= 0.5;
  if (predicted_malware != (y_bin == 1)) return 0.0;
  return std::min(1.0, std::abs(2.0 * p - 1.0));
}

void write_codebook(std::ostream& out, const Codebook& codebook) {
  io::put_magic(out, kCodebookMagic);
  io::put_u32(out, kCodebookVersion);
  io::put_u32(out, std::uint32_t(codebook.dim()));
  io::put_u32(out, std::uint32_t(codebook.capacity().benign));
  io::put_u32(out, std::uint32_t(codebook.capacity().per_family));
  io::put_u32(out, std::uint32_t(codebook.classes().size()));
  io::put_u32(out, std::uint32_t(codebook.size()));
  for (const auto& [id, entries] : codebook.classes()) {
    std::vector<const CodebookEntry*> ordered;
    for (const auto& e : entries) ordered.push_back(&e);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->sequence < b->sequence; });
    for (const auto* e : ordered) {
      io::put_u32(out, e->class_id);
      io::put_f32(out, static_cast<float>(e->confidence));
      for (Eigen::Index i = 0; i < e->vector.size(); ++i)
        io::put_f32(out, static_cast<float>(e->vector(i)));
    }
  }
}

Codebook read_codebook(std::istream& in, GeometryParams geometry) {
  io::expect_magic(in, kCodebookMagic, "codebook snapshot");
  const auto version = io::get_u32(in);
  if (version != kCodebookVersion)
    throw ParseError("unsupported codebook snapshot version " + std::to_string(version));
  const auto dim = io::get_u32(in);
  CodebookCapacity cap;
  cap.benign = io::get_u32(in);
  cap.per_family = io::get_u32(in);
  const auto class_count = io::get_u32(in);
  const auto entries = io::get_u32(in);
  Codebook book(Eigen::Index(dim), cap, geometry);
  for (std::uint32_t n = 0; n < entries; ++n) {
    const auto id = io::get_u32(in);
    const double conf = io::get_f32(in);
    Eigen::VectorXd v(dim);
    for (std::uint32_t i = 0; i < dim; ++i) v(i) = io::get_f32(in);
    book.insert_raw(id, std::move(v), conf);
  }
  if (book.classes().size() != class_count) throw ParseError("codebook class count mismatch");
  book.recompute_centroids();
  return book;
}

void save_codebook(const std::string& path, const Codebook& codebook) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_codebook(out, codebook);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Codebook load_codebook(const std::string& path, GeometryParams geometry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_codebook(in, geometry);
}

}  // namespace ugsr
