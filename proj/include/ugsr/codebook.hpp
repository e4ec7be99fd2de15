#pragma once

// Class-balanced embedding codebook with centroid pull, benign
// orthogonalization, cosine top-k retrieval and unanimous-vote fusion.
//
// Class 0 is benign; class j >= 1 is malware family j.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ugsr {

inline constexpr std::uint32_t kBenignClass = 0;

struct CodebookEntry {
  std::uint32_t class_id = 0;
  Eigen::VectorXd vector;
  double confidence = 0;
  std::uint64_t sequence = 0;  // insertion order, unique within a codebook
};

struct CodebookCapacity {
  std::size_t benign = 50;
  std::size_t per_family = 3;
};

struct GeometryParams {
  double pull_base = 0.3;        // theta1
  double pull_confidence = 0.2;  // theta2
  double orthogonal = 0.5;       // theta3
  bool enabled = true;
};

// Candidate embedding for build/update, before geometry shaping.
struct CodebookCandidate {
  std::uint32_t class_id = 0;
  Eigen::VectorXd vector;
  double confidence = 0;
};

struct Match {
  const CodebookEntry* entry = nullptr;
  double similarity = 0;
};

class Codebook {
 public:
  Codebook(Eigen::Index dim, CodebookCapacity capacity, GeometryParams geometry);

  Eigen::Index dim() const { return dim_; }
  const CodebookCapacity& capacity() const { return capacity_; }
  const GeometryParams& geometry() const { return geometry_; }
  std::size_t capacity_of(std::uint32_t class_id) const {
    return class_id == kBenignClass ? capacity_.benign : capacity_.per_family;
  }

  const std::map<std::uint32_t, std::vector<CodebookEntry>>& classes() const { return classes_; }
  std::size_t size() const;
  std::size_t class_size(std::uint32_t class_id) const;
  bool has_class(std::uint32_t class_id) const { return class_size(class_id) > 0; }

  // Mean of the class vectors as they stood before the last shaping round.
  const Eigen::VectorXd& centroid(std::uint32_t class_id) const;

  // Per class: fill to capacity, then replace the lowest-confidence entry
  // whenever a candidate is strictly more confident. Mutated classes get
  // their centroid recomputed and geometry re-applied. Returns the ids of
  // the mutated classes.
  std::vector<std::uint32_t> update(std::span<const CodebookCandidate> candidates);

  // Low-level insertion without shaping; used when loading snapshots.
  void insert_raw(std::uint32_t class_id, Eigen::VectorXd vector, double confidence);
  void recompute_centroids();

 private:
  void shape(std::span<const std::uint32_t> mutated);

  Eigen::Index dim_;
  CodebookCapacity capacity_;
  GeometryParams geometry_;
  std::map<std::uint32_t, std::vector<CodebookEntry>> classes_;
  std::map<std::uint32_t, Eigen::VectorXd> centroids_;
  std::uint64_t next_sequence_ = 0;
};

// Keeps, per class, the capacity-many most confident candidates (ties by
// input order), then shapes every class.
Codebook build_codebook(Eigen::Index dim, CodebookCapacity capacity, GeometryParams geometry,
                        std::span<const CodebookCandidate> candidates);

Eigen::VectorXd centroid(const Codebook& codebook, std::uint32_t class_id);

// theta1 + theta2 * confidence, clamped to [0, 1].
double pull_factor(const GeometryParams& g, double confidence);

// v + lambda * (centroid - v).
Eigen::VectorXd pull_to_centroid(const Eigen::VectorXd& v, const Eigen::VectorXd& centroid,
                                 double lambda);

// Removes theta3 times the component of v along the unit benign direction.
// A zero v or zero benign centroid leaves v unchanged.
Eigen::VectorXd orthogonalize(const Eigen::VectorXd& v, const Eigen::VectorXd& benign_centroid,
                              double theta3);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Top-k entries by cosine similarity; ties by (class id, sequence).
std::vector<Match> retrieve(const Codebook& codebook, const Eigen::VectorXd& query, std::size_t k);

// 0 if `theta` benign matches, 1 if `theta` malware matches, else p.
double fuse_decision(std::span<const std::uint32_t> match_classes, double p, std::size_t k,
                     std::size_t theta);

double classifier_confidence(double p, int y_bin);

// Binary snapshot; layout documented in docs/FORMATS.md.
void write_codebook(std::ostream& out, const Codebook& codebook);
Codebook read_codebook(std::istream& in, GeometryParams geometry = {});
void save_codebook(const std::string& path, const Codebook& codebook);
Codebook load_codebook(const std::string& path, GeometryParams geometry = {});

}  // namespace ugsr
