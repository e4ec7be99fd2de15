#pragma once

// Versioned binary model checkpoints (layout in docs/FORMATS.md). Parameters
// are stored as little-endian 32-bit floats.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ugsr/detector.hpp"
#include "ugsr/optim.hpp"
#include "ugsr/sampler.hpp"

namespace ugsr {

struct Checkpoint {
  std::vector<DenseNet<float>> nets;
  std::vector<std::optional<OptimState<float>>> optimizers;  // one slot per net
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint to_checkpoint(const HierarchicalSampler<float>& s);
Checkpoint to_checkpoint(const Detector<float>& d);
HierarchicalSampler<float> sampler_from_checkpoint(const Checkpoint& c);
Detector<float> detector_from_checkpoint(const Checkpoint& c);

}  // namespace ugsr
