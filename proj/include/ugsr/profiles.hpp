#pragma once

// Named RunConfig presets.

#include "ugsr/pipeline.hpp"

namespace ugsr {

// Published settings: 512-wide trunks, long static training.
inline RunConfig paper_profile() { return {}; }

// Small-machine preset for synthetic streams: narrow trunks, few epochs,
// Adam throughout. The embedding stays 512 wide.
inline RunConfig desk_profile() {
  RunConfig c;
  c.hidden_width = 64;
  c.static_epochs = 15;
  c.static_batch = 256;
  c.static_optimizer = OptimKind::adam;
  c.static_lr = 1e-3;
  c.continual_epochs = 50;
  c.continual_batch = 256;
  c.continual_optimizer = OptimKind::adam;
  c.continual_lr = 5e-4;
  return c;
}

}  // namespace ugsr
