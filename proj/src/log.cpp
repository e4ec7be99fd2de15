#include "ugsr/log.hpp"

#include <atomic>
#include <iostream>

namespace ugsr::log {

namespace {
std::atomic<Level> g_level{Level::warn};
}

void set_level(Level l) { g_level.store(l); }
Level level() { return g_level.load(); }

void warn(std::string_view message) {
  if (g_level.load() >= Level::warn) std::clog << "warning: " << message << '\n';
}

void info(std::string_view message) {
  if (g_level.load() >= Level::info) std::clog << message << '\n';
}

}  // namespace ugsr::log
