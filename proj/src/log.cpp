#include "skillsight/log.hpp"

#include <atomic>
#include <iostream>

namespace skillsight {
namespace {
std::atomic<LogLevel> g_level{LogLevel::kInfo};
}

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log(LogLevel level, const std::string& message) {
  if (level < g_level.load()) return;
  static constexpr const char* kTags[] = {"debug", "info", "warning", "error"};
  std::cerr << "[" << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace skillsight
