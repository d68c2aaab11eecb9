#pragma once

#include <chrono>
#include <ctime>
#include <iostream>
#include <mutex>
#include <string_view>

namespace kaqa::logging {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level& threshold() {
  static Level level = Level::info;
  return level;
}

inline std::string_view level_name(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    default: return "off";
  }
}

inline void write(Level level, std::string_view msg) {
  if (level < threshold()) return;
  static std::mutex mu;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::localtime(&now));
  std::lock_guard lock(mu);
  std::cerr << stamp << ' ' << level_name(level) << ' ' << msg << '\n';
}

inline void info(std::string_view msg) { write(Level::info, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void error(std::string_view msg) { write(Level::error, msg); }

}  // namespace kaqa::logging
