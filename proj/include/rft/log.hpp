#pragma once

#include <iostream>
#include <string_view>

namespace rft {

enum class LogLevel { quiet = 0, warning = 1, info = 2, debug = 3 };

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::warning;
  return level;
}

inline void log_warning(std::string_view msg) {
  if (log_level() >= LogLevel::warning) std::cerr << "warning: " << msg << '\n';
}

inline void log_info(std::string_view msg) {
  if (log_level() >= LogLevel::info) std::cerr << msg << '\n';
}

inline void log_debug(std::string_view msg) {
  if (log_level() >= LogLevel::debug) std::cerr << msg << '\n';
}

}  // namespace rft
