#pragma once

// Tiny leveled logger controlled by the NWPN_LOG environment variable
// (error | info | debug; default error).  Messages go to stderr so stdout
// stays reserved for machine-readable output.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace rpn {

enum class LogLevel : int { kError = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("NWPN_LOG");
    if (env == nullptr) return LogLevel::kError;
    if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
    if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
    return LogLevel::kError;
  }();
  return level;
}

inline void log_line(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  const char* tag = level == LogLevel::kError  ? "error"
                    : level == LogLevel::kInfo ? "info"
                                               : "debug";
  std::fprintf(stderr, "[%s] %s\n", tag, message.c_str());
}

inline void log_error(const std::string& message) { log_line(LogLevel::kError, message); }
inline void log_info(const std::string& message) { log_line(LogLevel::kInfo, message); }
inline void log_debug(const std::string& message) { log_line(LogLevel::kDebug, message); }

}  // namespace rpn
