#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace dermgen {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline LogLevel& log_threshold() {
    static LogLevel level = LogLevel::info;
    return level;
}

inline void log_line(LogLevel level, const std::string& msg) {
    if (level < log_threshold()) return;
    const char* tag = level == LogLevel::debug  ? "debug"
                      : level == LogLevel::info ? "info"
                      : level == LogLevel::warn ? "warn"
                                                : "error";
    std::cerr << "[dermgen " << tag << "] " << msg << "\n";
}

inline void log_debug(const std::string& msg) { log_line(LogLevel::debug, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::warn, msg); }
inline void log_error(const std::string& msg) { log_line(LogLevel::error, msg); }

} // namespace dermgen
