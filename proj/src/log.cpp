#include "scan/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace scan {

LogLevel log_threshold() {
  static LogLevel level = [] {
    const char* env = std::getenv("SCAN_LOG_LEVEL");
    std::string v = env ? env : "";
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

void log_error(const std::string& msg) { std::cerr << "[error] " << msg << "\n"; }

void log_info(const std::string& msg) {
  if (log_threshold() >= LogLevel::info) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_threshold() >= LogLevel::debug) std::cerr << "[debug] " << msg << "\n";
}

}  // namespace scan
