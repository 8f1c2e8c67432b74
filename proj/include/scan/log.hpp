#pragma once

#include <string>

namespace scan {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Threshold comes from the SCAN_LOG_LEVEL environment variable
// ("error", "info" or "debug"); unset or unknown values mean "info".
LogLevel log_threshold();

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace scan
