#pragma once

#include <string_view>

#include <nlohmann/json.hpp>

namespace faithscope {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

LogLevel log_level_from_string(std::string_view s);
void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes one JSON object per line to stderr: {"level", "event", ...fields}.
/// Thread-safe. `level` is one of debug, info, warn, error.
void log_event(std::string_view level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

}  // namespace faithscope
