#include "faithscope/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

#include "faithscope/errors.hpp"

namespace faithscope {
namespace {

std::atomic<LogLevel> g_level{LogLevel::warn};
std::mutex g_mutex;

}  // namespace

LogLevel log_level_from_string(std::string_view s) {
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "warn" || s == "warning") return LogLevel::warn;
  if (s == "error") return LogLevel::error;
  if (s == "off" || s == "none") return LogLevel::off;
  throw Error(ErrorCode::InvalidArgument, "unknown log level '" + std::string(s) + "'");
}

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

void log_event(std::string_view level, std::string_view event, const nlohmann::json& fields) {
  LogLevel parsed = LogLevel::info;
  try {
    parsed = log_level_from_string(level);
  } catch (const Error&) {
  }
  if (parsed < g_level.load()) return;
  nlohmann::ordered_json line;
  line["level"] = level;
  line["event"] = event;
  if (fields.is_object()) {
    for (const auto& [k, v] : fields.items()) line[k] = v;
  }
  const std::string text = line.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  std::lock_guard lock(g_mutex);
  std::cerr << text << '\n';
}

}  // namespace faithscope
