#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <string>

namespace persona {

inline std::string format_utc(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Current UTC time as ISO-8601, or SOURCE_DATE_EPOCH when it is set so that
/// reproducible builds of libraries and reports carry a fixed timestamp.
inline std::string utc_timestamp() {
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    return format_utc(static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10)));
  }
  return format_utc(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now()));
}

}  // namespace persona
