#include "selfdoc/common.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

namespace selfdoc {

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool all_finite(const Scalar* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("SELFDOC_LOG");
    if (!env) return LogLevel::kInfo;
    std::string s(env);
    if (s == "error") return LogLevel::kError;
    if (s == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

void log_error(const std::string& msg) { std::cerr << "[error] " << msg << '\n'; }

void log_warn(const std::string& msg) { std::cerr << "[warn] " << msg << '\n'; }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[info] " << msg << '\n';
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::cerr << "[debug] " << msg << '\n';
}

}  // namespace selfdoc
