#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfdoc {

#ifdef SELFDOC_F32
using Scalar = float;
#else
using Scalar = double;
#endif

inline constexpr bool f64_build = sizeof(Scalar) == 8;

/// Malformed configs, files, or CLI arguments. Surfaces as exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<int>& shape);

bool all_finite(const Scalar* p, std::size_t n);

// SELFDOC_LOG={error,info,debug}, default info.
enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();
void log_error(const std::string& msg);
void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace selfdoc
