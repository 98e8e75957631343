#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pollsim {

// Input or contract violations (bad scenario, infeasible action, corrupt file).
// CLI maps these to exit code 3.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures (non-finite loss, failed convergence where required).
// CLI maps these to exit code 4.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used for scenario fingerprints in checkpoint/table headers.
inline uint64_t fnv1a_init() { return 1469598103934665603ULL; }

inline uint64_t fnv1a_bytes(uint64_t h, const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a_string(uint64_t h, const std::string& s) {
  return fnv1a_bytes(h, s.data(), s.size());
}

}  // namespace pollsim
