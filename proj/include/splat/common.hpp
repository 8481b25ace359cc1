#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace splat {

// Bad user input: malformed config, out-of-range values, mismatched data.
// CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dtype disagreement between tensors.
class DimensionError : public ValidationError {
 public:
  explicit DimensionError(const std::string& msg) : ValidationError(msg) {}
};

// Internal API misuse (non-scalar backward root, shape-mismatched custom
// gradients). Indicates a bug in calling code, not bad user data.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Filesystem / codec failures. CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Thread count for parallel sections, from SPLATCLS_THREADS (default 1 on
// single-core hosts, hardware_concurrency otherwise).
int thread_count();

// Runs fn(begin, end) over [0, n) split into contiguous chunks of the given
// size. Chunk boundaries depend only on n and chunk, never on the thread
// count, so any per-chunk outputs reduce identically no matter how many
// workers ran.
void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                     int64_t chunk = 4096);

}  // namespace splat
