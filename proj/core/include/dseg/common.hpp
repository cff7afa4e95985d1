#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dseg {

// Domain failure (bad shapes, bad configs, malformed files). The CLI maps
// these to exit code 1 with a one-line message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace dseg
