#pragma once

#include <stdexcept>
#include <string>

namespace spidermesh {

// All recoverable failures carry a stable machine-checkable kind
// (e.g. "shape-mismatch") plus a human message naming the offender.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

[[noreturn]] inline void fail(const std::string& kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace spidermesh
