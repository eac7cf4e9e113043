#pragma once

#include <stdexcept>
#include <string>

namespace pfc {

enum class ErrorKind {
  Config,     // invalid configuration or arguments
  Io,         // file could not be read or written
  Data,       // malformed or inconsistent input data
  Domain,     // parameter outside the admissible domain
  Numerical,  // solver failure, singular system, ...
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace pfc
