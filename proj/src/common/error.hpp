#pragma once

#include <stdexcept>
#include <string>

namespace ply {

enum class ErrorKind {
  Parse,     // malformed input text (FEN, CSV, JSON)
  Illegal,   // violated domain precondition (illegal move, bad hook site)
  Io,        // filesystem / stream failure
  Shape,     // tensor / layout shape mismatch
  Numeric,   // NaN/Inf or other numeric fault
  Config,    // bad or missing run configuration
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace ply
