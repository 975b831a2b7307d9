#pragma once

#include <stdexcept>
#include <string>

namespace stawgan {

// Error taxonomy used across the library. The CLI maps these onto exit codes,
// everything else lets them propagate.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error("validation", msg) {}
};

struct InvalidAnnotationError : Error {
  explicit InvalidAnnotationError(const std::string& msg)
      : Error("invalid-annotation", msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// Raised by compose_objectives when a required component is missing.
struct CompositionError : Error {
  explicit CompositionError(const std::string& msg) : Error("composition", msg) {}
};

// Raised by the trainer when a loss term stops being finite. Names the term.
struct NonFiniteLossError : Error {
  explicit NonFiniteLossError(const std::string& term)
      : Error("non-finite-loss", "non-finite loss term: " + term), term_(term) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace stawgan
