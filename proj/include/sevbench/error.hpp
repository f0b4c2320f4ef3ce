#pragma once

#include <stdexcept>
#include <string>

namespace sevbench {

/// Domain error carrying a machine-readable kind (e.g. "parse", "precondition").
/// The CLI prints these as single-line JSON; the service maps them to HTTP codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Parse failure naming the offending field ("" when the input is not JSON at all).
class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& message)
      : Error("parse", message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline Error precondition_error(const std::string& message) {
  return Error("precondition", message);
}

inline Error invariant_error(const std::string& message) {
  return Error("invariant", message);
}

}  // namespace sevbench
