#pragma once

#include <stdexcept>
#include <string>

namespace canon_hjb {

// Bad user input: malformed config, unknown identifier, degenerate box...
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Syntax error in an expression; offset is the byte position in the source.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : InputError(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Evaluation left the domain of an elementary function.
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, std::string subexpression, const std::string& where = {})
      : std::runtime_error(what + " in '" + subexpression + "'" + (where.empty() ? "" : " at " + where)),
        reason_(what),
        subexpression_(std::move(subexpression)) {}
  const std::string& subexpression() const noexcept { return subexpression_; }
  // Same error, annotated with the evaluation point.
  DomainError at(const std::string& where) const { return DomainError(reason_, subexpression_, where); }

 private:
  std::string reason_;
  std::string subexpression_;
};

// Iterations did not converge, state diverged, CFL violated...
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace canon_hjb
