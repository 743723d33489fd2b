#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ffmerge {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's domain (empty input, bad index, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A store or config that breaks its invariants; raised before any output is produced.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ParseErrorKind {
  bad_magic,
  truncated_header,
  bad_header,
  truncated_data,
  alias_missing,
  alias_chain,
  shape_length_mismatch,
};

const char* to_string(ParseErrorKind kind);

// Malformed container or dataset file. `position` is the byte offset in the
// file where the problem was detected.
class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::uint64_t position, const std::string& what);

  ParseErrorKind kind() const noexcept { return kind_; }
  std::uint64_t position() const noexcept { return position_; }

 private:
  ParseErrorKind kind_;
  std::uint64_t position_;
};

}  // namespace ffmerge
