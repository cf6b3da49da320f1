#pragma once

#include <stdexcept>

namespace grpolab {

/// Malformed arguments: unknown token ids, mismatched lengths, out-of-range counts.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A closed form that is undefined for an all-correct or all-incorrect group.
class DegenerateGroupError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Exhaustive enumeration would exceed the hard output cap.
class EnumerationCapError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace grpolab
