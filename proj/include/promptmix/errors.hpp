#pragma once

#include <stdexcept>
#include <string>

namespace promptmix {

// Operand shapes do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller-supplied values violate an operation precondition (empty corpus,
// degenerate mask row, label mismatch, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A file could not be parsed. The message carries a line number or byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Artifacts were produced against different base models or vocabularies.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage ran before the artifact it depends on exists.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace promptmix
