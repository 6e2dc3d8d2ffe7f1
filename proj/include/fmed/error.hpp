#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace fmed {

// Base class for every error raised by the library. Callers that only care
// about the failure class (usage, numerical, I/O) catch the subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Two functional samples do not share a time grid.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Sizes disagree (subject counts, sequence lengths).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Evaluation point outside [0, T].
class DomainError : public Error {
 public:
  using Error::Error;
};

// Basis cannot support the requested differential operator.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition_estimate() const { return condition_; }

 private:
  double condition_ = std::numeric_limits<double>::infinity();
};

// Malformed input file content (CSV, JSON schema).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fmed
