#pragma once

#include <stdexcept>
#include <string>

namespace wednet {

/// Input that violates a documented precondition (bad shapes, negative precipitation, unsorted windows, ...).
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// An hour with no station reading for some attribute while forward-fill is off.
class GapError : public std::runtime_error {
 public:
  explicit GapError(const std::string& what) : std::runtime_error(what) {}
};

/// No normal window shares the day type and start hour of an extreme window.
class NoReferenceMatch : public std::runtime_error {
 public:
  NoReferenceMatch(const std::string& day_type, int hour)
      : std::runtime_error("no reference window matches day type '" + day_type + "' at hour " + std::to_string(hour)),
        day_type_(day_type),
        hour_(hour) {}

  const std::string& day_type() const { return day_type_; }
  int hour() const { return hour_; }

 private:
  std::string day_type_;
  int hour_;
};

/// Checkpoint contents disagree with the model configuration they are loaded into.
class CheckpointMismatch : public std::runtime_error {
 public:
  explicit CheckpointMismatch(const std::string& what) : std::runtime_error(what) {}
};

/// A non-finite activation or loss appeared.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace wednet
