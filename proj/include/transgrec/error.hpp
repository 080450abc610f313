#pragma once

#include <stdexcept>
#include <string>

namespace transgrec {

// Malformed files, missing metadata, missing features, bad user input values.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public DataError {
 public:
  using DataError::DataError;
};

class MissingMetadata : public DataError {
 public:
  using DataError::DataError;
};

class MissingFeature : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN gradients, log of non-positive values, divergent training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace transgrec
