#pragma once

#include <stdexcept>
#include <string>

namespace raad {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree; the message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its admissible range (k = 0, scale <= 0, bits not in {2,3,4,8}, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A call-site precondition was violated (non-scalar loss, missing grad, unfrozen teacher, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was invoked before the artifacts it depends on exist.
class PipelineOrderError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (e.g. AUROC with a single class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value detected after a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace raad
