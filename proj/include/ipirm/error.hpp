#ifndef IPIRM_ERROR_HPP
#define IPIRM_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ipirm {

// Error families map onto CLI exit codes: configuration -> 2, data -> 3,
// numeric/runtime -> 4.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file content (bad magic, bad version, bad header field).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// File ended before the declared payload.
class TruncationError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose.
class DimensionError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Input outside the domain of a function (log of a non-positive entry, ...).
class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// API misuse: wrong tape, empty partition set, k larger than the train split.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A subset with too little mass to contain a negative.
class DegenerateSubsetError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Thresholding produced a subset with fewer than two samples.
class DegeneratePartitionError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ipirm

#endif  // IPIRM_ERROR_HPP
