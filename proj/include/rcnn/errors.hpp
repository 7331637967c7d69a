#pragma once

#include <stdexcept>
#include <string>

namespace rcnn {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes: usage/config -> 1, data -> 2, numeric -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition (non-scalar loss, empty pool...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or model/tokenizer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in values or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad input data: malformed rows, labels out of range, bad encodings,
// unknown token ids, mismatched checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

class LabelError : public DataError {
 public:
  using DataError::DataError;
};

class EncodingError : public DataError {
 public:
  using DataError::DataError;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace rcnn
