#pragma once

#include <stdexcept>
#include <string>

namespace dermnet {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Bad argument values, malformed one-hot targets, empty datasets.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Weight file failures. Each load failure mode has its own type.
class WeightFileError : public Error {
 public:
  using Error::Error;
};

class WeightFormatError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

class WeightShapeError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

class TruncatedPayloadError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

class MissingWeightError : public WeightFileError {
 public:
  explicit MissingWeightError(std::string name)
      : WeightFileError("missing weight tensor: " + name), name_(std::move(name)) {}
  const std::string& tensor_name() const noexcept { return name_; }

 private:
  std::string name_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ImputationError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class RebalanceError : public Error {
 public:
  using Error::Error;
};

class ImageDecodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace dermnet
