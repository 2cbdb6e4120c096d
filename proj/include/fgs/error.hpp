#pragma once

#include <stdexcept>
#include <string>

namespace fgs {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or image dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed bitstream, checkpoint or config file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain.
class RangeError : public Error {
 public:
  using Error::Error;
};

}  // namespace fgs
