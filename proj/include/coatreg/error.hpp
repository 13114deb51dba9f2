#pragma once

#include <stdexcept>
#include <string>

namespace coatreg {

// Every failure the library raises derives from Error. The CLI maps the
// subclasses onto its exit-code contract (usage 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

}  // namespace coatreg
