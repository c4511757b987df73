#ifndef STRDAN_ERROR_HPP_
#define STRDAN_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace strdan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes disagree with what an operation needs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad argument values: labels out of range, non-finite inputs, infeasible
// batch requests.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed or schema-violating files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace strdan

#endif  // STRDAN_ERROR_HPP_
