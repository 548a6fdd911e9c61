#pragma once

#include <stdexcept>
#include <string>

namespace pseudolab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer dimensions do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or inconsistent cross-file data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A loss or parameter became NaN/Inf. Carries a human-readable state dump.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::string state_dump)
      : Error(what), state_dump_(std::move(state_dump)) {}

  const std::string& state_dump() const noexcept { return state_dump_; }

 private:
  std::string state_dump_;
};

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ContractError(message);
}

}  // namespace detail

}  // namespace pseudolab
