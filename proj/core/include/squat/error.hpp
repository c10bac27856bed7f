#pragma once

#include <stdexcept>
#include <string>

namespace squat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument or configuration was violated.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A linear-algebra step could not be carried out reliably (singular or
/// badly conditioned system).
class NumericalError : public Error {
public:
  using Error::Error;
};

/// On-disk data is malformed, truncated, or inconsistent with its manifest.
class FormatError : public Error {
public:
  using Error::Error;
};

} // namespace squat
