#pragma once

#include <stdexcept>
#include <string>

namespace varhaz {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (CSV contents, scenario values, options).
class DataError : public Error {
public:
    using Error::Error;
};

/// Failures of the numerical procedures themselves.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// The kernel-weighted event mass around an evaluation point is too small to fit.
class NoLocalData : public NumericalError {
public:
    NoLocalData(double v, double effective_events)
        : NumericalError("no local data at v=" + std::to_string(v) +
                         " (effective events " + std::to_string(effective_events) + ")"),
          v_(v), effective_events_(effective_events) {}

    double v() const noexcept { return v_; }
    double effective_events() const noexcept { return effective_events_; }

private:
    double v_;
    double effective_events_;
};

class SingularMatrix : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace varhaz
