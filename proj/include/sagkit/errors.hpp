#pragma once

#include <stdexcept>
#include <string>

namespace sagkit {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-contract arguments (shapes, ranges, non-finite values).
class InputError : public Error {
public:
    using Error::Error;
};

/// A forward-only scorer was asked for gradients.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// The blurred baseline could not be pushed below the confidence bound.
class BaselineError : public Error {
public:
    using Error::Error;
};

/// Training diverged; carries the iteration at which the loss went non-finite.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, long iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}

    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

/// A request exceeds a hard size limit (e.g. exhaustive enumeration).
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Optimisation produced a non-finite objective.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace sagkit
