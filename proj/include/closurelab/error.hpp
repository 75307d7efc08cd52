#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace closurelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input array contained a NaN or infinity.
class NonFiniteError : public Error {
public:
    NonFiniteError(const std::string& what_arg, std::size_t index)
        : Error(what_arg + " (first bad index " + std::to_string(index) + ")"), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Time integration left the admissible envelope.
class BlowUpError : public Error {
public:
    BlowUpError(const std::string& what_arg, long step)
        : Error(what_arg + " at step " + std::to_string(step)), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Explicit step size violates the diffusive stability bound.
class StabilityError : public Error {
public:
    using Error::Error;
};

class SingularSystemError : public Error {
public:
    using Error::Error;
};

/// Raised by training when the loss becomes non-finite or diverges.
class TrainingError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace closurelab
