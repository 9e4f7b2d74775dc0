#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace blobsurrogate {

/// Base class for every domain error raised by the library. The CLI maps
/// these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class InvalidGeometry : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class TruncationError : public FormatError {
public:
    using FormatError::FormatError;
};

class KernelTooLarge : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class UndefinedSensitivity : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

class TrainingFailure : public Error {
public:
    TrainingFailure(const std::string& what, std::size_t step)
        : Error(what + " at step " + std::to_string(step)), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace blobsurrogate
