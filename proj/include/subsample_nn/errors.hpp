#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace snn {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An argument is outside the domain the operation accepts.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A computation produced a NaN or an infinity.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Sampling distribution cannot be formed (every weight is zero).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// A vector handed to the ALSH data transform has norm above 1.
class NormBoundError : public Error {
public:
    using Error::Error;
};

/// The model or fixture does not satisfy an analysis precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Malformed binary input. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset)
    {
    }

    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

} // namespace snn
