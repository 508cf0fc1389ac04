// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace codemerge {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid argument or violated precondition.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Checkpoints disagree on parameter names or tensor shapes.
class StructuralError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

/// Operation invoked on an object in the wrong state (e.g. empty codebook).
class StateError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

/// Invalid simulation or CLI configuration.
class ConfigError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

/// Malformed, truncated, or corrupt file content.
class FormatError : public Error {
public:
    using Error::Error;
};

/// I/O failure (unreadable or unwritable path).
class StorageError : public Error {
public:
    using Error::Error;
};

/// A codebook entry references a checkpoint that cannot be opened.
class UnresolvedReferenceError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: divergence, singular kernel, non-finite result.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace codemerge
