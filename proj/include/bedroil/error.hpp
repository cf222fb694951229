#pragma once

#include <stdexcept>
#include <string>

namespace bedroil {

/// Raised when a model, policy or occupancy violates one of its invariants.
class ModelError : public std::runtime_error {
public:
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised by numerical routines (solves, optimizers) that cannot produce a result.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on malformed files, configs or records.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace bedroil
