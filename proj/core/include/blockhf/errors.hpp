#pragma once

#include <stdexcept>
#include <string>

namespace blockhf {

// Base for all library errors. Subclasses exist so callers can map failure
// classes to process exit codes (see tools/).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension or shape disagreement between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Malformed config text, unknown keys, invalid values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input files (IDX parsing and friends).
class ParseError : public Error {
public:
    using Error::Error;
};

// Missing or unreadable files.
class IoError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required; aborts a run.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace blockhf
