#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qpm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed formula text. `position()` is a 0-based byte offset into the input.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t pos)
        : Error(msg + " at position " + std::to_string(pos)), pos_(pos) {}
    std::size_t position() const noexcept { return pos_; }

private:
    std::size_t pos_;
};

class IntervalError : public Error {
public:
    using Error::Error;
};

/// Evaluation would need states past the end of the trajectory.
class HorizonError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(const std::string& field, const std::string& msg)
        : Error("config field '" + field + "': " + msg), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged (non-finite loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace qpm
