#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace explainmix {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A parameter lies outside the domain of a density or model operation.
class DomainError : public Error {
public:
    using Error::Error;
};

// A mean constraint, fit, clustering or config cannot be satisfied.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// The requested quantity does not exist for these parameters (e.g. alpha when a = 0).
class DegenerateError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    ValidationError(const std::string& msg, std::size_t line = 0)
        : Error(line == 0 ? msg : "line " + std::to_string(line) + ": " + msg), line_(line) {}

    // 1-based input line, 0 when not tied to a file.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DegreesOfFreedomError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    CalibrationError(const std::string& msg, double r_min, double r_max)
        : Error(msg), r_min_(r_min), r_max_(r_max) {}

    // Achievable correlation range over the coupling interval.
    double r_min() const noexcept { return r_min_; }
    double r_max() const noexcept { return r_max_; }

private:
    double r_min_;
    double r_max_;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace explainmix
