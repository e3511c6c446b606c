#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prediab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or invalid input (files, manifests, value ranges). CLI exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

class ParseError : public InputError {
public:
    ParseError(std::size_t line, const std::string& what)
        : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class OrderingError : public InputError {
public:
    OrderingError(std::size_t line, const std::string& what)
        : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DuplicateTimestampError : public OrderingError {
public:
    using OrderingError::OrderingError;
};

class JitterError : public InputError {
public:
    using InputError::InputError;
};

class IntervalError : public InputError {
public:
    using InputError::InputError;
};

class MissingFieldError : public InputError {
public:
    using InputError::InputError;
};

class RangeError : public InputError {
public:
    using InputError::InputError;
};

class UnknownLabelError : public InputError {
public:
    using InputError::InputError;
};

/// Numerical divergence while integrating the homeostasis model.
class SimulationError : public Error {
public:
    SimulationError(std::size_t step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Fitting could not make progress. CLI exit code 3.
class FitError : public Error {
public:
    using Error::Error;
};

/// A participant lacks the intervals needed for the curve feature set.
class IncompleteFeaturesError : public Error {
public:
    using Error::Error;
};

/// Classification or evaluation could not be carried out. CLI exit code 4.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Synthetic profile produced a physiologically implausible trace.
class ProfileRejectedError : public Error {
public:
    using Error::Error;
};

}  // namespace prediab
