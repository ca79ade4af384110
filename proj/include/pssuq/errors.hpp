#pragma once

#include <stdexcept>
#include <string>

namespace pssuq {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed netlist or configuration input. Line/column are 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& message, int line = 0, int column = 0)
        : Error(format(message, line, column)), line_(line), column_(column) {}

    [[nodiscard]] int line() const noexcept { return line_; }
    [[nodiscard]] int column() const noexcept { return column_; }

private:
    static std::string format(const std::string& message, int line, int column) {
        if (line <= 0) {
            return message;
        }
        return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
               message;
    }

    int line_;
    int column_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// Device evaluation produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

class SingularMatrixError : public Error {
public:
    explicit SingularMatrixError(const std::string& message, long block = -1)
        : Error(message), block_(block) {}

    // Testing-node index of the offending block, -1 when not block-structured.
    [[nodiscard]] long block() const noexcept { return block_; }

private:
    long block_;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& message, double residual, int iterations)
        : Error(message), residual_(residual), iterations_(iterations) {}

    [[nodiscard]] double residual() const noexcept { return residual_; }
    [[nodiscard]] int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

}  // namespace pssuq
