#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sealtrain {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// I/O or layout problem with a heap file (bad magic, truncation, mmap failure).
class HeapError : public Error {
public:
    using Error::Error;
};

/// The bump allocator cannot satisfy a request.
class OutOfMemoryError : public HeapError {
public:
    using HeapError::HeapError;
};

/// Misuse of the transaction API (nested begin, store outside a transaction).
class TxnError : public Error {
public:
    using Error::Error;
};

/// Authentication tag mismatch: tampered ciphertext or the wrong key.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Model configuration rejected. `line()` is 0 when the problem is not tied
/// to a single line (for example a missing softmax layer).
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Tensor or model shape disagreement.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Dataset or trace file could not be parsed.
class ParseError : public Error {
public:
    using Error::Error;
};

}  // namespace sealtrain
