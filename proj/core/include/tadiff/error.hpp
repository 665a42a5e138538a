#pragma once

#include <stdexcept>
#include <string>

namespace tadiff {

/// Error categories. The CLI maps each one onto a fixed process exit code.
enum class ErrorKind {
    Input,           // malformed arguments or shapes
    Schema,          // dataset/checkpoint does not match its declared layout
    Config,          // invalid or unknown configuration keys
    Prerequisite,    // an artifact the command depends on is missing
    Numeric,         // non-finite value during training or sampling
    UndefinedMetric, // e.g. AUROC over a single-class label set
    RareCondition,   // rejection sampler exhausted its budget
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[nodiscard]] const char* to_string(ErrorKind kind) noexcept;

/// Process exit code for an error kind: 2 config/input, 3 prerequisite,
/// 4 numeric, 5 undefined metric, 1 everything else.
[[nodiscard]] int exit_code(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace tadiff
