#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace guardrail {

// Exit codes of the command-line tool map one-to-one onto these values.
enum class ErrorCode : int {
    ok = 0,
    invalid_argument = 2,
    shape_mismatch = 3,
    non_finite = 4,
    missing_input = 5,
    version_mismatch = 6,
    schema_violation = 7,
    empty_input = 8,
    out_of_range = 9,
    insufficient_data = 10,
    io_failure = 11,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ok: return "ok";
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::shape_mismatch: return "shape_mismatch";
        case ErrorCode::non_finite: return "non_finite";
        case ErrorCode::missing_input: return "missing_input";
        case ErrorCode::version_mismatch: return "version_mismatch";
        case ErrorCode::schema_violation: return "schema_violation";
        case ErrorCode::empty_input: return "empty_input";
        case ErrorCode::out_of_range: return "out_of_range";
        case ErrorCode::insufficient_data: return "insufficient_data";
        case ErrorCode::io_failure: return "io_failure";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) fail(code, message);
}

}  // namespace guardrail
