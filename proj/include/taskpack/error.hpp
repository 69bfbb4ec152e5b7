#pragma once

#include <stdexcept>
#include <string>

namespace taskpack {

// Error categories. Values are shared with the C API status codes in
// taskpack.h (TP_ERR_* = category value), keep the two in sync.
enum class ErrorCode : int {
    dimension = 1,  // shape / size mismatch
    input     = 2,  // bad argument value
    state     = 3,  // lifecycle operation out of order
    lookup    = 4,  // unknown task or layer
    capacity  = 5,  // no free parameters left
    ownership = 6,  // attempt to modify a prior task's parameters
    format    = 7,  // malformed file or byte stream
    io        = 8,  // filesystem failure
    usage     = 9,  // API misuse (e.g. backward on non-scalar)
    invariant = 10, // internal guarantee violated (zero-forgetting check)
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
    if (!cond) raise(code, message);
}

} // namespace taskpack
