#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

namespace fieldforge {

/// Base class for every error raised by the library. The message is a single
/// line; callers that need a machine-readable prefix attach their own.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a linear or nonlinear solve cannot produce a result.
class SolverError : public Error {
public:
    using Error::Error;
};

/// Raised when a file cannot be read or written.
class IoError : public Error {
public:
    using Error::Error;
};

using WarningHandler = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex() {
    static std::mutex m;
    return m;
}
inline WarningHandler& warning_handler() {
    static WarningHandler h = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return h;
}
}  // namespace detail

/// Installs a process-wide sink for non-fatal findings. Returns the previous one.
inline WarningHandler set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(detail::warning_mutex());
    return std::exchange(detail::warning_handler(), std::move(handler));
}

inline void warn(const std::string& msg) {
    std::lock_guard lock(detail::warning_mutex());
    if (detail::warning_handler()) detail::warning_handler()(msg);
}

}  // namespace fieldforge
