#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace atvd {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

// Contract violations (bad shapes, bad ranges) vs. runtime failures (I/O,
// non-finite state) are thrown as distinct exception types.
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level(); // parsed once from ATVD_LOG
void log_line(LogLevel lvl, const std::string& msg);

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

template <typename... Args>
void log_info(Args&&... args) {
    if (log_level() >= LogLevel::info) log_line(LogLevel::info, cat(std::forward<Args>(args)...));
}

template <typename... Args>
void log_debug(Args&&... args) {
    if (log_level() >= LogLevel::debug) log_line(LogLevel::debug, cat(std::forward<Args>(args)...));
}

template <typename... Args>
void log_error(Args&&... args) {
    log_line(LogLevel::error, cat(std::forward<Args>(args)...));
}

} // namespace atvd
