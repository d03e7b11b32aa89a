#include "atvd/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace atvd {

LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("ATVD_LOG");
        if (!e) return LogLevel::info;
        if (std::strcmp(e, "error") == 0) return LogLevel::error;
        if (std::strcmp(e, "debug") == 0) return LogLevel::debug;
        return LogLevel::info;
    }();
    return lvl;
}

void log_line(LogLevel lvl, const std::string& msg) {
    const char* tag = lvl == LogLevel::error ? "E" : lvl == LogLevel::info ? "I" : "D";
    std::fprintf(stderr, "[atvd %s] %s\n", tag, msg.c_str());
    std::fflush(stderr);
}

} // namespace atvd
