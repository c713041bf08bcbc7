#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace mdx::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Verbosity comes from the MDX_LOG env var: error|warn|info|debug (default warn).
inline Level threshold() {
    static Level lvl = [] {
        const char* e = std::getenv("MDX_LOG");
        if (!e) return Level::kWarn;
        if (std::strcmp(e, "error") == 0) return Level::kError;
        if (std::strcmp(e, "info") == 0) return Level::kInfo;
        if (std::strcmp(e, "debug") == 0) return Level::kDebug;
        return Level::kWarn;
    }();
    return lvl;
}

inline void emit(Level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[mdx:%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

inline void error(const std::string& msg) { emit(Level::kError, msg); }
inline void warn(const std::string& msg) { emit(Level::kWarn, msg); }
inline void info(const std::string& msg) { emit(Level::kInfo, msg); }
inline void debug(const std::string& msg) { emit(Level::kDebug, msg); }

}  // namespace mdx::log
