#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace trellis::logging {

enum class Level { Debug = 0, Info = 1, Warn = 2, ErrorLevel = 3 };

using Sink = std::function<void(Level, std::string_view)>;

namespace detail {
struct State {
    std::mutex mu;
    Level threshold = Level::Warn;
    Sink sink; // empty -> stderr
};
inline State& state() {
    static State s;
    return s;
}
} // namespace detail

inline void set_level(Level lvl) {
    std::scoped_lock lock(detail::state().mu);
    detail::state().threshold = lvl;
}

// Replace the output sink (tests capture warnings this way). Pass nullptr to
// restore the stderr default.
inline void set_sink(Sink sink) {
    std::scoped_lock lock(detail::state().mu);
    detail::state().sink = std::move(sink);
}

inline void log(Level lvl, std::string_view msg) {
    auto& st = detail::state();
    std::scoped_lock lock(st.mu);
    if (lvl < st.threshold) return;
    if (st.sink) {
        st.sink(lvl, msg);
        return;
    }
    const char* tag = lvl == Level::Debug  ? "debug"
                      : lvl == Level::Info ? "info"
                      : lvl == Level::Warn ? "warn"
                                           : "error";
    std::cerr << "[trellis:" << tag << "] " << msg << "\n";
}

inline void debug(std::string_view msg) { log(Level::Debug, msg); }
inline void info(std::string_view msg) { log(Level::Info, msg); }
inline void warn(std::string_view msg) { log(Level::Warn, msg); }
inline void error(std::string_view msg) { log(Level::ErrorLevel, msg); }

} // namespace trellis::logging
