#include "dac/log.hpp"

#include <iostream>
#include <mutex>

namespace dac::log {
namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

Sink& current_sink() {
    static Sink sink = [](Level level, std::string_view message) {
        if (level == Level::info) return;
        std::cerr << (level == Level::warning ? "warning: " : "error: ") << message << '\n';
    };
    return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
    std::lock_guard lock(sink_mutex());
    std::swap(current_sink(), sink);
    return sink;
}

void write(Level level, std::string_view message) {
    std::lock_guard lock(sink_mutex());
    if (current_sink()) current_sink()(level, message);
}

}  // namespace dac::log
