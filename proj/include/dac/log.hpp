#pragma once

#include <functional>
#include <string_view>

namespace dac::log {

enum class Level { info, warning, error };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes warnings and errors to stderr and drops info messages.
Sink set_sink(Sink sink);

void write(Level level, std::string_view message);

inline void info(std::string_view message) { write(Level::info, message); }
inline void warn(std::string_view message) { write(Level::warning, message); }

}  // namespace dac::log
