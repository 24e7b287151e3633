#pragma once

#include <string_view>

namespace evseq::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

// Level comes from the EVSEQ_LOG environment variable (debug|info|warn|error|off),
// default warn. Messages go to stderr.
Level level();
void set_level(Level l);
void write(Level l, std::string_view msg);

inline void debug(std::string_view m) { write(Level::kDebug, m); }
inline void info(std::string_view m) { write(Level::kInfo, m); }
inline void warn(std::string_view m) { write(Level::kWarn, m); }

}  // namespace evseq::log
