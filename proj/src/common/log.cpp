#include "common/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace evseq::log {
namespace {

Level from_env() {
  const char* v = std::getenv("EVSEQ_LOG");
  if (!v) return Level::kWarn;
  std::string s(v);
  if (s == "debug") return Level::kDebug;
  if (s == "info") return Level::kInfo;
  if (s == "error") return Level::kError;
  if (s == "off") return Level::kOff;
  return Level::kWarn;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

std::mutex& out_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

void write(Level l, std::string_view msg) {
  if (static_cast<int>(l) < current().load()) return;
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(out_mutex());
  std::cerr << "[evseq " << kNames[static_cast<int>(l)] << "] " << msg << '\n';
}

}  // namespace evseq::log
