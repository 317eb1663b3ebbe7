#include "raptor/log.hpp"

#include <atomic>
#include <cstdio>
#include <ctime>
#include <mutex>

namespace raptor::log {

namespace {
std::atomic<Level> g_level{Level::Warn};
std::mutex g_mu;

const char* level_tag(Level lvl) {
    switch (lvl) {
    case Level::Debug: return "DD";
    case Level::Info: return "II";
    case Level::Warn: return "WW";
    case Level::Error: return "EE";
    }
    return "??";
}
} // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

void write(Level lvl, const std::string& msg) {
    if (lvl < g_level.load()) return;
    std::scoped_lock lock(g_mu);
    std::fprintf(stderr, "[raptor %s] %s\n", level_tag(lvl), msg.c_str());
}

void debug(const std::string& msg) { write(Level::Debug, msg); }
void info(const std::string& msg) { write(Level::Info, msg); }
void warn(const std::string& msg) { write(Level::Warn, msg); }
void error(const std::string& msg) { write(Level::Error, msg); }

} // namespace raptor::log
