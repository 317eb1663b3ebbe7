#ifndef RAPTOR_LOG_HPP
#define RAPTOR_LOG_HPP

#include <string>

namespace raptor::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

void set_level(Level lvl);
Level level();
void write(Level lvl, const std::string& msg);

void debug(const std::string& msg);
void info(const std::string& msg);
void warn(const std::string& msg);
void error(const std::string& msg);

} // namespace raptor::log

#endif
