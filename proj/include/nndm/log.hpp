#pragma once

#include <string_view>

namespace nndm::log {

enum class Level { debug = 0, info = 1, warning = 2, error = 3, off = 4 };

void set_level(Level level);
Level level();

void info(std::string_view message);
void warning(std::string_view message);
void error(std::string_view message);

}  // namespace nndm::log
