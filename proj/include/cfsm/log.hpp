#pragma once

#include <cstddef>
#include <string_view>

namespace cfsm::log {

/// Writes "warning: <msg>" to stderr unless silenced, and counts it.
void warn(std::string_view msg);

std::size_t warning_count();
void set_quiet(bool quiet);

}  // namespace cfsm::log
