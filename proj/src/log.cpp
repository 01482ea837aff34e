#include "cfsm/log.hpp"

#include <atomic>
#include <iostream>

namespace cfsm::log {

namespace {
std::atomic<std::size_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
}  // namespace

void warn(std::string_view msg) {
  ++g_warnings;
  if (!g_quiet) std::cerr << "warning: " << msg << '\n';
}

std::size_t warning_count() { return g_warnings; }
void set_quiet(bool quiet) { g_quiet = quiet; }

}  // namespace cfsm::log
