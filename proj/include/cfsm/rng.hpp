#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cfsm {

using Rng = std::mt19937_64;

/// Independent generator for a named subsystem ("init", "shuffle", "kshot",
/// ...) derived from the run seed, so changing how much one subsystem draws
/// never shifts another's sequence.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace cfsm
