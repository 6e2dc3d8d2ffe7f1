#pragma once

#include <cstdint>
#include <random>

namespace fmed {

// Independent stream for task `index` under a master seed, so results do not
// depend on which worker runs the task.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace fmed
