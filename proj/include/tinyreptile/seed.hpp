// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace tinyreptile {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent child seed for (stream, index) under `base`. Every random
/// stream in an experiment is derived this way from the master seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(base ^ mix64(stream)) + index);
}

}  // namespace tinyreptile
