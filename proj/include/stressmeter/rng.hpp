#pragma once

#include "common.hpp"

#include <random>
#include <string_view>

namespace stressmeter {

/// Named random streams derived from one seed. Each consumer asks for its
/// own stream by name, so adding a consumer never shifts another's draws.
class RandomStreams {
 public:
  explicit RandomStreams(std::uint64_t seed) : seed_(seed) {}

  std::mt19937_64 stream(std::string_view name) const {
    Fnv1a h;
    h.update(seed_);
    h.update(name);
    // splitmix64 finalizer spreads the hash over all seed bits
    std::uint64_t z = h.value() + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return std::mt19937_64(z);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace stressmeter
