#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ssd {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a cheap bijective mixer for deriving seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Fans a single run seed out into independent named streams, so that
/// consuming randomness in one component never shifts another's draws.
class SeedSplitter {
 public:
  explicit SeedSplitter(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t derive(std::string_view name) const { return mix64(seed_ ^ mix64(fnv1a(name))); }
  std::uint64_t derive(std::string_view name, std::uint64_t salt) const { return mix64(derive(name) ^ mix64(salt)); }
  Rng stream(std::string_view name) const { return Rng(derive(name)); }
  Rng stream(std::string_view name, std::uint64_t salt) const { return Rng(derive(name, salt)); }

 private:
  std::uint64_t seed_;
};

/// Uniform integer in [0, bound).
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(rng);
}

}  // namespace ssd
