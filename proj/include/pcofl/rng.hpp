#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pcofl::rng {

// Every random draw in the project flows from one root seed through named
// sub-streams.  A stream is identified by a label plus up to three integer
// coordinates (batch, round, client, ...); the derived 64-bit seed feeds a
// fresh mt19937_64.  Streams are therefore independent of call order and
// stable when unrelated config fields change.

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive(std::uint64_t root, std::string_view stream,
                               std::uint64_t a = 0, std::uint64_t b = 0,
                               std::uint64_t c = 0) {
  std::uint64_t h = splitmix(root ^ fnv1a(stream));
  h = splitmix(h ^ splitmix(a));
  h = splitmix(h ^ splitmix(b + 0x51ed2701));
  h = splitmix(h ^ splitmix(c + 0xa24baed4));
  return h;
}

inline std::mt19937_64 engine(std::uint64_t root, std::string_view stream,
                              std::uint64_t a = 0, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  return std::mt19937_64(derive(root, stream, a, b, c));
}

}  // namespace pcofl::rng
