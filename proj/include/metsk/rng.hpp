#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace metsk {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (base, tags...). Same inputs, same seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(base);
  for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  return Rng(derive_seed(base, tags));
}

// Stream tags so call sites do not collide.
enum StreamTag : std::uint64_t {
  kStreamInit = 1,
  kStreamSource = 2,
  kStreamTarget = 3,
  kStreamSplit = 4,
  kStreamHeadInit = 5,
  kStreamEval = 6,
  kStreamSynth = 7,
  kStreamFolds = 8,
  kStreamExtract = 9,
  kStreamProbe = 10,
};

}  // namespace metsk
