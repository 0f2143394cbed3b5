#include "turnwise/common.h"

#include <cstdio>

namespace turnwise {

Label LabelFromInt(int value) {
  if (value != 0 && value != 1) {
    throw UsageError("label must be 0 (NL) or 1 (MCI), got " +
                     std::to_string(value));
  }
  return static_cast<Label>(value);
}

namespace {

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t Fnv1a64(std::string_view bytes) {
  uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

uint64_t DeriveSeed(uint64_t base, std::string_view stream, uint64_t index) {
  return SplitMix64(SplitMix64(base ^ Fnv1a64(stream)) + index);
}

std::string HexU64(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace turnwise
