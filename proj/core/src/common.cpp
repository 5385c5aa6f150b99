#include "hallu/common.hpp"

namespace hallu {

bool is_special_literal(std::string_view s) noexcept {
  return s == kPadLiteral || s == kSubjectLiteral || s == kPredicateLiteral ||
         s == kObjectLiteral || s == kEosLiteral;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) noexcept {
  std::uint64_t h = basis;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b));
}

std::uint64_t seeded_hash(std::string_view data, std::uint64_t seed) noexcept {
  return mix64(fnv1a64(data) ^ mix64(seed));
}

double unit_interval(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace hallu
