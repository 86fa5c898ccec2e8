#include "vci/rng.hpp"

#include <cmath>
#include <numbers>

namespace vci {
namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr uint64_t kSeedSalt = 0x8f2d1c3b5a697e41ULL;
constexpr uint64_t kChildSalt = 0xd6e8feb86659fd93ULL;

// splitmix64 finalizer
uint64_t mix(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

uint64_t combine(uint64_t key, uint64_t word) {
  return mix(key ^ mix(word * kGolden + 1));
}

}  // namespace

RngStream RngStream::from_seed(uint64_t seed) {
  return RngStream(combine(kSeedSalt, seed));
}

RngStream RngStream::child(uint64_t id) const {
  return RngStream(combine(key_ ^ kChildSalt, id));
}

RngStream RngStream::child(std::string_view name) const {
  // FNV-1a over the name, then the usual derivation.
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return child(h);
}

uint64_t RngStream::next_u64() {
  return combine(key_, counter_++);
}

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller, one value per call. u1 in (0, 1] so the log is finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t RngStream::uniform_int(uint64_t n) {
  // Multiply-shift map of a full-width draw onto [0, n). The residual bias is
  // O(n / 2^64), far below anything observable at desk scale.
  return static_cast<uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

}  // namespace vci
