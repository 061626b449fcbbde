#include "churnkit/rng.hpp"

#include <cmath>
#include <numbers>

namespace churnkit {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

std::uint64_t Rng::mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

std::uint64_t Rng::key_for(std::string_view purpose,
                           std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = fnv1a(purpose);
  for (std::uint64_t k : keys) h = mix(h ^ mix(k + kGolden));
  return h;
}

Rng Rng::stream(std::string_view purpose,
                std::initializer_list<std::uint64_t> keys) {
  return Rng(key_for(purpose, keys));
}

std::uint64_t Rng::next_u64() {
  state_ += kGolden;
  return mix(state_);
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // (u * n) >> 64 without __int128 portability concerns on this toolchain.
  unsigned __int128 wide = static_cast<unsigned __int128>(next_u64());
  wide *= n;
  return static_cast<std::uint64_t>(wide >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform01();
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) {
  return Rng::mix(Rng::mix(a + kGolden) ^ (b + kGolden));
}

}  // namespace churnkit
