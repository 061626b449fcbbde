#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace churnkit {

// Deterministic counter-based generator (splitmix-style) with named streams.
//
// Every source of randomness in the library draws from a stream keyed by a
// purpose tag plus integer keys, e.g. Rng::stream("bootstrap", {seed, member}).
// Streams are pure functions of their keys: the same key sequence yields the
// same variates on every platform, every run, and under any thread count.
class Rng {
 public:
  static std::uint64_t mix(std::uint64_t z);
  static std::uint64_t key_for(std::string_view purpose,
                               std::initializer_list<std::uint64_t> keys);
  static Rng stream(std::string_view purpose,
                    std::initializer_list<std::uint64_t> keys);

  explicit Rng(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64();
  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();
  // Uniform integer in [0, n); n must be > 0. Widening-multiply bound
  // (bias < n / 2^64, negligible and deterministic).
  std::uint64_t below(std::uint64_t n);
  // Standard Gaussian via Box-Muller; the paired variate is cached.
  double normal();

 private:
  std::uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Folds two integers into one stream key; used to derive per-member seeds
// from (train_seed, member) and similar composites.
std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b);

}  // namespace churnkit
