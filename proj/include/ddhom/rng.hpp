#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ddhom {

// Philox4x32-10 counter-based generator. One (seed, stream) pair defines an
// independent deterministic sequence; drawing never mutates global state
// other than the counter, so runs are bitwise reproducible across platforms.
class Philox {
 public:
  static constexpr const char* kName = "philox4x32-10";

  Philox(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint32_t next_u32() {
    if (avail_ == 0) refill();
    return block_[4 - avail_--];
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Rejection-free modulo is fine here: the
  // bias for n << 2^64 is far below anything observable in these pipelines.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint32_t mulhi(std::uint32_t a, std::uint32_t b) {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(a) * b) >> 32);
  }
  static std::uint32_t mullo(std::uint32_t a, std::uint32_t b) { return a * b; }

  void refill() {
    std::uint32_t c0 = static_cast<std::uint32_t>(counter_);
    std::uint32_t c1 = static_cast<std::uint32_t>(counter_ >> 32);
    std::uint32_t c2 = static_cast<std::uint32_t>(stream_);
    std::uint32_t c3 = static_cast<std::uint32_t>(stream_ >> 32);
    std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
    std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
    for (int round = 0; round < 10; ++round) {
      std::uint32_t hi0 = mulhi(0xD2511F53u, c0), lo0 = mullo(0xD2511F53u, c0);
      std::uint32_t hi1 = mulhi(0xCD9E8D57u, c2), lo1 = mullo(0xCD9E8D57u, c2);
      std::uint32_t n0 = hi1 ^ c1 ^ k0;
      std::uint32_t n1 = lo1;
      std::uint32_t n2 = hi0 ^ c3 ^ k1;
      std::uint32_t n3 = lo0;
      c0 = n0;
      c1 = n1;
      c2 = n2;
      c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    block_ = {c0, c1, c2, c3};
    ++counter_;
    avail_ = 4;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int avail_ = 0;
};

// Named sub-streams so independent pipeline stages never share a sequence.
enum class RngStream : std::uint64_t {
  InitialComposition = 1,
  BoundarySampling = 2,
  LoadingSampling = 3,
  DatasetSplit = 4,
  KFold = 5,
  WeightInit = 6,
  SearchSampling = 7,
};

inline Philox make_rng(std::uint64_t seed, RngStream stream, std::uint64_t salt = 0) {
  return Philox(seed, static_cast<std::uint64_t>(stream) + (salt << 8));
}

// Deterministic Fisher-Yates; std::shuffle is implementation-defined.
template <typename T>
void shuffle(std::vector<T>& xs, Philox& rng) {
  for (std::size_t i = xs.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(xs[i - 1], xs[j]);
  }
}

}  // namespace ddhom
