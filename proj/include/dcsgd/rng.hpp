#pragma once

#include <cmath>
#include <cstdint>

namespace dcsgd {

// Counter-based random source. Each draw is a pure function of
// (key, counter), so a stream's full state is two integers; this is what
// makes checkpoint/resume and substream derivation exact.
//
// Substream scheme: key = mix(master_seed, purpose, index). Every consumer
// of randomness gets its own (purpose, index) pair, so changing e.g. the
// number of workers never reshuffles the dataset.
enum class StreamPurpose : std::uint64_t {
  Features = 1,
  Labels = 2,
  TrueParams = 3,
  InitParams = 4,
  Partition = 5,      // index = epoch
  ComputeTimes = 6,   // index = worker id
  EvalFeatures = 7,
  EvalLabels = 8,
  Probe = 9,          // test/verify probe generation
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

class RandomSource {
 public:
  RandomSource() = default;
  explicit RandomSource(std::uint64_t key) : key_(key) {}

  static RandomSource derive(std::uint64_t master_seed, StreamPurpose purpose,
                             std::uint64_t index = 0) {
    std::uint64_t k = detail::splitmix64(master_seed);
    k = detail::splitmix64(k ^ (static_cast<std::uint64_t>(purpose) << 32));
    k = detail::splitmix64(k ^ index);
    return RandomSource(k);
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in (0, 1]; never zero, safe under log()
  double next_uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Box-Muller; consumes exactly two counter steps per value so the
  // stream stays resumable from the counter alone (no cached spare).
  double next_gaussian() {
    double u1 = next_uniform_pos();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double next_exponential(double mean) {
    return -mean * std::log(next_uniform_pos());
  }

  // draw integer uniformly from [0, n) by rejection (unbiased)
  std::uint64_t next_below(std::uint64_t n) {
    std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace dcsgd
