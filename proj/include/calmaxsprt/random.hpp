#ifndef CALMAXSPRT_RANDOM_HPP
#define CALMAXSPRT_RANDOM_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace calmaxsprt {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Hash of a (seed, index, channel) triple; used to derive independent streams.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                           std::uint64_t channel = 0) noexcept {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64(s);
  s = h ^ (index + 0x632be59bd9b4e019ULL);
  h = splitmix64(s);
  s = h ^ (channel * 0x8cb92ba72f3d8dd7ULL + 0x9e3779b97f4a7c15ULL);
  return splitmix64(s);
}

/// xoshiro256** (Blackman & Vigna). Cheap to seed, so every Monte Carlo replicate can own one.
/// Satisfies UniformRandomBitGenerator for use with <random> distributions.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Xoshiro256(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
};

/// Independent engine for stream `index` on `channel` under `seed`.
inline Xoshiro256 make_stream(std::uint64_t seed, std::uint64_t index,
                              std::uint64_t channel = 0) noexcept {
  return Xoshiro256(derive_seed(seed, index, channel));
}

/// 0 means "use hardware concurrency".
inline unsigned resolve_workers(unsigned requested) noexcept {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1U : hw;
}

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; fn must only write to
/// storage owned by index i, so results never depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  workers = static_cast<unsigned>(std::min<std::size_t>(resolve_workers(workers), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace calmaxsprt

#endif
