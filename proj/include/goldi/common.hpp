#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace goldi {

// Rows are items (tokens, batch entries), columns are feature channels.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(what);
}

// Counter-based RNG. Streams are derived from (seed, tag, indices) so any
// draw is reproducible without carrying sequential generator state across
// steps or threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
    // avoid the all-zero fixed point and warm up
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform integer in [0, n)
  std::uint64_t uniform(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  // uniform real in [0, 1)
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform_real();
  }

  double normal() {
    // Box-Muller; one draw per call keeps the stream position predictable.
    double u1 = uniform_real();
    double u2 = uniform_real();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  v *= 0xff51afd7ed558ccdull;
  v ^= v >> 33;
  h ^= v;
  h *= 0xc4ceb9fe1a85ec53ull;
  return h ^ (h >> 29);
}

inline std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Derive an independent stream from a seed, a purpose tag and indices.
inline Rng rng_stream(std::uint64_t seed, const std::string& tag,
                      std::uint64_t a = 0, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
  std::uint64_t h = hash_combine(seed, hash_str(tag));
  h = hash_combine(h, a);
  h = hash_combine(h, b);
  h = hash_combine(h, c);
  return Rng(h);
}

inline int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("GOLDI_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(hw == 0 ? 1 : (hw > 8 ? 8 : hw));
  }();
  return cached;
}

// Static partition over [0, n). Each worker owns a contiguous range, so
// disjoint writes stay deterministic for any thread count.
inline void parallel_for(Index n, const std::function<void(Index, Index)>& fn,
                         Index min_grain = 1) {
  if (n <= 0) return;
  int threads = max_threads();
  if (threads <= 1 || n < 2 * min_grain) {
    fn(0, n);
    return;
  }
  Index chunks = std::min<Index>(threads, (n + min_grain - 1) / min_grain);
  Index per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(chunks) - 1);
  for (Index t = 1; t < chunks; ++t) {
    Index lo = t * per;
    Index hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(0, std::min(per, n));
  for (auto& th : pool) th.join();
}

}  // namespace goldi
