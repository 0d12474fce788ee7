#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace vtree {

/// Shortest round-trippable decimal form of a double.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Neumaier compensated accumulator. Summation order still matters for the
/// last few ulps, so callers that promise determinism must feed it serially
/// or in a fixed partition order.
class KahanSum {
 public:
  void add(double v) {
    double t = sum_ + v;
    if (std::fabs(sum_) >= std::fabs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Stateless hash of a (seed, stream, index) triple; basis for all
/// schedule-independent randomness (e.g. per-voxel noise).
inline std::uint64_t hash_u64(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t s = seed;
  splitmix64(s);
  s ^= 0x632be59bd9b4e019ull * (stream + 1);
  splitmix64(s);
  s ^= 0xd6e8feb86659fd93ull * (index + 1);
  return splitmix64(s);
}

/// Deterministic RNG with explicit distributions (no stdlib distribution
/// objects, whose output is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) { splitmix64(state_); }

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Standard normal derived from a stateless hash; schedule-independent.
inline double hashed_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  double u1 = (double)(hash_u64(seed, stream, index * 2) >> 11) * 0x1.0p-53;
  double u2 = (double)(hash_u64(seed, stream, index * 2 + 1) >> 11) * 0x1.0p-53;
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

inline int thread_count() {
  if (const char* env = std::getenv("VESSELTREE_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : (int)hc;
}

/// Runs fn(begin, end) over [0, n) in fixed-size chunks. Chunk boundaries
/// depend only on n and the thread count, so disjoint-write kernels produce
/// identical results under any schedule.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  int nt = thread_count();
  if (nt <= 1 || n < 1024) {
    fn(0, n);
    return;
  }
  std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> threads;
  for (int t = 0; t < nt; ++t) {
    std::size_t b = (std::size_t)t * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    threads.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : threads) th.join();
}

}  // namespace vtree
