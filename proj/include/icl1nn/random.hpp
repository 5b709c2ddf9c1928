#pragma once

// Seeded random streams and a block-partitioned Monte-Carlo driver whose
// results do not depend on the number of worker threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <initializer_list>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace icl1nn {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Hashes a master seed and a path of integers (purpose tag, step, block ...)
/// into the seed of an independent sub-stream.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Engine make_stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Engine{derive_seed(master, path)};
}

/// Purpose tags keep the sub-streams of different consumers apart.
namespace stream {
inline constexpr std::uint64_t kGradPopulation = 1;
inline constexpr std::uint64_t kGradDiag = 2;
inline constexpr std::uint64_t kEval = 3;
inline constexpr std::uint64_t kSgdData = 4;
inline constexpr std::uint64_t kSgdInit = 5;
inline constexpr std::uint64_t kSgdShuffle = 6;
inline constexpr std::uint64_t kShiftTest = 7;
inline constexpr std::uint64_t kGeometry = 8;
inline constexpr std::uint64_t kLandscape = 9;
inline constexpr std::uint64_t kVerify = 10;
}  // namespace stream

/// Worker count from ICL1NN_WORKERS, defaulting to 1.
inline int default_workers() {
  if (const char* env = std::getenv("ICL1NN_WORKERS")) {
    try {
      int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (...) {
    }
  }
  return 1;
}

/// Samples per Monte-Carlo block. Each block owns one sub-stream, so the
/// partition (and hence every result) is fixed by the sample count alone.
inline constexpr std::size_t kBlockSize = 1024;

struct BlockRange {
  std::size_t index;
  std::size_t begin;
  std::size_t count;
};

/// Runs `fn(BlockRange) -> Partial` over ceil(total / block) blocks on up to
/// `workers` threads and returns the partials in block order.
template <class Partial, class Fn>
std::vector<Partial> run_blocks(std::size_t total, int workers, Fn&& fn,
                                std::size_t block = kBlockSize) {
  const std::size_t n_blocks = total == 0 ? 0 : (total + block - 1) / block;
  std::vector<Partial> out(n_blocks);
  auto range_of = [&](std::size_t b) {
    const std::size_t begin = b * block;
    return BlockRange{b, begin, std::min(block, total - begin)};
  };
  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n_blocks);
  if (n_threads <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) out[b] = fn(range_of(b));
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_threads);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t b = next++; b < n_blocks; b = next++) out[b] = fn(range_of(b));
      } catch (...) {
        errors[t] = std::current_exception();
        next = n_blocks;
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads; results in index order.
template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t n, int workers, Fn&& fn) {
  return run_blocks<Result>(
      n, workers, [&](BlockRange r) { return fn(r.index); }, 1);
}

/// Streaming mean/variance (Welford) with an order-fixed merge.
struct RunningStat {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) noexcept {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  void merge(const RunningStat& o) noexcept {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
    const double delta = o.mean - mean;
    const double total = na + nb;
    mean += delta * nb / total;
    m2 += o.m2 + delta * delta * na * nb / total;
    n += o.n;
  }
  double variance() const noexcept { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_of_mean() const noexcept {
    return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

}  // namespace icl1nn
