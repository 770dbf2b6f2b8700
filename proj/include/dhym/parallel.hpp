#pragma once

#include <cstdlib>
#include <cstddef>
#include <span>
#include <thread>
#include <vector>

namespace dhym {

// Worker cap for data-parallel grid maps. DHYM_THREADS overrides the
// hardware count; reductions stay fixed-order regardless (see pairwise_sum).
inline unsigned worker_count() {
  static const unsigned cached = [] {
    if (const char* env = std::getenv("DHYM_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1 && v <= 256) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : (hw > 16u ? 16u : hw);
  }();
  return cached;
}

// Runs body(i) for i in [0, count). Shards across threads when more than one
// worker is available and the range is large enough to be worth it. Bodies
// must write only to disjoint slots; no reduction happens here.
template <class F>
void parallel_for(std::size_t count, F&& body) {
  const unsigned workers = worker_count();
  if (workers <= 1 || count < 2048) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const std::size_t shards = workers;
  std::vector<std::thread> pool;
  pool.reserve(shards - 1);
  const std::size_t chunk = (count + shards - 1) / shards;
  for (std::size_t s = 1; s < shards; ++s) {
    const std::size_t lo = s * chunk;
    if (lo >= count) break;
    const std::size_t hi = lo + chunk < count ? lo + chunk : count;
    pool.emplace_back([&body, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  const std::size_t hi0 = chunk < count ? chunk : count;
  for (std::size_t i = 0; i < hi0; ++i) body(i);
  for (auto& t : pool) t.join();
}

inline std::size_t plan_shards(std::size_t count, std::size_t min_chunk = 2048) {
  const unsigned workers = worker_count();
  if (workers <= 1 || count < min_chunk) return 1;
  return workers;
}

// Runs body(lo, hi, shard) over a partition of [0, count) into `shards`
// blocks, as planned by plan_shards. Shard-local reductions merge afterwards;
// min/max merges are order-independent, so results stay deterministic.
template <class F>
void parallel_blocks(std::size_t count, std::size_t shards, F&& body) {
  if (shards <= 1) {
    body(std::size_t{0}, count, std::size_t{0});
    return;
  }
  const std::size_t chunk = (count + shards - 1) / shards;
  std::vector<std::thread> pool;
  pool.reserve(shards - 1);
  for (std::size_t s = 1; s < shards; ++s) {
    const std::size_t lo = s * chunk;
    if (lo >= count) break;
    const std::size_t hi = lo + chunk < count ? lo + chunk : count;
    pool.emplace_back([&body, lo, hi, s] { body(lo, hi, s); });
  }
  body(std::size_t{0}, chunk < count ? chunk : count, std::size_t{0});
  for (auto& t : pool) t.join();
}

// Fixed-order pairwise summation; deterministic for a given element order and
// more accurate than a running sum on long grids.
template <class T>
T pairwise_sum(std::span<const T> v) {
  if (v.size() <= 32) {
    T acc{};
    for (const T& x : v) acc += x;
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

template <class T>
T pairwise_mean(std::span<const T> v) {
  return pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace dhym
