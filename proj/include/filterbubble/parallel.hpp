#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace filterbubble {

// Work is always split into fixed-size chunks whose boundaries depend only on
// the problem size. Threads pick chunks dynamically, so any per-chunk result is
// independent of the worker count; reductions combine chunk results in chunk
// order.
inline constexpr std::size_t kChunkColumns = 256;

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kChunkColumns) {
  return (n + chunk - 1) / chunk;
}

inline unsigned resolve_workers(unsigned requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(chunk_index, begin, end) for every chunk of [0, n).
template <class Fn>
void parallel_chunks(std::size_t n, unsigned workers, Fn&& fn,
                     std::size_t chunk = kChunkColumns) {
  const std::size_t chunks = chunk_count(n, chunk);
  auto run_one = [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    fn(c, begin, std::min(n, begin + chunk));
  };
  workers = std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(std::max<std::size_t>(chunks, 1)));
  if (workers <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_one(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < chunks; c = next++) {
        try {
          run_one(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Deterministic chunked sum: fn(begin, end) returns the partial for a chunk.
template <class Fn>
double parallel_sum(std::size_t n, unsigned workers, Fn&& fn, std::size_t chunk = kChunkColumns) {
  std::vector<double> partial(chunk_count(n, chunk), 0.0);
  parallel_chunks(
      n, workers, [&](std::size_t c, std::size_t b, std::size_t e) { partial[c] = fn(b, e); }, chunk);
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace filterbubble
