#include "bayeseg/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace bayeseg {

namespace {

int g_threads = 0;

int resolve_threads() {
  if (g_threads > 0) return g_threads;
  static int env_threads = [] {
    if (const char* s = std::getenv("BAYESEG_THREADS")) {
      const int v = std::atoi(s);
      if (v > 0) return v;
    }
    return 0;
  }();
  if (env_threads > 0) return env_threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

}  // namespace

void set_thread_count(int n) { g_threads = n; }

int thread_count() { return resolve_threads(); }

std::size_t chunk_count(std::size_t n, std::size_t grain) {
  if (n == 0) return 0;
  if (grain == 0) grain = 1;
  return (n + grain - 1) / grain;
}

void parallel_chunks(std::size_t n, std::size_t grain,
                     const std::function<void(std::size_t, std::size_t,
                                              std::size_t)>& fn) {
  if (n == 0) return;
  if (grain == 0) grain = 1;
  const std::size_t chunks = chunk_count(n, grain);
  const int workers =
      static_cast<int>(std::min<std::size_t>(chunks, resolve_threads()));
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t b = c * grain;
      fn(c, b, std::min(n, b + grain));
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      const std::size_t b = c * grain;
      fn(c, b, std::min(n, b + grain));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

double parallel_sum(std::size_t n, std::size_t grain,
                    const std::function<double(std::size_t, std::size_t)>& fn) {
  const std::size_t chunks = chunk_count(n, grain);
  std::vector<double> partial(chunks, 0.0);
  parallel_chunks(n, grain, [&](std::size_t c, std::size_t b, std::size_t e) {
    partial[c] = fn(b, e);
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace bayeseg
