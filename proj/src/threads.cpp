#include "boundwatch/threads.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace boundwatch {

std::size_t worker_count(std::size_t n_items) {
  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("BOUNDWATCH_THREADS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed >= 1 && static_cast<std::size_t>(parsed) < hw)
      hw = static_cast<std::size_t>(parsed);
    else if (parsed >= 1)
      hw = static_cast<std::size_t>(parsed);
  }
  return n_items < hw ? (n_items == 0 ? 1 : n_items) : hw;
}

namespace {
thread_local bool g_inside_parallel_for = false;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  // Tiny batches and nested calls run inline: the outer loop already owns the
  // workers, and spawning threads per item costs more than the work.
  const std::size_t workers =
      (g_inside_parallel_for || n < 32) ? 1 : worker_count(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto body = [&] {
    g_inside_parallel_for = true;
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n || failed.load(std::memory_order_relaxed)) break;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        break;
      }
    }
    g_inside_parallel_for = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
  if (failed.load()) std::rethrow_exception(error);
}

}  // namespace boundwatch
