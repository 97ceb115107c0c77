#include "cdnz/parallel.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace cdnz {
namespace {

int DefaultThreads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("CDNZ_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

std::atomic<int>& ThreadSetting() {
  static std::atomic<int> threads{DefaultThreads()};
  return threads;
}

}  // namespace

int NumThreads() { return ThreadSetting().load(); }

void SetNumThreads(int n) { ThreadSetting().store(std::max(1, n)); }

void ParallelFor(int64_t n, const std::function<void(int64_t)>& fn) {
  const int threads = static_cast<int>(std::min<int64_t>(NumThreads(), n));
  if (threads <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<size_t>(threads - 1));
  auto work = [&] {
    for (int64_t i = next++; i < n; i = next++) fn(i);
  };
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
}

}  // namespace cdnz
