#include "vitst/parallel.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace vitst {

namespace {
std::atomic<int> g_max_threads{1};
}

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n); }
int max_threads() { return g_max_threads.load(); }

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  int workers = g_max_threads.load();
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  size_t w = std::min<size_t>(static_cast<size_t>(workers), n);
  std::vector<std::thread> threads;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  threads.reserve(w);
  size_t chunk = (n + w - 1) / w;
  for (size_t t = 0; t < w; ++t) {
    size_t begin = t * chunk;
    size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, begin, end] {
      try {
        for (size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        if (!failed.exchange(true)) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace vitst
