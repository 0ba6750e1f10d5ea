#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gaitsf {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{[] {
    if (const char* env = std::getenv("GAITSF_THREADS")) {
      const int n = std::atoi(env);
      if (n > 0) return n;
    }
    return 1;
  }()};
  return cap;
}
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_cap().store(std::max(1, n)); }
inline int num_threads() { return detail::thread_cap().load(); }

/// Runs fn(i) for i in [0, n). Each index writes its own output slot, so
/// results do not depend on the thread count.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  const size_t workers = std::min<size_t>(static_cast<size_t>(num_threads()), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace gaitsf
