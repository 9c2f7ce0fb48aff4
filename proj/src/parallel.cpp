#include "csunet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace csunet {

namespace {

int threads_from_env() {
  const char* env = std::getenv("CSUNET_THREADS");
  if (!env || !*env) return 0;
  try {
    return std::max(0, std::stoi(env));
  } catch (...) {
    return 0;
  }
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> value{threads_from_env()};
  return value;
}

std::atomic<bool> conv_sign_flip{false};

}  // namespace

int thread_count() { return thread_setting().load(); }
void set_thread_count(int n) { thread_setting().store(std::max(0, n)); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  const auto workers = static_cast<std::int64_t>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    const auto lo = n * w / workers;
    const auto hi = n * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (auto i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

namespace debug {
void set_conv_backward_sign_flip(bool on) { conv_sign_flip.store(on); }
bool conv_backward_sign_flip() { return conv_sign_flip.load(); }
}  // namespace debug

}  // namespace csunet
