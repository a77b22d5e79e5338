// SPDX-License-Identifier: Apache-2.0
#include "hsakd/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace hsakd {
namespace {

std::atomic<std::size_t> g_override{0};
std::atomic<bool> g_strict{false};
thread_local bool t_inside_worker = false;

std::size_t default_workers() {
  static const std::size_t cached = [] {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("HSAKD_THREADS")) {
      try {
        const long cap = std::stol(env);
        if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
      } catch (const std::exception&) {
        // ignore malformed values
      }
    }
    return n;
  }();
  return cached;
}

}  // namespace

std::size_t worker_count() {
  if (g_strict.load()) return 1;
  const std::size_t o = g_override.load();
  return o == 0 ? default_workers() : o;
}

void set_worker_count(std::size_t n) { g_override.store(n); }

void set_strict_mode(bool on) { g_strict.store(on); }

bool strict_mode() { return g_strict.load(); }

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  min_chunk = std::max<std::size_t>(min_chunk, 1);
  const std::size_t max_chunks = (n + min_chunk - 1) / min_chunk;
  // nested calls run inline so worker threads never fan out again
  const std::size_t chunks = t_inside_worker ? 1 : std::min(worker_count(), max_chunks);
  if (chunks <= 1) {
    body(0, n);
    return;
  }
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> threads;
    threads.reserve(chunks - 1);
    for (std::size_t c = 1; c < chunks; ++c) {
      const std::size_t begin = c * per;
      const std::size_t end = std::min(n, begin + per);
      if (begin >= end) break;
      threads.emplace_back([&body, &errors, c, begin, end] {
        t_inside_worker = true;
        try {
          body(begin, end);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
    const bool was_inside = t_inside_worker;
    t_inside_worker = true;
    try {
      body(0, std::min(n, per));
    } catch (...) {
      errors[0] = std::current_exception();
    }
    t_inside_worker = was_inside;
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace hsakd
