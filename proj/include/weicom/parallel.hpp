#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string_view>
#include <thread>
#include <vector>

namespace weicom {

/// Worker count from WEICOM_THREADS. Unset, empty, unparsable or 0 means
/// "auto" (hardware concurrency).
inline std::size_t default_thread_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("WEICOM_THREADS");
  if (env == nullptr) return hw;
  std::string_view text(env);
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value == 0) return hw;
  return value;
}

/// Runs body(begin, end) over contiguous chunks of [0, count). Chunk
/// boundaries only affect which thread computes which index, so any body that
/// writes index-local results is deterministic for every thread count.
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
  if (count == 0) return;
  threads = std::clamp<std::size_t>(threads, 1, count);
  if (threads == 1) {
    body(std::size_t{0}, count);
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  workers.reserve(threads - 1);
  const std::size_t chunk = (count + threads - 1) / threads;

  auto run = [&](std::size_t begin, std::size_t end) {
    try {
      body(begin, end);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  for (std::size_t t = 1; t < threads; ++t) {
    std::size_t begin = t * chunk;
    if (begin >= count) break;
    workers.emplace_back(run, begin, std::min(count, begin + chunk));
  }
  run(0, std::min(count, chunk));
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace weicom
