#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rmtq/error.hpp"

namespace rmtq::harness {

/// Worker count from RMTQ_THREADS, else the hardware concurrency.
inline std::size_t default_threads() {
  if (const char* env = std::getenv("RMTQ_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("RMTQ_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// out[k] = fn(k) for k < count, evaluated on up to `threads` workers. Results
/// are returned in index order; the first failure by index is rethrown.
template <class Fn>
auto parallel_map(std::size_t count, std::size_t threads, Fn&& fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::optional<R>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < count; k = next++) {
      try {
        slots[k].emplace(fn(k));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t nworkers = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(count, 1));
  if (nworkers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    for (std::size_t w = 0; w < nworkers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace rmtq::harness
