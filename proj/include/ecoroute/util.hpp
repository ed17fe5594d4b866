#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ecoroute/errors.hpp"

namespace ecoroute {

// ---------------------------------------------------------------------------
// Seeding. All randomized stages derive per-unit seeds from one master seed so
// results are independent of thread scheduling and iteration order.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b));
}

// FNV-1a, used for input digests in run manifests. Not cryptographic.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    if (!in) break;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Deterministic number formatting (shortest round-trip form).
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, bool* ok = nullptr) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  bool good = res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
  if (ok) {
    *ok = good;
    return good ? v : 0.0;
  }
  if (!good) throw ParseError("not a number: '" + std::string(s) + "'");
  return v;
}

inline long long parse_long(std::string_view s, bool* ok = nullptr) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  bool good = res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
  if (ok) {
    *ok = good;
    return good ? v : 0;
  }
  if (!good) throw ParseError("not an integer: '" + std::string(s) + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Parallelism. Default degree is machine parallelism, overridable by the CLI.
// ---------------------------------------------------------------------------

inline unsigned& default_thread_count() {
  static unsigned n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs fn(i) for i in [0, n). Work is chunked contiguously; fn must be safe
/// to call concurrently for distinct i. Exceptions propagate to the caller.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned threads = 0) {
  if (threads == 0) threads = default_thread_count();
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = std::max<std::size_t>(1, n / (threads * 8));
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (;;) {
          const std::size_t begin = next.fetch_add(chunk);
          if (begin >= n) break;
          const std::size_t end = std::min(n, begin + chunk);
          for (std::size_t i = begin; i < end; ++i) fn(i);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Logging to stderr, verbosity from ECOROUTE_LOG (error|warn|info|debug).
// ---------------------------------------------------------------------------

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("ECOROUTE_LOG");
    if (!env) return LogLevel::kWarn;
    if (std::strcmp(env, "error") == 0) return LogLevel::kError;
    if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
    if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

inline void log_warn(const std::string& msg) {
  if (log_level() >= LogLevel::kWarn) std::cerr << "[warn] " << msg << "\n";
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[info] " << msg << "\n";
}

}  // namespace ecoroute
