#include "trojanlab/util.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <thread>
#include <vector>

namespace trojanlab {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("TROJANLAB_LOG");
    if (!env) return LogLevel::info;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    return LogLevel::info;
  }();
  return level;
}

void log_error(const std::string& msg) { std::cerr << "[error] " << msg << "\n"; }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << "[debug] " << msg << "\n";
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const std::size_t count = std::min(jobs, n);
  workers.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace trojanlab
