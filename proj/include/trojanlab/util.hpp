#pragma once

#include <cstddef>
#include <functional>
#include <string>

namespace trojanlab {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Verbosity from the TROJANLAB_LOG env var: error | info | debug.
LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// Fixed formatting so reruns produce byte-identical CSV output.
std::string fmt_double(double v);

// Runs fn(0..n-1) on a pool of `jobs` threads; fn must only touch its own
// index's output slot. jobs <= 1 runs inline.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace trojanlab
