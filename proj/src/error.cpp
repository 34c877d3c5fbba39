#include "afd/error.hpp"

#include <iostream>
#include <mutex>
#include <sstream>

namespace afd {

namespace {

std::mutex g_sink_mutex;
WarningSink g_sink;
std::atomic<std::size_t> g_warnings{0};

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_sink_mutex);
  g_sink = std::move(sink);
}

void warn(std::string_view message) {
  g_warnings.fetch_add(1, std::memory_order_relaxed);
  std::lock_guard lock(g_sink_mutex);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

std::size_t warning_count() { return g_warnings.load(std::memory_order_relaxed); }

}  // namespace afd
