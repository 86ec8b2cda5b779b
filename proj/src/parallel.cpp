#include "ppcn/parallel.hpp"

#include <cstdlib>
#include <string>

namespace ppcn::parallel {

namespace {
thread_local int tl_override = 0;

int from_environment() {
  int n = 0;
  if (const char* env = std::getenv("PPCN_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (...) {
      n = 0;
    }
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}
}  // namespace

int thread_count() {
  if (tl_override > 0) return tl_override;
  static const int env = from_environment();
  return env;
}

void set_thread_count(int n) { tl_override = std::max(0, n); }

}  // namespace ppcn::parallel
