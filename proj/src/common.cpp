#include "common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace pctl {

double Rng::next_normal() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw Error::runtime("Rng::next_below: n must be positive");
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  for (std::uint64_t p : parts) {
    h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    Rng r(h);
    h = r.next_u64();
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return std::string(buf);
}

std::string format_double(double v) {
  // Shortest representation that parses back to the same bits.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) return std::string(buf);
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace pctl
