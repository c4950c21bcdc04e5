#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace pctl {

// Error taxonomy. The kind maps onto the process exit codes used by the
// CLI and the C API status values: config/usage -> 2, verification -> 1,
// runtime abort -> 3.
enum class ErrorKind {
  Config,    // bad config key/value, usage error, malformed or missing input
  Verify,    // a verification check failed
  Runtime,   // non-finite values, aborted training, internal invariant breach
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_status() const {
    switch (kind_) {
      case ErrorKind::Verify: return 1;
      case ErrorKind::Config: return 2;
      case ErrorKind::Runtime: return 3;
    }
    return 3;
  }

  static Error config(std::string msg) { return Error(ErrorKind::Config, std::move(msg)); }
  static Error verify(std::string msg) { return Error(ErrorKind::Verify, std::move(msg)); }
  static Error runtime(std::string msg) { return Error(ErrorKind::Runtime, std::move(msg)); }

 private:
  ErrorKind kind_;
};

// Deterministic PRNG (splitmix64). The standard <random> distributions are
// implementation-defined, which would break the bitwise reproducibility
// contract, so all randomness in the project flows through this generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller.
  double next_normal();

  // Unbiased uniform draw from {0, ..., n-1}.
  std::uint64_t next_below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Mixes a list of values into a single stream seed so that nested loops
// (epoch, batch, sample, ...) get independent, reproducible substreams.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// FNV-1a 64-bit over a byte string; used for dataset identity in manifests.
std::uint64_t fnv1a64(const std::string& bytes);
std::string to_hex(std::uint64_t value);

// Shortest decimal form that round-trips a double exactly.
std::string format_double(double v);

}  // namespace pctl
