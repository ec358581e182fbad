// SPDX-License-Identifier: Apache-2.0
#ifndef DIVKD_COMMON_HPP
#define DIVKD_COMMON_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace divkd {

// ----------------------------------------------------------------------------
// Error taxonomy. Everything thrown by the core derives from Error so the C
// boundary can map exceptions onto status codes in one place.
// ----------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
  size_t offset;
  ParseError(const std::string& msg, size_t off)
      : Error(msg + " (at offset " + std::to_string(off) + ")"), offset(off) {}
};

struct FormatError : Error {
  using Error::Error;
};
struct FileError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct GraphError : Error {
  using Error::Error;
};
struct VocabError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct EmptyBeamError : Error {
  using Error::Error;
};
struct EmptyCorpusError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

// ----------------------------------------------------------------------------
// Deterministic RNG. A thin xoshiro-free wrapper around std::mt19937_64 with
// hand-rolled distributions so that every draw is reproducible from the seed
// alone, independent of standard-library internals.
// ----------------------------------------------------------------------------

uint64_t splitmix64(uint64_t x);
uint64_t fnv1a64(const std::string& s);

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x9E3779B97F4A7C15ull)) {}

  // Derives an independent stream for a named purpose. Streams derived from
  // the same (seed, tag) pair are identical across runs.
  static Rng derive(uint64_t seed, const std::string& tag) {
    return Rng(splitmix64(seed) ^ fnv1a64(tag));
  }
  static Rng derive(uint64_t seed, const std::string& tag, uint64_t index) {
    return Rng(splitmix64(splitmix64(seed) ^ fnv1a64(tag)) + index * 0x9E3779B97F4A7C15ull);
  }

  uint64_t next_u64();
  // Uniform in [0, 1).
  double next_double();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), n > 0.
  uint64_t next_below(uint64_t n);
  // Standard normal via Box-Muller (no cached spare, fully stateless per call pair).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// ----------------------------------------------------------------------------
// Misc helpers
// ----------------------------------------------------------------------------

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

// Static-partition parallel map over [0, n). fn must be safe to call
// concurrently for distinct indices. threads <= 1 runs inline.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace divkd

#endif
