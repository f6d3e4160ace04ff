#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ub {

// Error codes shared with the C API (see include/unibrain.h).
enum class ErrCode : int {
  io = 1,
  parse = 2,
  validation = 3,
  shape = 4,
  config = 5,
  checkpoint = 6,
  runtime = 7,
};

class Error : public std::runtime_error {
public:
  Error(ErrCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrCode code() const noexcept { return code_; }

private:
  ErrCode code_;
};

[[noreturn]] inline void fail(ErrCode code, const std::string& msg) {
  throw Error(code, msg);
}

const char* err_code_name(ErrCode code);

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 stream; identical output on every platform,
// so seeds reproduce checkpoints and corpora bit-for-bit.

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent substream seed (e.g. per case, per epoch).
inline std::uint64_t seed_stream(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ull));
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // standard normal via Box-Muller (spare cached)
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Strings

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
// collapse runs of whitespace to single spaces and trim the ends
std::string normalize_ws(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parallelism cap. UNIBRAIN_THREADS limits worker threads; results are
// bit-identical for any thread count because workers write disjoint ranges.

int max_threads();

void parallel_for(long n, const std::function<void(long, long)>& body);

}  // namespace ub
