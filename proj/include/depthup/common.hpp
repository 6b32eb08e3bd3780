#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace depthup {

// Error taxonomy. CLI maps ConfigError to exit code 1, data/format errors to 2.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};
struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& msg) : std::runtime_error("metric error: " + msg) {}
};

// SplitMix64. Used for seed mixing and as the hash behind procedural textures
// and dropout patterns; fully portable, unlike std distributions.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) { return splitmix64(seed ^ (salt * 0x9e3779b97f4a7c15ULL)); }

// Deterministic RNG with an explicit output mapping (std distributions are
// implementation-defined, which would break bit-reproducibility claims).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0xd1b54a32d192ed03ULL)) {}

  uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }
  // uniform in [0, 1)
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }
  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  uint64_t state_;
};

// Little-endian binary I/O helpers for the weight / flow file formats.
template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  // this codebase targets little-endian hosts; memcpy is the LE layout
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError("truncated while reading " + what);
  return v;
}

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(p), std::streamsize(n)))
    throw FormatError("truncated while reading " + what);
}

}  // namespace depthup
