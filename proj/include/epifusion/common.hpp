#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epifusion {

// Error hierarchy. DataError maps to CLI exit code 3, NumericError to 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

struct FormatError : DataError {
  using DataError::DataError;
};
struct IndexOutOfRange : DataError {
  using DataError::DataError;
};

struct DepthNonPositive : NumericError {
  using NumericError::NumericError;
};
struct DegenerateGeometry : NumericError {
  using NumericError::NumericError;
};
struct DegenerateRay : NumericError {
  using NumericError::NumericError;
};
struct DegenerateBaseline : NumericError {
  using NumericError::NumericError;
};
struct InvalidDim : NumericError {
  using NumericError::NumericError;
};
struct ShapeMismatch : NumericError {
  using NumericError::NumericError;
};
struct NonFinite : NumericError {
  using NumericError::NumericError;
};

// Deterministic RNG. Distributions are hand-rolled so that streams do not
// depend on the standard library implementation; all randomness in the
// project flows from a single user seed through named substreams.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) {
    state_ = splitmix(seed ^ (stream * 0x9e3779b97f4a7c15ULL + 0x1234567ULL));
    if (state_ == 0) state_ = 0x4d595df4d0f33173ULL;
    have_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    // xorshift64*
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  uint64_t state_;
  bool have_spare_;
  double spare_;
};

// Named RNG substreams so that adding a consumer never shifts another one.
enum class RngStream : uint64_t {
  RigJitter = 1,
  SkeletonPhases = 2,
  RenderNoise = 3,
  ParamInit = 4,
  BatchShuffle = 5,
  TriangulationNoise = 6,
};

inline Rng make_rng(uint64_t seed, RngStream s) {
  return Rng(seed, static_cast<uint64_t>(s));
}

// Little-endian binary IO. The build targets little-endian hosts; the
// helpers keep the file formats explicit about it.
inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("unexpected end of file reading u32");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

inline float read_f32(std::istream& is) {
  uint32_t u = read_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline void write_f32_array(std::ostream& os, const float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) write_f32(os, p[i]);
}

inline void read_f32_array(std::istream& is, float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] = read_f32(is);
}

// CRC-32 (IEEE), used by the dataset pose file header.
inline uint32_t crc32(const unsigned char* data, size_t n, uint32_t crc = 0) {
  static const uint32_t* table = [] {
    static uint32_t t[256];
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

}  // namespace epifusion
