#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tslab {

// All tensor/metric arithmetic runs in double precision. The canonical
// on-disk formats stay 32-bit (see dataio.hpp); values are widened on load.
using real = double;

// ---------------------------------------------------------------------------
// Error taxonomy. Everything thrown by the library derives from tslab::error.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/axis mismatches.
struct dim_error : error {
  using error::error;
};

// Invalid argument values (rates, sizes, unsupported enum values).
struct param_error : error {
  using error::error;
};

// NaN/Inf detected, degenerate norms, diverged losses.
struct numeric_error : error {
  using error::error;
};

// Operation invoked in an invalid state (e.g. optimizer before backward).
struct state_error : error {
  using error::error;
};

// Binary container parse failures.
struct format_error : error {
  using error::error;
};

// Model input contract violations (stream_max presence mismatch).
struct contract_error : error {
  using error::error;
};

// Weight-surgery failures during transfer.
struct surgery_error : error {
  using error::error;
};

// Degenerate statistical/data inputs (all-zero deltas, constant instance).
struct degenerate_error : error {
  using error::error;
};

inline void check_finite(std::span<const real> values, const std::string& context) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw numeric_error(context + ": non-finite value at index " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Seed derivation. FNV-1a over a label keeps unit seeds stable across
// platforms and runs; collisions are checked where units are scheduled.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, const std::string& label) {
  unsigned char rootbytes[8];
  for (int i = 0; i < 8; ++i) rootbytes[i] = static_cast<unsigned char>((root >> (8 * i)) & 0xff);
  std::uint64_t h = fnv1a64(std::span<const unsigned char>(rootbytes, 8));
  h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(label.data()), label.size()), h);
  // splitmix64 finalizer to spread low-entropy labels
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

// ---------------------------------------------------------------------------
// Endian-explicit little-endian encoding for the binary containers.
// ---------------------------------------------------------------------------

namespace le {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_i32(std::vector<unsigned char>& out, std::int32_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::int32_t get_i32(const unsigned char* p) {
  return static_cast<std::int32_t>(get_u32(p));
}

}  // namespace le

}  // namespace tslab
