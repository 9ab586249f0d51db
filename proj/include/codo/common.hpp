#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace codo {

// Configuration rejected before any compute. CLI exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// On-disk artifact (shard, checkpoint, record stream) unreadable or
// version-incompatible. CLI exit code 4.
struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A single sample cannot be produced (e.g. background too small for the
// minimum-scale paste). Callers resample or skip; never fatal by itself.
struct SkipSampleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// No proposal survived filtering for an image; the caller skips the image.
struct NoProposalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training; carries the offending batch ids.
struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint fails shape or hash verification.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = kFnvOffset) {
  return fnv1a(s.data(), s.size(), seed);
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace codo
