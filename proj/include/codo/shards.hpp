#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "codo/augment.hpp"

namespace codo::shards {

// View shard layout: an 8-byte magic, a fixed header, then fixed-size
// records. Every image in a shard is square with side header.image_size;
// each record holds one query view plus n_keys key views. All integers and
// doubles are little-endian.
inline constexpr char kMagic[8] = {'C', 'O', 'D', 'O', 'V', 'I', 'E', 'W'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr const char* kShardExtension = ".codoview";
inline constexpr std::size_t kForegroundIdBytes = 32;
inline constexpr std::size_t kPoolIdBytes = 16;

struct ShardHeader {
  std::uint32_t version = kVersion;
  std::uint32_t image_size = 0;
  std::uint32_t n_keys = 0;
  std::uint64_t record_count = 0;
  std::uint64_t config_hash = 0;

  std::size_t record_bytes() const;
};

class ShardWriter {
 public:
  ShardWriter(const std::string& path, std::uint32_t image_size, std::uint32_t n_keys,
              std::uint64_t config_hash);
  ~ShardWriter();
  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;

  void write(const augment::ViewSet& vs);
  std::uint64_t record_count() const { return count_; }
  // Patches the record count into the header and flushes.
  void close();

 private:
  std::ofstream out_;
  std::string path_;
  std::uint32_t image_size_;
  std::uint32_t n_keys_;
  std::uint64_t count_ = 0;
  bool closed_ = false;
};

class ShardReader {
 public:
  explicit ShardReader(const std::string& path);

  const ShardHeader& header() const { return header_; }
  augment::ViewSet read_at(std::uint64_t index);

 private:
  std::ifstream in_;
  std::string path_;
  ShardHeader header_;
};

}  // namespace codo::shards
