#include "codo/shards.hpp"

#include <array>
#include <cstring>

#include "codo/common.hpp"

namespace codo::shards {
namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>(v >> (8 * i));
  out.write(b.data(), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>(v >> (8 * i));
  out.write(b.data(), 8);
}

void put_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_id(std::ofstream& out, const std::string& id, std::size_t width,
            const char* what) {
  if (id.size() > width)
    throw std::invalid_argument(std::string(what) + " '" + id + "' exceeds " +
                                std::to_string(width) + " bytes");
  std::string padded(width, '\0');
  std::copy(id.begin(), id.end(), padded.begin());
  out.write(padded.data(), static_cast<std::streamsize>(width));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  std::array<unsigned char, 4> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    throw DataFormatError("truncated shard: " + path);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
  std::array<unsigned char, 8> b;
  if (!in.read(reinterpret_cast<char*>(b.data()), 8))
    throw DataFormatError("truncated shard: " + path);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

double get_f64(std::ifstream& in, const std::string& path) {
  const std::uint64_t bits = get_u64(in, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string get_id(std::ifstream& in, std::size_t width, const std::string& path) {
  std::string buf(width, '\0');
  if (!in.read(buf.data(), static_cast<std::streamsize>(width)))
    throw DataFormatError("truncated shard: " + path);
  return buf.substr(0, buf.find('\0'));
}

constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 4 + 4 + 8 + 8;

void check_view(const augment::View& v, std::uint32_t size) {
  if (v.image.width != static_cast<int>(size) ||
      v.image.height != static_cast<int>(size))
    throw std::invalid_argument("view image is " + std::to_string(v.image.width) +
                                "x" + std::to_string(v.image.height) +
                                ", shard expects " + std::to_string(size) + "x" +
                                std::to_string(size));
}

}  // namespace

std::size_t ShardHeader::record_bytes() const {
  const std::size_t per_view = kPoolIdBytes + 4 * 8 +
                               static_cast<std::size_t>(image_size) * image_size * 3;
  return kForegroundIdBytes + 8 + (1 + n_keys) * per_view;
}

ShardWriter::ShardWriter(const std::string& path, std::uint32_t image_size,
                         std::uint32_t n_keys, std::uint64_t config_hash)
    : out_(path, std::ios::binary), path_(path), image_size_(image_size),
      n_keys_(n_keys) {
  if (!out_) throw DataFormatError("cannot open shard for writing: " + path);
  if (image_size == 0) throw std::invalid_argument("image_size must be positive");
  if (n_keys != 1 && n_keys != 3)
    throw std::invalid_argument("n_keys must be 1 or 3");
  out_.write(kMagic, 8);
  put_u32(out_, kVersion);
  put_u32(out_, image_size_);
  put_u32(out_, n_keys_);
  put_u32(out_, 0);
  put_u64(out_, 0);  // record_count, patched by close()
  put_u64(out_, config_hash);
}

ShardWriter::~ShardWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void ShardWriter::write(const augment::ViewSet& vs) {
  if (closed_) throw std::invalid_argument("shard writer already closed");
  if (vs.keys.size() != n_keys_)
    throw std::invalid_argument("viewset has " + std::to_string(vs.keys.size()) +
                                " keys, shard expects " + std::to_string(n_keys_));
  check_view(vs.query, image_size_);
  for (const auto& k : vs.keys) check_view(k, image_size_);

  put_id(out_, vs.foreground_id, kForegroundIdBytes, "foreground_id");
  put_u64(out_, vs.crop_checksum);
  auto put_view = [&](const augment::View& v) {
    put_id(out_, v.pool_id, kPoolIdBytes, "pool_id");
    put_f64(out_, v.box.x0);
    put_f64(out_, v.box.y0);
    put_f64(out_, v.box.x1);
    put_f64(out_, v.box.y1);
    out_.write(reinterpret_cast<const char*>(v.image.pixels.data()),
               static_cast<std::streamsize>(v.image.pixels.size()));
  };
  put_view(vs.query);
  for (const auto& k : vs.keys) put_view(k);
  if (!out_) throw DataFormatError("shard write failed: " + path_);
  ++count_;
}

void ShardWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(8 + 4 + 4 + 4 + 4);
  put_u64(out_, count_);
  out_.flush();
  if (!out_) throw DataFormatError("shard finalize failed: " + path_);
  out_.close();
}

ShardReader::ShardReader(const std::string& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw DataFormatError("cannot open shard: " + path);
  char magic[8];
  if (!in_.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw DataFormatError("not a view shard: " + path);
  header_.version = get_u32(in_, path_);
  if (header_.version != kVersion)
    throw DataFormatError("unsupported shard version " +
                          std::to_string(header_.version) + ": " + path);
  header_.image_size = get_u32(in_, path_);
  header_.n_keys = get_u32(in_, path_);
  get_u32(in_, path_);  // reserved
  header_.record_count = get_u64(in_, path_);
  header_.config_hash = get_u64(in_, path_);
  if (header_.image_size == 0 || (header_.n_keys != 1 && header_.n_keys != 3))
    throw DataFormatError("corrupt shard header: " + path);

  in_.seekg(0, std::ios::end);
  const auto file_bytes = static_cast<std::uint64_t>(in_.tellg());
  const std::uint64_t expected =
      kHeaderBytes + header_.record_count * header_.record_bytes();
  if (file_bytes < expected)
    throw DataFormatError("shard shorter than its record count: " + path);
}

augment::ViewSet ShardReader::read_at(std::uint64_t index) {
  if (index >= header_.record_count)
    throw std::invalid_argument("record index " + std::to_string(index) +
                                " out of range (count " +
                                std::to_string(header_.record_count) + ")");
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(kHeaderBytes +
                                        index * header_.record_bytes()));
  augment::ViewSet vs;
  vs.foreground_id = get_id(in_, kForegroundIdBytes, path_);
  vs.crop_checksum = get_u64(in_, path_);
  auto get_view = [&]() {
    augment::View v;
    v.pool_id = get_id(in_, kPoolIdBytes, path_);
    v.box.x0 = get_f64(in_, path_);
    v.box.y0 = get_f64(in_, path_);
    v.box.x1 = get_f64(in_, path_);
    v.box.y1 = get_f64(in_, path_);
    const int s = static_cast<int>(header_.image_size);
    v.image = Image(s, s);
    if (!in_.read(reinterpret_cast<char*>(v.image.pixels.data()),
                  static_cast<std::streamsize>(v.image.pixels.size())))
      throw DataFormatError("truncated shard: " + path_);
    return v;
  };
  vs.query = get_view();
  vs.keys.reserve(header_.n_keys);
  for (std::uint32_t i = 0; i < header_.n_keys; ++i) vs.keys.push_back(get_view());
  return vs;
}

}  // namespace codo::shards
