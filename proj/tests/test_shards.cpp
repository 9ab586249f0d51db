#include "codo/shards.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "codo/common.hpp"
#include "codo/rng.hpp"
#include "doctest.h"

using codo::Image;
using codo::Rng;
namespace aug = codo::augment;
namespace sh = codo::shards;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

aug::ViewSet make_viewset(int size, int n_keys, std::uint64_t seed) {
  Rng rng(seed);
  auto make_view = [&](const std::string& pool) {
    aug::View v;
    v.image = Image(size, size);
    for (auto& p : v.image.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(256));
    v.box = {rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0), rng.uniform(8.0, size),
             rng.uniform(8.0, size)};
    v.pool_id = pool;
    return v;
  };
  aug::ViewSet vs;
  vs.foreground_id = "fg_" + std::to_string(seed);
  vs.crop_checksum = seed * 1234567;
  vs.query = make_view("poolA");
  for (int i = 0; i < n_keys; ++i) vs.keys.push_back(make_view("poolB"));
  return vs;
}

}  // namespace

TEST_CASE("shard round trip preserves records exactly") {
  const std::string path = temp_path("codo_test_shard.bin");
  {
    sh::ShardWriter writer(path, 32, 3, 0xfeedbeef);
    for (std::uint64_t i = 0; i < 5; ++i) writer.write(make_viewset(32, 3, i));
    writer.close();
    CHECK(writer.record_count() == 5);
  }
  sh::ShardReader reader(path);
  CHECK(reader.header().version == sh::kVersion);
  CHECK(reader.header().image_size == 32);
  CHECK(reader.header().n_keys == 3);
  CHECK(reader.header().record_count == 5);
  CHECK(reader.header().config_hash == 0xfeedbeef);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const aug::ViewSet expect = make_viewset(32, 3, i);
    const aug::ViewSet got = reader.read_at(i);
    CHECK(got.foreground_id == expect.foreground_id);
    CHECK(got.crop_checksum == expect.crop_checksum);
    CHECK(got.query.pool_id == expect.query.pool_id);
    CHECK(got.query.box == expect.query.box);
    CHECK(got.query.image.pixels == expect.query.image.pixels);
    REQUIRE(got.keys.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(got.keys[k].box == expect.keys[k].box);
      CHECK(got.keys[k].image.pixels == expect.keys[k].image.pixels);
    }
  }
  CHECK_THROWS_AS(reader.read_at(5), std::invalid_argument);
  std::remove(path.c_str());
}

TEST_CASE("random access works out of order") {
  const std::string path = temp_path("codo_test_shard_ra.bin");
  {
    sh::ShardWriter writer(path, 16, 1, 1);
    for (std::uint64_t i = 0; i < 4; ++i) writer.write(make_viewset(16, 1, 10 + i));
  }
  sh::ShardReader reader(path);
  CHECK(reader.read_at(3).foreground_id == "fg_13");
  CHECK(reader.read_at(0).foreground_id == "fg_10");
  CHECK(reader.read_at(2).foreground_id == "fg_12");
  std::remove(path.c_str());
}

TEST_CASE("writer rejects mismatched shapes and ids") {
  const std::string path = temp_path("codo_test_shard_bad.bin");
  sh::ShardWriter writer(path, 32, 1, 0);
  CHECK_THROWS_AS(writer.write(make_viewset(16, 1, 0)), std::invalid_argument);
  CHECK_THROWS_AS(writer.write(make_viewset(32, 3, 0)), std::invalid_argument);
  aug::ViewSet vs = make_viewset(32, 1, 0);
  vs.foreground_id.assign(40, 'x');
  CHECK_THROWS_AS(writer.write(vs), std::invalid_argument);
  writer.close();
  std::remove(path.c_str());
  CHECK_THROWS_AS((sh::ShardWriter{path, 32, 2, 0}), std::invalid_argument);
}

TEST_CASE("reader rejects missing, foreign, and truncated files") {
  CHECK_THROWS_AS(sh::ShardReader{temp_path("codo_absent.bin")},
                  codo::DataFormatError);

  const std::string foreign = temp_path("codo_foreign.bin");
  {
    std::ofstream out(foreign, std::ios::binary);
    out << "not a shard at all, just text padding beyond header size";
  }
  CHECK_THROWS_AS(sh::ShardReader{foreign}, codo::DataFormatError);
  std::remove(foreign.c_str());

  const std::string trunc = temp_path("codo_trunc.bin");
  {
    sh::ShardWriter writer(trunc, 16, 1, 0);
    writer.write(make_viewset(16, 1, 0));
    writer.write(make_viewset(16, 1, 1));
  }
  const auto full = std::filesystem::file_size(trunc);
  std::filesystem::resize_file(trunc, full - 100);
  CHECK_THROWS_AS(sh::ShardReader{trunc}, codo::DataFormatError);
  std::remove(trunc.c_str());
}
