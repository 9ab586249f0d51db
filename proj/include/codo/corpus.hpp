#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "codo/geometry.hpp"
#include "codo/image.hpp"
#include "codo/rng.hpp"

namespace codo::corpus {

// Texture families backing the three background pools.
inline constexpr std::array<const char*, 3> kPoolNames{"stripes", "blobs",
                                                       "checker"};
inline constexpr int kGlyphClasses = 10;

struct SyntheticCorpusConfig {
  int n_foreground_classes = kGlyphClasses;
  int n_images = 240;            // pretraining composites
  int probe_instances = 60;      // labeled foregrounds, each rendered per pool
  int backgrounds_per_pool = 24; // plain texture images for pasting
  int image_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// One parametric foreground. p1/p2 meanings depend on the class; rotation in
// radians; scale is the half-extent fraction of the glyph canvas.
struct GlyphSpec {
  int class_id = 0;
  double scale = 0.6;
  double aspect = 1.0;
  double rotation = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  std::uint8_t r = 255, g = 255, b = 255;
};

GlyphSpec random_glyph(int class_id, Rng& rng);

// 0/1 alpha mask on a canvas x canvas grid plus the tight extent of the set
// pixels in canvas coordinates. Canvas >= 4.
std::pair<std::vector<std::uint8_t>, BoundingBox> rasterize_glyph(
    const GlyphSpec& spec, int canvas);

// A fresh texture from the named family. Unknown pool name is a contract
// violation.
Image render_background(const std::string& pool, int size, Rng& rng);

struct ManifestRecord {
  std::string id;
  std::string file;  // relative to the corpus root
  std::string split; // train | probe_train | probe_test | background
  int class_id = -1;
  std::string instance_id;  // shared across renders of one foreground
  std::string pool;
  bool has_box = false;
  BoundingBox box;
  // generative parameters, kept so tests can re-derive the tight extent
  GlyphSpec glyph;
  int glyph_canvas = 0;
  int origin_x = 0, origin_y = 0;
};

struct CorpusSummary {
  int n_train = 0;
  int n_probe_renders = 0;
  int n_backgrounds = 0;
  std::string manifest_path;
};

// Writes images/ and manifest.jsonl under out_dir. Deterministic under the
// config seed: byte-identical files on reruns. Train composites and probe
// instances are class-balanced within one; every probe instance is rendered
// once per background pool.
CorpusSummary generate_corpus(const SyntheticCorpusConfig& cfg,
                              const std::string& out_dir);

std::vector<ManifestRecord> load_manifest(const std::string& corpus_dir);

}  // namespace codo::corpus
