#include "codo/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "codo/common.hpp"
#include "json.hpp"

namespace codo::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticCorpusConfig::validate() const {
  std::vector<std::string> bad;
  if (n_foreground_classes < 1 || n_foreground_classes > kGlyphClasses)
    bad.push_back("n_foreground_classes must lie in [1, " +
                  std::to_string(kGlyphClasses) + "]");
  if (n_images < 0) bad.push_back("n_images must be >= 0");
  if (probe_instances < 0) bad.push_back("probe_instances must be >= 0");
  if (backgrounds_per_pool < 0)
    bad.push_back("backgrounds_per_pool must be >= 0");
  if (image_size < 16) bad.push_back("image_size must be >= 16");
  if (!bad.empty()) {
    std::string msg = "invalid corpus config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ValidationError(msg);
  }
}

namespace {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

Color hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto u8 = [](double t) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
  };
  return {u8(r + m), u8(g + m), u8(b + m)};
}

Color random_vivid(Rng& rng) {
  return hsv(rng.uniform(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0));
}

std::uint8_t jitter_channel(std::uint8_t v, int amp, Rng& rng) {
  const int d = static_cast<int>(rng.uniform_int(2 * amp + 1)) - amp;
  return static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + d, 0, 255));
}

bool inside_glyph(int class_id, double u, double v, double p1, double p2) {
  const double r2 = u * u + v * v;
  switch (class_id) {
    case 0:  // disk
      return r2 <= 1.0;
    case 1:  // ring
      return r2 <= 1.0 && r2 >= p1 * p1;
    case 2:  // square
      return std::max(std::abs(u), std::abs(v)) <= 1.0;
    case 3: {  // triangle, apex up, base skewed by p1
      if (v < -1.0 || v > 1.0) return false;
      const double half_width = (1.0 - v) * 0.5;
      return std::abs(u - p1 * (1.0 - half_width)) <= half_width;
    }
    case 4:  // plus
      return std::max(std::abs(u), std::abs(v)) <= 1.0 &&
             (std::abs(u) <= p1 || std::abs(v) <= p1);
    case 5: {  // five-point star
      const double theta = std::atan2(v, u);
      const double radius = 0.62 * (1.0 + p1 * std::cos(5.0 * theta));
      return r2 <= radius * radius;
    }
    case 6: {  // crescent: disk minus an offset bite
      if (r2 > 1.0) return false;
      const double du = u - (p1 + 0.3);
      return du * du + v * v > p2 * p2;
    }
    case 7:  // slim diamond
      return std::abs(u) + std::abs(v) <= 1.0;
    case 8:  // double bar
      return std::abs(u) <= 1.0 && std::abs(v) >= 0.25 &&
             std::abs(v) <= 0.25 + p1;
    case 9:  // corner
      return std::max(std::abs(u), std::abs(v)) <= 1.0 &&
             (u <= -1.0 + 2.0 * p1 || v >= 1.0 - 2.0 * p1);
    default:
      throw std::invalid_argument("glyph class out of range: " +
                                  std::to_string(class_id));
  }
}

}  // namespace

GlyphSpec random_glyph(int class_id, Rng& rng) {
  if (class_id < 0 || class_id >= kGlyphClasses)
    throw std::invalid_argument("glyph class out of range: " +
                                std::to_string(class_id));
  GlyphSpec s;
  s.class_id = class_id;
  s.scale = rng.uniform(0.5, 0.8);
  s.aspect = rng.uniform(0.85, 1.2);
  s.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Color c = random_vivid(rng);
  s.r = c.r;
  s.g = c.g;
  s.b = c.b;
  switch (class_id) {
    case 1: s.p1 = rng.uniform(0.45, 0.62); break;
    case 3: s.p1 = rng.uniform(-0.25, 0.25); break;
    case 4: s.p1 = rng.uniform(0.28, 0.4); break;
    case 5: s.p1 = rng.uniform(0.35, 0.5); break;
    case 6:
      s.p1 = rng.uniform(0.35, 0.5);
      s.p2 = rng.uniform(0.75, 0.95);
      break;
    case 7: s.aspect = rng.uniform(0.45, 0.62); break;
    case 8: s.p1 = rng.uniform(0.2, 0.3); break;
    case 9: s.p1 = rng.uniform(0.25, 0.35); break;
    default: break;
  }
  return s;
}

std::pair<std::vector<std::uint8_t>, BoundingBox> rasterize_glyph(
    const GlyphSpec& spec, int canvas) {
  if (canvas < 4) throw std::invalid_argument("glyph canvas must be >= 4");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(canvas) * canvas, 0);
  const double cr = std::cos(spec.rotation), sr = std::sin(spec.rotation);
  const double ax = spec.scale * std::sqrt(spec.aspect);
  const double ay = spec.scale / std::sqrt(spec.aspect);
  int min_x = canvas, min_y = canvas, max_x = -1, max_y = -1;
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x) {
      const double u0 = (x + 0.5) / canvas * 2.0 - 1.0;
      const double v0 = (y + 0.5) / canvas * 2.0 - 1.0;
      const double u = (cr * u0 + sr * v0) / ax;
      const double v = (-sr * u0 + cr * v0) / ay;
      if (inside_glyph(spec.class_id, u, v, spec.p1, spec.p2)) {
        mask[static_cast<std::size_t>(y) * canvas + x] = 1;
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
      }
    }
  if (max_x < 0)
    throw std::invalid_argument("glyph rasterized to an empty mask");
  return {std::move(mask),
          BoundingBox{static_cast<double>(min_x), static_cast<double>(min_y),
                      static_cast<double>(max_x + 1),
                      static_cast<double>(max_y + 1)}};
}

Image render_background(const std::string& pool, int size, Rng& rng) {
  if (size < 1) throw std::invalid_argument("background size must be >= 1");
  Image img(size, size);
  const Color a = random_vivid(rng);
  Color b = random_vivid(rng);
  // keep the two tones apart so every family carries visible structure
  if (std::abs(int(a.r) - b.r) + std::abs(int(a.g) - b.g) +
          std::abs(int(a.b) - b.b) < 120) {
    b.r = static_cast<std::uint8_t>(255 - a.r);
    b.g = static_cast<std::uint8_t>(255 - a.g);
    b.b = static_cast<std::uint8_t>(255 - a.b);
  }

  if (pool == "stripes") {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(size / 8.0, size / 3.0);
    const double phase = rng.uniform(0.0, period);
    const double cx = std::cos(angle), cy = std::sin(angle);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double w = std::sin(2.0 * std::numbers::pi *
                                  ((x * cx + y * cy) - phase) / period);
        const Color& c = w > 0 ? a : b;
        img.at(x, y, 0) = jitter_channel(c.r, 5, rng);
        img.at(x, y, 1) = jitter_channel(c.g, 5, rng);
        img.at(x, y, 2) = jitter_channel(c.b, 5, rng);
      }
    return img;
  }
  if (pool == "blobs") {
    constexpr int kBlobs = 6;
    double cxs[kBlobs], cys[kBlobs], inv2s2[kBlobs], ws[kBlobs];
    for (int i = 0; i < kBlobs; ++i) {
      cxs[i] = rng.uniform(0.0, size);
      cys[i] = rng.uniform(0.0, size);
      const double sigma = rng.uniform(size / 8.0, size / 3.0);
      inv2s2[i] = 1.0 / (2.0 * sigma * sigma);
      ws[i] = rng.uniform(0.5, 1.5);
    }
    std::vector<double> field(static_cast<std::size_t>(size) * size);
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double f = 0.0;
        for (int i = 0; i < kBlobs; ++i) {
          const double dx = x - cxs[i], dy = y - cys[i];
          f += ws[i] * std::exp(-(dx * dx + dy * dy) * inv2s2[i]);
        }
        field[static_cast<std::size_t>(y) * size + x] = f;
        lo = std::min(lo, f);
        hi = std::max(hi, f);
      }
    const double span = hi > lo ? hi - lo : 1.0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double t =
            (field[static_cast<std::size_t>(y) * size + x] - lo) / span;
        auto mix = [&](std::uint8_t ca, std::uint8_t cb) {
          return static_cast<std::uint8_t>(std::lround(ca + t * (cb - ca)));
        };
        img.at(x, y, 0) = jitter_channel(mix(a.r, b.r), 4, rng);
        img.at(x, y, 1) = jitter_channel(mix(a.g, b.g), 4, rng);
        img.at(x, y, 2) = jitter_channel(mix(a.b, b.b), 4, rng);
      }
    return img;
  }
  if (pool == "checker") {
    const int cell = std::max(3, static_cast<int>(std::lround(
                                     rng.uniform(size / 10.0, size / 4.0))));
    const int ox = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cell)));
    const int oy = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cell)));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const bool odd = (((x + ox) / cell) + ((y + oy) / cell)) % 2 != 0;
        const Color& c = odd ? a : b;
        img.at(x, y, 0) = jitter_channel(c.r, 5, rng);
        img.at(x, y, 1) = jitter_channel(c.g, 5, rng);
        img.at(x, y, 2) = jitter_channel(c.b, 5, rng);
      }
    return img;
  }
  throw std::invalid_argument("unknown background pool: " + pool);
}

namespace {

json glyph_to_json(const ManifestRecord& rec) {
  json g;
  g["class_id"] = rec.glyph.class_id;
  g["scale"] = rec.glyph.scale;
  g["aspect"] = rec.glyph.aspect;
  g["rotation"] = rec.glyph.rotation;
  g["p1"] = rec.glyph.p1;
  g["p2"] = rec.glyph.p2;
  g["color"] = {rec.glyph.r, rec.glyph.g, rec.glyph.b};
  g["canvas"] = rec.glyph_canvas;
  g["origin"] = {rec.origin_x, rec.origin_y};
  return g;
}

void glyph_from_json(const json& g, ManifestRecord* rec) {
  rec->glyph.class_id = g.at("class_id").get<int>();
  rec->glyph.scale = g.at("scale").get<double>();
  rec->glyph.aspect = g.at("aspect").get<double>();
  rec->glyph.rotation = g.at("rotation").get<double>();
  rec->glyph.p1 = g.at("p1").get<double>();
  rec->glyph.p2 = g.at("p2").get<double>();
  rec->glyph.r = g.at("color").at(0).get<std::uint8_t>();
  rec->glyph.g = g.at("color").at(1).get<std::uint8_t>();
  rec->glyph.b = g.at("color").at(2).get<std::uint8_t>();
  rec->glyph_canvas = g.at("canvas").get<int>();
  rec->origin_x = g.at("origin").at(0).get<int>();
  rec->origin_y = g.at("origin").at(1).get<int>();
}

// Renders one foreground instance onto a fresh background; fills the box and
// glyph placement fields of *rec.
Image compose(const GlyphSpec& spec, const std::string& pool, int image_size,
              Rng& rng, ManifestRecord* rec) {
  Image img = render_background(pool, image_size, rng);
  const int canvas = std::max(
      8, static_cast<int>(std::lround(image_size * rng.uniform(0.4, 0.65))));
  const auto [mask, extent] = rasterize_glyph(spec, canvas);
  const int ox =
      static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(image_size - canvas + 1)));
  const int oy =
      static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(image_size - canvas + 1)));
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x)
      if (mask[static_cast<std::size_t>(y) * canvas + x]) {
        img.at(ox + x, oy + y, 0) = spec.r;
        img.at(ox + x, oy + y, 1) = spec.g;
        img.at(ox + x, oy + y, 2) = spec.b;
      }
  rec->glyph = spec;
  rec->glyph_canvas = canvas;
  rec->origin_x = ox;
  rec->origin_y = oy;
  rec->has_box = true;
  rec->box = {extent.x0 + ox, extent.y0 + oy, extent.x1 + ox, extent.y1 + oy};
  rec->pool = pool;
  return img;
}

}  // namespace

CorpusSummary generate_corpus(const SyntheticCorpusConfig& cfg,
                              const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(fs::path(out_dir) / "images");

  std::vector<ManifestRecord> records;
  std::vector<Image> images;
  int next_id = 0;
  auto new_record = [&](const std::string& split) {
    ManifestRecord rec;
    char buf[16];
    std::snprintf(buf, sizeof buf, "img_%08d", next_id++);
    rec.id = buf;
    rec.file = "images/" + rec.id + ".ppm";
    rec.split = split;
    return rec;
  };

  Rng train_rng = Rng(cfg.seed).fork(1);
  for (int i = 0; i < cfg.n_images; ++i) {
    const int cls = i % cfg.n_foreground_classes;
    const GlyphSpec spec = random_glyph(cls, train_rng);
    const std::string pool =
        kPoolNames[train_rng.uniform_int(kPoolNames.size())];
    auto rec = new_record("train");
    rec.class_id = cls;
    char buf[16];
    std::snprintf(buf, sizeof buf, "fgt_%06d", i);
    rec.instance_id = buf;
    images.push_back(compose(spec, pool, cfg.image_size, train_rng, &rec));
    records.push_back(std::move(rec));
  }

  Rng probe_rng = Rng(cfg.seed).fork(2);
  const int train_instances = (cfg.probe_instances * 2 + 2) / 3;
  for (int j = 0; j < cfg.probe_instances; ++j) {
    const int cls = j % cfg.n_foreground_classes;
    const GlyphSpec spec = random_glyph(cls, probe_rng);
    const std::string split = j < train_instances ? "probe_train" : "probe_test";
    for (const char* pool : kPoolNames) {
      auto rec = new_record(split);
      rec.class_id = cls;
      char buf[16];
      std::snprintf(buf, sizeof buf, "fgp_%06d", j);
      rec.instance_id = buf;
      images.push_back(compose(spec, pool, cfg.image_size, probe_rng, &rec));
      records.push_back(std::move(rec));
    }
  }

  Rng bg_rng = Rng(cfg.seed).fork(3);
  for (const char* pool : kPoolNames)
    for (int i = 0; i < cfg.backgrounds_per_pool; ++i) {
      auto rec = new_record("background");
      rec.pool = pool;
      images.push_back(render_background(pool, cfg.image_size, bg_rng));
      records.push_back(std::move(rec));
    }

  for (std::size_t i = 0; i < records.size(); ++i)
    write_ppm(images[i], (fs::path(out_dir) / records[i].file).string());

  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.jsonl").string();
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw DataFormatError("cannot write " + manifest_path);
  for (const auto& rec : records) {
    json j;
    j["id"] = rec.id;
    j["file"] = rec.file;
    j["split"] = rec.split;
    j["class_id"] = rec.class_id;
    j["instance_id"] = rec.instance_id;
    j["pool"] = rec.pool;
    if (rec.has_box) {
      j["box"] = {rec.box.x0, rec.box.y0, rec.box.x1, rec.box.y1};
      j["glyph"] = glyph_to_json(rec);
    }
    out << j.dump() << '\n';
  }
  out.flush();
  if (!out) throw DataFormatError("failed writing " + manifest_path);

  CorpusSummary summary;
  summary.n_train = cfg.n_images;
  summary.n_probe_renders =
      cfg.probe_instances * static_cast<int>(kPoolNames.size());
  summary.n_backgrounds =
      cfg.backgrounds_per_pool * static_cast<int>(kPoolNames.size());
  summary.manifest_path = manifest_path;
  return summary;
}

std::vector<ManifestRecord> load_manifest(const std::string& corpus_dir) {
  const std::string path = (fs::path(corpus_dir) / "manifest.jsonl").string();
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path);
  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      ManifestRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.file = j.at("file").get<std::string>();
      rec.split = j.at("split").get<std::string>();
      rec.class_id = j.at("class_id").get<int>();
      rec.instance_id = j.at("instance_id").get<std::string>();
      rec.pool = j.at("pool").get<std::string>();
      if (j.contains("box")) {
        rec.has_box = true;
        rec.box = {j["box"].at(0).get<double>(), j["box"].at(1).get<double>(),
                   j["box"].at(2).get<double>(), j["box"].at(3).get<double>()};
        glyph_from_json(j.at("glyph"), &rec);
      }
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw DataFormatError(path + ":" + std::to_string(line_no) +
                            ": bad manifest record: " + e.what());
    }
  }
  return records;
}

}  // namespace codo::corpus
