#include "codo/encoder.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "codo/common.hpp"

namespace codo::encoder {
namespace {

// At least two channels per group so normalization stays non-degenerate
// even on 1x1 spatial maps (the deepest level of a 32px input).
int groups_for(int channels) {
  for (const int g : {8, 4, 2})
    if (channels % g == 0 && channels / g >= 2) return g;
  return 1;
}

void put_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2))
    throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw CheckpointError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw CheckpointError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr char kCkptMagic[8] = {'C', 'O', 'D', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace

void EncoderConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0)
    throw std::invalid_argument("image_size must be a positive multiple of 32");
  if (stem_channels <= 0 || fpn_channels <= 0 || head_hidden <= 0 ||
      embed_dim <= 0)
    throw std::invalid_argument("channel and dimension counts must be positive");
  for (const int c : stage_channels)
    if (c <= 0) throw std::invalid_argument("stage channels must be positive");
  if (roi_size < 2) throw std::invalid_argument("roi_size must be at least 2");
}

std::size_t Params::total_scalars() const {
  std::size_t n = 0;
  for (const auto& t : values) n += t.data.size();
  return n;
}

int Encoder::add_param(const std::string& name, std::vector<std::int64_t> shape) {
  names_.push_back(name);
  shapes_.push_back(std::move(shape));
  return static_cast<int>(names_.size()) - 1;
}

Encoder::Conv Encoder::add_conv(const std::string& name, int cin, int cout, int k,
                                int stride, int pad, bool bias) {
  Conv c;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.cout = cout;
  c.w = add_param(name + ".w", {cout, static_cast<std::int64_t>(cin) * k * k});
  if (bias) c.b = add_param(name + ".b", {cout});
  return c;
}

Encoder::Norm Encoder::add_norm(const std::string& name, int channels) {
  Norm n;
  n.groups = groups_for(channels);
  n.g = add_param(name + ".g", {channels});
  n.b = add_param(name + ".b", {channels});
  return n;
}

Encoder::Encoder(EncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_ = add_conv("stem.conv", 3, cfg_.stem_channels, 3, 2, 1, false);
  stem_n_ = add_norm("stem.norm", cfg_.stem_channels);
  int prev = cfg_.stem_channels;
  for (int i = 0; i < kLevels; ++i) {
    const int c = cfg_.stage_channels[static_cast<std::size_t>(i)];
    const std::string base = "stage" + std::to_string(i + 1);
    Stage& st = stages_[static_cast<std::size_t>(i)];
    st.down = add_conv(base + ".down.conv", prev, c, 3, 2, 1, false);
    st.down_n = add_norm(base + ".down.norm", c);
    st.c1 = add_conv(base + ".res.conv1", c, c, 3, 1, 1, false);
    st.n1 = add_norm(base + ".res.norm1", c);
    st.c2 = add_conv(base + ".res.conv2", c, c, 3, 1, 1, false);
    st.n2 = add_norm(base + ".res.norm2", c);
    prev = c;
  }
  for (int i = 0; i < kLevels; ++i) {
    const std::string level = "p" + std::to_string(i + 2);
    lateral_[static_cast<std::size_t>(i)] =
        add_conv("fpn." + level + ".lateral",
                 cfg_.stage_channels[static_cast<std::size_t>(i)],
                 cfg_.fpn_channels, 1, 1, 0, true);
    smooth_[static_cast<std::size_t>(i)] =
        add_conv("fpn." + level + ".smooth", cfg_.fpn_channels, cfg_.fpn_channels,
                 3, 1, 1, true);
  }
  head_c1_ = add_conv("head.conv1", cfg_.fpn_channels, cfg_.fpn_channels, 3, 1, 1,
                      false);
  head_n1_ = add_norm("head.norm1", cfg_.fpn_channels);
  head_c2_ = add_conv("head.conv2", cfg_.fpn_channels, cfg_.fpn_channels, 3, 2, 1,
                      false);
  head_n2_ = add_norm("head.norm2", cfg_.fpn_channels);
  const int half = (cfg_.roi_size - 1) / 2 + 1;
  const int flat = cfg_.fpn_channels * half * half;
  head_fc1_w_ = add_param("head.fc1.w", {cfg_.head_hidden, flat});
  head_fc1_b_ = add_param("head.fc1.b", {cfg_.head_hidden});
  // layer norm keeps the hidden activation well-scaled so the projection
  // never collapses to the zero vector
  head_ln_.groups = 1;
  head_ln_.g = add_param("head.ln.g", {cfg_.head_hidden});
  head_ln_.b = add_param("head.ln.b", {cfg_.head_hidden});
  head_fc2_w_ = add_param("head.fc2.w", {cfg_.embed_dim, cfg_.head_hidden});
  head_fc2_b_ = add_param("head.fc2.b", {cfg_.embed_dim});
}

Params Encoder::init_params(Rng& rng) const {
  Params p;
  p.names = names_;
  p.values.reserve(shapes_.size());
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    Tensor t(shapes_[i]);
    const std::string& name = names_[i];
    if (name.ends_with(".w")) {
      const double fan_in = static_cast<double>(t.dim(1));
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data) v = rng.normal(0.0, stddev);
    } else if (name.ends_with(".g")) {
      t.fill(1.0);
    }  // biases and norm shifts stay zero
    p.values.push_back(std::move(t));
  }
  return p;
}

nn::Var Encoder::bound_var(int idx) const {
  auto& slot = cache_[static_cast<std::size_t>(idx)];
  if (!slot)
    slot = trainable_
               ? nn::parameter(bound_->values[static_cast<std::size_t>(idx)], idx)
               : nn::constant(bound_->values[static_cast<std::size_t>(idx)]);
  return slot;
}

nn::Var Encoder::conv(const Conv& c, const nn::Var& x) const {
  const nn::Var b =
      c.b >= 0 ? bound_var(c.b) : nn::constant(Tensor({c.cout}));
  return nn::conv2d(x, bound_var(c.w), b, c.k, c.stride, c.pad);
}

nn::Var Encoder::norm(const Norm& n, const nn::Var& x) const {
  return nn::group_norm(x, bound_var(n.g), bound_var(n.b), n.groups);
}

nn::Var Encoder::head(const nn::Var& pooled) const {
  nn::Var h = nn::relu(norm(head_n1_, conv(head_c1_, pooled)));
  h = nn::relu(norm(head_n2_, conv(head_c2_, h)));
  h = nn::flatten(h);
  h = nn::linear(h, bound_var(head_fc1_w_), bound_var(head_fc1_b_));
  h = norm(head_ln_, nn::reshape(h, {cfg_.head_hidden, 1, 1}));
  h = nn::relu(nn::flatten(h));
  h = nn::linear(h, bound_var(head_fc2_w_), bound_var(head_fc2_b_));
  return nn::l2_normalize(h);
}

std::array<nn::Var, kLevels> Encoder::pyramid(const Params& p, const Tensor& image,
                                              bool trainable) const {
  if (p.size() != n_params())
    throw std::invalid_argument("parameter set does not match this encoder");
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("expected a (3,H,W) image tensor");
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
    throw std::invalid_argument("image dimensions must be multiples of 32");

  bound_ = &p;
  trainable_ = trainable;
  cache_.assign(shapes_.size(), nullptr);

  nn::Var x = nn::relu(norm(stem_n_, conv(stem_, nn::constant(image))));
  std::array<nn::Var, kLevels> c;
  for (int i = 0; i < kLevels; ++i) {
    const Stage& st = stages_[static_cast<std::size_t>(i)];
    nn::Var d = nn::relu(norm(st.down_n, conv(st.down, x)));
    nn::Var r = nn::relu(norm(st.n1, conv(st.c1, d)));
    r = norm(st.n2, conv(st.c2, r));
    x = nn::relu(nn::add(r, d));
    c[static_cast<std::size_t>(i)] = x;
  }

  std::array<nn::Var, kLevels> p_out;
  p_out[3] = conv(lateral_[3], c[3]);
  for (int i = kLevels - 2; i >= 0; --i)
    p_out[static_cast<std::size_t>(i)] =
        nn::add(conv(lateral_[static_cast<std::size_t>(i)],
                     c[static_cast<std::size_t>(i)]),
                nn::upsample_nearest2x(p_out[static_cast<std::size_t>(i) + 1]));
  for (int i = 0; i < kLevels; ++i)
    p_out[static_cast<std::size_t>(i)] =
        conv(smooth_[static_cast<std::size_t>(i)], p_out[static_cast<std::size_t>(i)]);
  return p_out;
}

std::array<nn::Var, kLevels> Encoder::embed(const Params& p, const Tensor& image,
                                            const BoundingBox& box,
                                            bool trainable) const {
  const std::array<nn::Var, kLevels> pyr = pyramid(p, image, trainable);
  std::array<nn::Var, kLevels> out;
  for (int i = 0; i < kLevels; ++i) {
    nn::Var pooled =
        nn::roi_align(pyr[static_cast<std::size_t>(i)], box,
                      static_cast<double>(kStrides[static_cast<std::size_t>(i)]),
                      cfg_.roi_size);
    nn::Var e = head(pooled);
    if (std::abs(e->value.norm2() - 1.0) > 1e-5)
      throw TrainingDivergedError("embedding lost unit norm at level P" +
                                  std::to_string(i + 2));
    out[static_cast<std::size_t>(i)] = e;
  }
  return out;
}

Tensor image_to_tensor(const Image& img) {
  if (img.empty()) throw std::invalid_argument("empty image");
  Tensor t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t(c, y, x) = (img.at(x, y, c) / 255.0 - 0.5) / 0.25;
  return t;
}

EncoderPair make_encoder_pair(const EncoderConfig& cfg, double momentum, Rng& rng) {
  if (momentum < 0.0 || momentum > 1.0)
    throw std::invalid_argument("momentum must lie in [0, 1]");
  const Encoder enc(cfg);
  EncoderPair pair;
  pair.cfg = cfg;
  pair.momentum = momentum;
  pair.query = enc.init_params(rng);
  pair.key = pair.query;  // key starts as an exact copy
  return pair;
}

void momentum_update(EncoderPair& pair) {
  if (pair.query.values.size() != pair.key.values.size())
    throw CheckpointError("query/key parameter counts differ");
  const double m = pair.momentum;
  for (std::size_t i = 0; i < pair.query.values.size(); ++i) {
    Tensor& k = pair.key.values[i];
    const Tensor& q = pair.query.values[i];
    if (k.shape != q.shape)
      throw CheckpointError("query/key shape mismatch at " + pair.query.names[i]);
    for (std::size_t j = 0; j < k.data.size(); ++j)
      k.data[j] = m * k.data[j] + (1.0 - m) * q.data[j];
  }
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open for writing: " + tmp);
    out.write(kCkptMagic, 8);
    put_u32(out, kCkptVersion);
    put_u32(out, static_cast<std::uint32_t>(data.f64.size() + data.u64.size()));
    put_u64(out, data.config_hash);
    put_u64(out, data.step);
    put_f64(out, data.momentum);
    auto put_name = [&](const std::string& name) {
      if (name.size() > 0xffff)
        throw std::invalid_argument("block name too long: " + name);
      put_u16(out, static_cast<std::uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
    };
    for (const auto& [name, vec] : data.f64) {
      put_name(name);
      out.put(0);
      put_u64(out, vec.size());
      for (const double v : vec) put_f64(out, v);
    }
    for (const auto& [name, vec] : data.u64) {
      put_name(name);
      out.put(1);
      put_u64(out, vec.size());
      for (const std::uint64_t v : vec) put_u64(out, v);
    }
    out.flush();
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  const std::uint32_t version = get_u32(in);
  if (version != kCkptVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const std::uint32_t n_blocks = get_u32(in);
  CheckpointData data;
  data.config_hash = get_u64(in);
  data.step = get_u64(in);
  data.momentum = get_f64(in);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    const std::uint16_t len = get_u16(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw CheckpointError("truncated checkpoint");
    const int kind = in.get();
    if (kind != 0 && kind != 1) throw CheckpointError("corrupt block kind");
    const std::uint64_t count = get_u64(in);
    if (kind == 0) {
      auto& vec = data.f64[name];
      vec.resize(count);
      for (auto& v : vec) v = get_f64(in);
    } else {
      auto& vec = data.u64[name];
      vec.resize(count);
      for (auto& v : vec) v = get_u64(in);
    }
  }
  return data;
}

void pack_pair(const EncoderPair& pair, CheckpointData* data) {
  data->momentum = pair.momentum;
  for (std::size_t i = 0; i < pair.query.values.size(); ++i)
    data->f64["q." + pair.query.names[i]] = pair.query.values[i].data;
  for (std::size_t i = 0; i < pair.key.values.size(); ++i)
    data->f64["k." + pair.key.names[i]] = pair.key.values[i].data;
}

void unpack_pair(const CheckpointData& data, EncoderPair* pair) {
  pair->momentum = data.momentum;
  auto restore = [&](Params& params, const std::string& prefix) {
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      const auto it = data.f64.find(prefix + params.names[i]);
      if (it == data.f64.end())
        throw CheckpointError("checkpoint missing block " + prefix +
                              params.names[i]);
      if (it->second.size() != params.values[i].data.size())
        throw CheckpointError("checkpoint block size mismatch at " + prefix +
                              params.names[i]);
      params.values[i].data = it->second;
    }
  };
  restore(pair->query, "q.");
  restore(pair->key, "k.");
}

}  // namespace codo::encoder
