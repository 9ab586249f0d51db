#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codo/geometry.hpp"
#include "codo/image.hpp"
#include "codo/nn.hpp"
#include "codo/rng.hpp"
#include "codo/tensor.hpp"

namespace codo::encoder {

inline constexpr int kLevels = 4;
inline constexpr std::array<int, kLevels> kStrides{4, 8, 16, 32};

struct EncoderConfig {
  int image_size = 64;  // multiple of 32
  int stem_channels = 8;
  std::array<int, kLevels> stage_channels{16, 32, 64, 128};
  int fpn_channels = 32;
  int head_hidden = 256;
  int embed_dim = 128;
  int roi_size = 7;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// One encoder side: flat parameter storage addressed by index; the layout is
// a pure function of the config, so query and key sides share indices.
struct Params {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  int size() const { return static_cast<int>(values.size()); }
  std::size_t total_scalars() const;
};

// Backbone + FPN + shared projection head. Holds no parameters itself; it
// defines the layout and builds forward graphs against a Params instance.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }
  int n_params() const { return static_cast<int>(shapes_.size()); }

  Params init_params(Rng& rng) const;

  // P2..P5 at strides 4/8/16/32, each fpn_channels wide. Image tensor is
  // (3,H,W) with H = W = a multiple of 32. trainable wires parameter leaves
  // so backward routes gradients into a GradSink.
  std::array<nn::Var, kLevels> pyramid(const Params& p, const Tensor& image,
                                       bool trainable) const;

  // RoIAlign of the same box on every level followed by the shared head;
  // one unit-norm embedding per level.
  std::array<nn::Var, kLevels> embed(const Params& p, const Tensor& image,
                                     const BoundingBox& box, bool trainable) const;

 private:
  struct Conv {
    int w = -1, b = -1;  // b = -1 for convs feeding a norm layer
    int k = 3, stride = 1, pad = 1;
    int cout = 0;
  };
  struct Norm {
    int g = -1, b = -1;
    int groups = 1;
  };
  struct Stage {
    Conv down;
    Norm down_n;
    Conv c1;
    Norm n1;
    Conv c2;
    Norm n2;
  };

  Conv add_conv(const std::string& name, int cin, int cout, int k, int stride,
                int pad, bool bias);
  Norm add_norm(const std::string& name, int channels);
  int add_param(const std::string& name, std::vector<std::int64_t> shape);
  nn::Var bound_var(int idx) const;

  nn::Var conv(const Conv& c, const nn::Var& x) const;
  nn::Var norm(const Norm& n, const nn::Var& x) const;
  nn::Var head(const nn::Var& pooled) const;

  // Binds params for one forward pass; caches wrapped nodes per index.
  struct Bind;

  EncoderConfig cfg_;
  std::vector<std::string> names_;
  std::vector<std::vector<std::int64_t>> shapes_;

  Conv stem_;
  Norm stem_n_;
  std::array<Stage, kLevels> stages_;
  std::array<Conv, kLevels> lateral_;
  std::array<Conv, kLevels> smooth_;
  Conv head_c1_;
  Norm head_n1_;
  Conv head_c2_;
  Norm head_n2_;
  int head_fc1_w_ = -1, head_fc1_b_ = -1;
  Norm head_ln_;  // layer norm on the hidden FC activation
  int head_fc2_w_ = -1, head_fc2_b_ = -1;

  mutable const Params* bound_ = nullptr;
  mutable std::vector<nn::Var> cache_;
  mutable bool trainable_ = false;
};

// (3,H,W) float tensor, channels first, normalized to roughly zero mean.
Tensor image_to_tensor(const Image& img);

struct EncoderPair {
  EncoderConfig cfg;
  Params query;
  Params key;
  double momentum = 0.999;
};

EncoderPair make_encoder_pair(const EncoderConfig& cfg, double momentum, Rng& rng);

// key <- m*key + (1-m)*query, elementwise. Shape mismatch means the pair was
// reassembled from incompatible sources; raises CheckpointError.
void momentum_update(EncoderPair& pair);

// --- checkpoint container ---------------------------------------------------

struct CheckpointData {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  double momentum = 0.999;
  std::map<std::string, std::vector<double>> f64;
  std::map<std::string, std::vector<std::uint64_t>> u64;
};

// Atomic write (temp file + rename).
void save_checkpoint(const std::string& path, const CheckpointData& data);
// Raises CheckpointError on bad magic/version/truncation.
CheckpointData load_checkpoint(const std::string& path);

// Pack both parameter sets under "q."/"k." block prefixes.
void pack_pair(const EncoderPair& pair, CheckpointData* data);
// Rebuilds parameter values for an already-constructed pair (layout from
// config); missing blocks or size mismatches raise CheckpointError.
void unpack_pair(const CheckpointData& data, EncoderPair* pair);

}  // namespace codo::encoder
