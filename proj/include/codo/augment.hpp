#pragma once

#include <string>
#include <utility>
#include <vector>

#include "codo/geometry.hpp"
#include "codo/image.hpp"
#include "codo/proposals.hpp"
#include "codo/rng.hpp"

namespace codo::augment {

enum class RoleTag { pretrain_like, downstream_like_A, downstream_like_B };

struct BackgroundPool {
  std::string pool_id;
  std::vector<Image> images;
  RoleTag role_tag = RoleTag::pretrain_like;
};

struct PasteConfig {
  double scale_min = 0.3;  // fraction of background short side
  double scale_max = 0.8;
  double aspect_min = 0.75;  // multiplicative jitter on the crop aspect
  double aspect_max = 4.0 / 3.0;

  void validate() const;
};

struct PhotoConfig {
  double p_color_jitter = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double p_grayscale = 0.2;
  double p_blur = 0.5;
  double p_hflip = 0.5;

  static PhotoConfig disabled() {
    return {0.0, 0.4, 0.4, 0.4, 0.1, 0.0, 0.0, 0.0};
  }
};

struct View {
  Image image;
  BoundingBox box;
  std::string pool_id;
};

struct ViewSet {
  std::string foreground_id;
  std::uint64_t crop_checksum = 0;  // pre-augmentation foreground content
  View query;
  std::vector<View> keys;
};

// Resizes the crop to a random scale of the background short side with a
// random aspect factor, hard-pastes it at a uniform position, then jitters
// the paste rectangle. Throws SkipSampleError when no draw fits.
std::pair<Image, BoundingBox> cpj(const Image& proposal_crop, const Image& background,
                                  const PasteConfig& paste_cfg,
                                  const JitterConfig& jitter_cfg, Rng& rng);

// Color jitter, grayscale, gaussian blur, horizontal flip, each gated by its
// probability. Sets *flipped so the caller can mirror the box.
Image photometric_augment(const Image& image, const PhotoConfig& cfg, Rng& rng,
                          bool* flipped);

BoundingBox mirror_box(const BoundingBox& box, int image_width);

// Builds a query view plus n_keys key views of one foreground. Background
// draws are pool-uniform, then image-uniform within the pool; failed pastes
// are redrawn up to 5 times before the foreground is skipped.
ViewSet build_viewset(const proposals::Proposal& proposal, const Image& source_image,
                      const std::vector<BackgroundPool>& pools, int n_keys,
                      const PasteConfig& paste_cfg, const JitterConfig& jitter_cfg,
                      const PhotoConfig& photo_cfg, Rng& rng);

// Ablation-only variant that lets query and key views draw from different
// pool sets. build_viewset is the supported entry point; it keeps the two
// eligibility sets identical.
ViewSet build_viewset_split(const proposals::Proposal& proposal,
                            const Image& source_image,
                            const std::vector<BackgroundPool>& query_pools,
                            const std::vector<BackgroundPool>& key_pools, int n_keys,
                            const PasteConfig& paste_cfg,
                            const JitterConfig& jitter_cfg,
                            const PhotoConfig& photo_cfg, Rng& rng);

}  // namespace codo::augment
