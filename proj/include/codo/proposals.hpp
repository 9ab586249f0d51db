#pragma once

#include <string>
#include <vector>

#include "codo/geometry.hpp"
#include "codo/image.hpp"
#include "codo/rng.hpp"

namespace codo::proposals {

struct Proposal {
  BoundingBox box;
  std::string source_image_id;
  double score = 0.0;
};

enum class Strategy { energy_sampler, graph_segmentation };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy s);

struct ProposalGeneratorConfig {
  Strategy strategy = Strategy::energy_sampler;
  double min_box_fraction = 0.05;
  double max_box_fraction = 0.5;
  int candidates_per_image = 32;

  void validate() const;
};

// Scores candidate boxes on the image and returns them best-first.
// energy_sampler rates random boxes by mean gradient magnitude;
// graph_segmentation merges an over-segmentation into component boxes.
std::vector<Proposal> generate_proposals(const Image& image,
                                         const std::string& image_id,
                                         const ProposalGeneratorConfig& cfg,
                                         Rng& rng);

// Drops every box with w/h >= 3 or w/h <= 1/3; keeps input order.
std::vector<Proposal> filter_aspect_ratio(std::vector<Proposal> proposals);

// Uniform draw. Throws NoProposalError on an empty list.
const Proposal& select_one(const std::vector<Proposal>& proposals, Rng& rng);

}  // namespace codo::proposals
