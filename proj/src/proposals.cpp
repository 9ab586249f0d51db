#include "codo/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>

#include "codo/common.hpp"

namespace codo::proposals {
namespace {

constexpr double kMinSide = 2.0;

std::vector<double> luma(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out[static_cast<std::size_t>(y) * img.width + x] =
          0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  return out;
}

// Summed-area table of the central-difference gradient magnitude.
std::vector<double> gradient_integral(const Image& img) {
  const int w = img.width, h = img.height;
  const std::vector<double> l = luma(img);
  auto at = [&](int x, int y) {
    return l[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w +
             std::clamp(x, 0, w - 1)];
  };
  std::vector<double> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double g = 0.5 * std::abs(at(x + 1, y) - at(x - 1, y)) +
                       0.5 * std::abs(at(x, y + 1) - at(x, y - 1));
      sat[static_cast<std::size_t>(y + 1) * (w + 1) + (x + 1)] =
          g + sat[static_cast<std::size_t>(y) * (w + 1) + (x + 1)] +
          sat[static_cast<std::size_t>(y + 1) * (w + 1) + x] -
          sat[static_cast<std::size_t>(y) * (w + 1) + x];
    }
  return sat;
}

double box_mean(const std::vector<double>& sat, int w, int h, const BoundingBox& b) {
  const int x0 = std::clamp(static_cast<int>(std::floor(b.x0)), 0, w);
  const int y0 = std::clamp(static_cast<int>(std::floor(b.y0)), 0, h);
  const int x1 = std::clamp(static_cast<int>(std::ceil(b.x1)), x0 + 1, w);
  const int y1 = std::clamp(static_cast<int>(std::ceil(b.y1)), y0 + 1, h);
  const double sum = sat[static_cast<std::size_t>(y1) * (w + 1) + x1] -
                     sat[static_cast<std::size_t>(y0) * (w + 1) + x1] -
                     sat[static_cast<std::size_t>(y1) * (w + 1) + x0] +
                     sat[static_cast<std::size_t>(y0) * (w + 1) + x0];
  return sum / (static_cast<double>(x1 - x0) * (y1 - y0));
}

std::vector<Proposal> energy_sampler(const Image& image, const std::string& id,
                                     const ProposalGeneratorConfig& cfg, Rng& rng) {
  const double area = static_cast<double>(image.width) * image.height;
  const std::vector<double> sat = gradient_integral(image);
  std::vector<Proposal> out;
  for (int c = 0; c < cfg.candidates_per_image; ++c) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double frac = rng.uniform(cfg.min_box_fraction, cfg.max_box_fraction);
      const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
      const double w = std::sqrt(frac * area * aspect);
      const double h = w / aspect;
      if (w < kMinSide || h < kMinSide || w > image.width || h > image.height)
        continue;
      const double x0 = rng.uniform(0.0, image.width - w);
      const double y0 = rng.uniform(0.0, image.height - h);
      const BoundingBox box{x0, y0, x0 + w, y0 + h};
      out.push_back({box, id, box_mean(sat, image.width, image.height, box)});
      break;
    }
  }
  return out;
}

struct DisjointSet {
  std::vector<int> parent, rank_;
  std::vector<int> size;
  explicit DisjointSet(int n) : parent(n), rank_(n, 0), size(n, 1) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  int join(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    if (rank_[a] == rank_[b]) ++rank_[a];
    return a;
  }
};

struct Edge {
  int a, b;
  double w;
};

std::vector<Proposal> graph_segmentation(const Image& image, const std::string& id,
                                         const ProposalGeneratorConfig& cfg) {
  const int w = image.width, h = image.height;
  const int n = w * h;
  auto color_dist = [&](int pa, int pb) {
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = static_cast<double>(image.at(pa % w, pa / w, c)) -
                       image.at(pb % w, pb / w, c);
      acc += d * d;
    }
    return std::sqrt(acc);
  };
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(n) * 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int p = y * w + x;
      if (x + 1 < w) edges.push_back({p, p + 1, color_dist(p, p + 1)});
      if (y + 1 < h) edges.push_back({p, p + w, color_dist(p, p + w)});
    }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return a.w < b.w; });

  constexpr double kScale = 200.0;
  constexpr int kMinComponent = 16;
  DisjointSet ds(n);
  std::vector<double> internal(static_cast<std::size_t>(n), 0.0);
  for (const Edge& e : edges) {
    const int a = ds.find(e.a), b = ds.find(e.b);
    if (a == b) continue;
    const double ta = internal[static_cast<std::size_t>(a)] + kScale / ds.size[a];
    const double tb = internal[static_cast<std::size_t>(b)] + kScale / ds.size[b];
    if (e.w <= std::min(ta, tb))
      internal[static_cast<std::size_t>(ds.join(a, b))] = e.w;
  }
  for (const Edge& e : edges) {
    const int a = ds.find(e.a), b = ds.find(e.b);
    if (a != b && (ds.size[a] < kMinComponent || ds.size[b] < kMinComponent))
      ds.join(a, b);
  }

  struct Extent {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1, count = 0;
  };
  std::vector<Extent> extents(static_cast<std::size_t>(n));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Extent& e = extents[static_cast<std::size_t>(ds.find(y * w + x))];
      e.x0 = std::min(e.x0, x);
      e.y0 = std::min(e.y0, y);
      e.x1 = std::max(e.x1, x);
      e.y1 = std::max(e.y1, y);
      ++e.count;
    }

  const double area = static_cast<double>(n);
  std::vector<Proposal> out;
  for (const Extent& e : extents) {
    if (e.count == 0) continue;
    const BoundingBox box{static_cast<double>(e.x0), static_cast<double>(e.y0),
                          static_cast<double>(e.x1 + 1), static_cast<double>(e.y1 + 1)};
    const double frac = box.area() / area;
    if (frac < cfg.min_box_fraction || frac > cfg.max_box_fraction) continue;
    out.push_back({box, id, e.count / box.area()});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > cfg.candidates_per_image)
    out.resize(static_cast<std::size_t>(cfg.candidates_per_image));
  return out;
}

}  // namespace

Strategy strategy_from_string(const std::string& name) {
  if (name == "energy_sampler") return Strategy::energy_sampler;
  if (name == "graph_segmentation") return Strategy::graph_segmentation;
  throw std::invalid_argument("unknown proposal strategy: " + name);
}

std::string to_string(Strategy s) {
  return s == Strategy::energy_sampler ? "energy_sampler" : "graph_segmentation";
}

void ProposalGeneratorConfig::validate() const {
  if (!(min_box_fraction > 0.0 && min_box_fraction < max_box_fraction &&
        max_box_fraction <= 1.0))
    throw std::invalid_argument(
        "box fractions must satisfy 0 < min < max <= 1");
  if (candidates_per_image < 0)
    throw std::invalid_argument("candidates_per_image must be non-negative");
}

std::vector<Proposal> generate_proposals(const Image& image, const std::string& image_id,
                                         const ProposalGeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  if (image.width <= 0 || image.height <= 0)
    throw std::invalid_argument("generate_proposals: empty image");
  if (cfg.candidates_per_image == 0) return {};
  if (image.width < 2 * kMinSide || image.height < 2 * kMinSide) return {};

  std::vector<Proposal> out = cfg.strategy == Strategy::energy_sampler
                                  ? energy_sampler(image, image_id, cfg, rng)
                                  : graph_segmentation(image, image_id, cfg);
  if (cfg.strategy == Strategy::energy_sampler)
    std::stable_sort(out.begin(), out.end(), [](const Proposal& a, const Proposal& b) {
      return a.score > b.score;
    });
  return out;
}

std::vector<Proposal> filter_aspect_ratio(std::vector<Proposal> proposals) {
  std::erase_if(proposals, [](const Proposal& p) {
    const double r = p.box.aspect();
    return r >= 3.0 || r <= 1.0 / 3.0;
  });
  return proposals;
}

const Proposal& select_one(const std::vector<Proposal>& proposals, Rng& rng) {
  if (proposals.empty())
    throw NoProposalError("no proposals available after filtering");
  return proposals[rng.uniform_int(proposals.size())];
}

}  // namespace codo::proposals
