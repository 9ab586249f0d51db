#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codo/evalsuite.hpp"

namespace codo::plots {

struct LossPoint {
  std::int64_t step = 0;
  double loss = 0.0;
};

// Parses trainer metrics records (one JSON object per line; step + loss).
std::vector<LossPoint> read_metrics_jsonl(const std::string& path);

// SVG polyline of loss against step. Writes nothing and returns false on
// empty input. Byte-identical output for identical input.
bool write_loss_curve_svg(const std::vector<LossPoint>& points,
                          const std::string& path);

// SVG bar chart of the mean invariance gap per ablation row, seeds averaged,
// rows in first-appearance order.
bool write_ablation_gap_svg(const std::vector<evalsuite::AblationCell>& cells,
                            const std::string& path);

// Plain-text probe accuracy table: one line per row, one column per seed,
// plus the row mean.
bool write_probe_table(const std::vector<evalsuite::AblationCell>& cells,
                       const std::string& path);

}  // namespace codo::plots
