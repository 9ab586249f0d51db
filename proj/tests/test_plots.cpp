#include "codo/plots.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "codo/common.hpp"
#include "codo/trainer.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
namespace pl = codo::plots;
using codo::evalsuite::AblationCell;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("codo_plot_" + name);
  fs::remove(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// y coordinates of the polyline, in order
std::vector<double> polyline_ys(const std::string& svg) {
  const auto open = svg.find("points=\"");
  REQUIRE(open != std::string::npos);
  const auto close = svg.find('"', open + 8);
  std::istringstream ss(svg.substr(open + 8, close - open - 8));
  std::vector<double> ys;
  std::string pair;
  while (ss >> pair) {
    const auto comma = pair.find(',');
    ys.push_back(std::stod(pair.substr(comma + 1)));
  }
  return ys;
}

}  // namespace

TEST_CASE("metrics records parse back from the trainer's own format") {
  const fs::path path = temp_file("metrics.jsonl");
  std::ofstream out(path);
  for (int i = 1; i <= 3; ++i) {
    codo::trainer::StepMetrics m;
    m.step = i;
    m.loss = 3.0 / i;
    m.lr = 0.01;
    m.queue_fill = 4 * i;
    m.pos_logit_mean = 0.1;
    out << codo::trainer::to_jsonl(m) << '\n';
  }
  out.close();

  const auto points = pl::read_metrics_jsonl(path.string());
  REQUIRE(points.size() == 3);
  CHECK(points[0].step == 1);
  CHECK(points[0].loss == 3.0);
  CHECK(points[2].step == 3);
  CHECK(points[2].loss == 1.0);

  std::ofstream(path, std::ios::app) << "not json\n";
  CHECK_THROWS_AS(pl::read_metrics_jsonl(path.string()), codo::DataFormatError);
  CHECK_THROWS_AS(pl::read_metrics_jsonl("/nonexistent.jsonl"),
                  codo::DataFormatError);
}

TEST_CASE("empty inputs write no files") {
  const fs::path svg = temp_file("empty.svg");
  CHECK(!pl::write_loss_curve_svg({}, svg.string()));
  CHECK(!pl::write_ablation_gap_svg({}, svg.string()));
  CHECK(!pl::write_probe_table({}, svg.string()));
  CHECK(!fs::exists(svg));
}

TEST_CASE("monotone loss renders as a monotone polyline") {
  std::vector<pl::LossPoint> points;
  for (int i = 1; i <= 50; ++i)
    points.push_back({i, 5.0 - 0.08 * i});
  const fs::path path = temp_file("curve.svg");
  REQUIRE(pl::write_loss_curve_svg(points, path.string()));

  const std::string svg = slurp(path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("loss vs step") != std::string::npos);
  const auto ys = polyline_ys(svg);
  REQUIRE(ys.size() == 50);
  // svg y grows downward, so decreasing loss must render non-decreasing
  for (std::size_t i = 1; i < ys.size(); ++i) CHECK(ys[i] >= ys[i - 1]);
}

TEST_CASE("plot outputs are byte-identical on reruns") {
  std::vector<pl::LossPoint> points;
  for (int i = 1; i <= 20; ++i) points.push_back({i * 3, 2.0 + 0.7 / i});
  const std::vector<AblationCell> cells{
      {"single", 1, 0.21, 0.55, 1.9}, {"single", 2, 0.18, 0.52, 2.0},
      {"mixed", 1, 0.33, 0.70, 1.7},  {"mixed", 2, 0.36, 0.72, 1.6},
  };

  const fs::path curve = temp_file("det_curve.svg");
  const fs::path bars = temp_file("det_bars.svg");
  const fs::path table = temp_file("det_table.txt");
  REQUIRE(pl::write_loss_curve_svg(points, curve.string()));
  REQUIRE(pl::write_ablation_gap_svg(cells, bars.string()));
  REQUIRE(pl::write_probe_table(cells, table.string()));
  const std::string c1 = slurp(curve), b1 = slurp(bars), t1 = slurp(table);

  REQUIRE(pl::write_loss_curve_svg(points, curve.string()));
  REQUIRE(pl::write_ablation_gap_svg(cells, bars.string()));
  REQUIRE(pl::write_probe_table(cells, table.string()));
  CHECK(slurp(curve) == c1);
  CHECK(slurp(bars) == b1);
  CHECK(slurp(table) == t1);
}

TEST_CASE("bar chart and table aggregate rows over seeds") {
  const std::vector<AblationCell> cells{
      {"single", 1, 0.20, 0.50, 2.0},
      {"single", 2, 0.40, 0.60, 2.1},
      {"mixed", 1, 0.60, 0.90, 1.5},
  };
  const fs::path bars = temp_file("agg_bars.svg");
  const fs::path table = temp_file("agg_table.txt");
  REQUIRE(pl::write_ablation_gap_svg(cells, bars.string()));
  REQUIRE(pl::write_probe_table(cells, table.string()));

  const std::string svg = slurp(bars);
  CHECK(svg.find(">single<") != std::string::npos);
  CHECK(svg.find(">mixed<") != std::string::npos);
  CHECK(svg.find(">0.300<") != std::string::npos);  // mean of 0.20 and 0.40
  CHECK(svg.find(">0.600<") != std::string::npos);
  CHECK(svg.find(">single<") < svg.find(">mixed<"));  // first-appearance order

  const std::string txt = slurp(table);
  CHECK(txt.find("seed1") != std::string::npos);
  CHECK(txt.find("seed2") != std::string::npos);
  CHECK(txt.find("0.5500") != std::string::npos);  // single mean
  CHECK(txt.find("-") != std::string::npos);       // mixed has no seed 2 cell
  CHECK(txt.find("0.9000") != std::string::npos);
}
