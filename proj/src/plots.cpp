#include "codo/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "codo/common.hpp"
#include "json.hpp"

namespace codo::plots {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kLeft = 56;
constexpr int kRight = 16;
constexpr int kTop = 24;
constexpr int kBottom = 40;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataFormatError("cannot write " + path);
  out << body;
  out.flush();
  if (!out) throw DataFormatError("failed writing " + path);
}

std::string svg_open(const std::string& title) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
       std::to_string(kWidth) + "\" height=\"" + std::to_string(kHeight) +
       "\" viewBox=\"0 0 " + std::to_string(kWidth) + " " +
       std::to_string(kHeight) + "\">\n";
  s += "<rect width=\"" + std::to_string(kWidth) + "\" height=\"" +
       std::to_string(kHeight) + "\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(kWidth / 2) +
       "\" y=\"16\" text-anchor=\"middle\" font-family=\"monospace\" "
       "font-size=\"13\">" +
       title + "</text>\n";
  return s;
}

std::string axis_frame() {
  return "<path d=\"M " + std::to_string(kLeft) + " " + std::to_string(kTop) +
         " V " + std::to_string(kHeight - kBottom) + " H " +
         std::to_string(kWidth - kRight) +
         "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
}

std::string text_at(double x, double y, const std::string& anchor,
                    const std::string& body) {
  return "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" text-anchor=\"" +
         anchor + "\" font-family=\"monospace\" font-size=\"11\">" + body +
         "</text>\n";
}

}  // namespace

std::vector<LossPoint> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path);
  std::vector<LossPoint> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      points.push_back({j.at("step").get<std::int64_t>(),
                        j.at("loss").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataFormatError(path + ":" + std::to_string(line_no) +
                            ": bad metrics record: " + e.what());
    }
  }
  return points;
}

bool write_loss_curve_svg(const std::vector<LossPoint>& points,
                          const std::string& path) {
  if (points.empty()) return false;

  double lo = points[0].loss, hi = points[0].loss;
  std::int64_t s0 = points[0].step, s1 = points[0].step;
  for (const auto& p : points) {
    lo = std::min(lo, p.loss);
    hi = std::max(hi, p.loss);
    s0 = std::min(s0, p.step);
    s1 = std::max(s1, p.step);
  }
  const double pad = hi > lo ? 0.05 * (hi - lo) : 0.5;
  lo -= pad;
  hi += pad;
  const double span_x = s1 > s0 ? static_cast<double>(s1 - s0) : 1.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  const auto x_of = [&](std::int64_t step) {
    return kLeft + plot_w * (static_cast<double>(step - s0) / span_x);
  };
  const auto y_of = [&](double loss) {
    return kTop + plot_h * (1.0 - (loss - lo) / (hi - lo));
  };

  std::string s = svg_open("loss vs step");
  s += axis_frame();
  s += "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" "
       "points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) s += " ";
    s += fmt(x_of(points[i].step)) + "," + fmt(y_of(points[i].loss));
  }
  s += "\"/>\n";
  s += text_at(kLeft - 6, y_of(hi - pad) + 4, "end", fmt_label(hi - pad));
  s += text_at(kLeft - 6, y_of(lo + pad) + 4, "end", fmt_label(lo + pad));
  s += text_at(kLeft, kHeight - kBottom + 16, "middle",
               std::to_string(s0));
  s += text_at(kWidth - kRight, kHeight - kBottom + 16, "middle",
               std::to_string(s1));
  s += "</svg>\n";
  write_file(path, s);
  return true;
}

namespace {

struct RowStats {
  std::string name;
  double gap_sum = 0.0;
  double acc_sum = 0.0;
  int n = 0;
};

std::vector<RowStats> aggregate_rows(
    const std::vector<evalsuite::AblationCell>& cells) {
  std::vector<RowStats> rows;
  for (const auto& c : cells) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const RowStats& r) { return r.name == c.row; });
    if (it == rows.end()) {
      rows.push_back({c.row, 0.0, 0.0, 0});
      it = rows.end() - 1;
    }
    it->gap_sum += c.invariance_gap;
    it->acc_sum += c.probe_accuracy;
    ++it->n;
  }
  return rows;
}

}  // namespace

bool write_ablation_gap_svg(const std::vector<evalsuite::AblationCell>& cells,
                            const std::string& path) {
  if (cells.empty()) return false;
  const auto rows = aggregate_rows(cells);

  double lo = 0.0, hi = 0.0;
  for (const auto& r : rows) {
    const double mean = r.gap_sum / r.n;
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
  }
  const double pad = (hi > lo ? hi - lo : 1.0) * 0.1;
  lo -= pad;
  hi += pad;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto y_of = [&](double gap) {
    return kTop + plot_h * (1.0 - (gap - lo) / (hi - lo));
  };

  std::string s = svg_open("invariance gap by background-pool row");
  s += axis_frame();
  const double slot = plot_w / static_cast<double>(rows.size());
  const double bar_w = slot * 0.6;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double mean = rows[i].gap_sum / rows[i].n;
    const double x = kLeft + slot * (static_cast<double>(i) + 0.2);
    const double y_zero = y_of(0.0);
    const double y_val = y_of(mean);
    const double top = std::min(y_zero, y_val);
    const double h = std::abs(y_zero - y_val);
    s += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(top) + "\" width=\"" +
         fmt(bar_w) + "\" height=\"" + fmt(h) + "\" fill=\"#3f8f4f\"/>\n";
    char val[32];
    std::snprintf(val, sizeof val, "%.3f", mean);
    s += text_at(x + bar_w / 2, top - 4, "middle", val);
    s += text_at(x + bar_w / 2, kHeight - kBottom + 16, "middle", rows[i].name);
  }
  // zero line across the plot, drawn above the bars for visibility
  s += "<path d=\"M " + std::to_string(kLeft) + " " + fmt(y_of(0.0)) + " H " +
       std::to_string(kWidth - kRight) +
       "\" stroke=\"black\" stroke-width=\"0.5\" stroke-dasharray=\"3 3\"/>\n";
  s += "</svg>\n";
  write_file(path, s);
  return true;
}

bool write_probe_table(const std::vector<evalsuite::AblationCell>& cells,
                       const std::string& path) {
  if (cells.empty()) return false;
  const auto rows = aggregate_rows(cells);
  std::set<std::uint64_t> seed_set;
  for (const auto& c : cells) seed_set.insert(c.seed);

  std::map<std::pair<std::string, std::uint64_t>, double> acc;
  for (const auto& c : cells) acc[{c.row, c.seed}] = c.probe_accuracy;

  std::string s = "probe accuracy by background-pool row\n\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-14s", "row");
  s += buf;
  for (const auto seed : seed_set) {
    std::snprintf(buf, sizeof buf, "  seed%-6llu",
                  static_cast<unsigned long long>(seed));
    s += buf;
  }
  s += "  mean\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s", r.name.c_str());
    s += buf;
    for (const auto seed : seed_set) {
      const auto it = acc.find({r.name, seed});
      if (it == acc.end())
        std::snprintf(buf, sizeof buf, "  %-10s", "-");
      else
        std::snprintf(buf, sizeof buf, "  %-10.4f", it->second);
      s += buf;
    }
    std::snprintf(buf, sizeof buf, "  %.4f\n", r.acc_sum / r.n);
    s += buf;
  }
  write_file(path, s);
  return true;
}

}  // namespace codo::plots
