#include "gar/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <utility>

namespace gar {
namespace {

constexpr std::array<std::pair<int, int>, 16> kBones = {{
    {0, 1}, {0, 2}, {1, 3}, {2, 4}, {5, 6}, {5, 7}, {7, 9}, {6, 8},
    {8, 10}, {5, 11}, {6, 12}, {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16},
}};

constexpr double kPanelW = 240.0;
constexpr double kPanelH = 180.0;
constexpr double kMargin = 10.0;
constexpr std::size_t kColumns = 4;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  // Avoid "-0.0" so output bytes do not depend on the sign of zero.
  if (std::string(buf) == "-0.0") return "0.0";
  return buf;
}

}  // namespace

std::vector<std::size_t> panel_frames(std::size_t frames) {
  std::vector<std::size_t> out;
  if (frames == 0) return out;
  for (std::size_t i = 0; i < kSvgPanels; ++i) {
    out.push_back(static_cast<std::size_t>(std::llround(
        static_cast<double>(i) * static_cast<double>(frames - 1) /
        static_cast<double>(kSvgPanels - 1))));
  }
  return out;
}

std::string render_phenotype_svg(const WindowSample& window, int attended_track_id,
                                 std::span<const std::optional<Box>> boxes) {
  const auto frames = panel_frames(window.frames);
  // Shared pixel extent across panels keeps motion comparable between them.
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  for (std::size_t t : frames) {
    for (const NormalizedTrack& p : window.persons) {
      if (!p.present[t]) continue;
      for (std::size_t j = 0; j < kJointCount; ++j) {
        if (!p.is_valid(t, j)) continue;
        const auto [x, y] = p.pixel(t, j);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
    if (t < boxes.size() && boxes[t]) {
      x0 = std::min(x0, boxes[t]->x0);
      x1 = std::max(x1, boxes[t]->x1);
      y0 = std::min(y0, boxes[t]->y0);
      y1 = std::max(y1, boxes[t]->y1);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = y0 = 0.0;
    x1 = y1 = 1.0;
  }
  const double span = std::max({x1 - x0, (y1 - y0) * kPanelW / kPanelH, 1e-9});
  const double scale = (kPanelW - 2 * kMargin) / span;

  const std::size_t rows = (kSvgPanels + kColumns - 1) / kColumns;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kPanelW * kColumns)
      << "\" height=\"" << num(kPanelH * static_cast<double>(rows)) << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t panel = 0; panel < frames.size(); ++panel) {
    const std::size_t t = frames[panel];
    const double ox = kPanelW * static_cast<double>(panel % kColumns);
    const double oy = kPanelH * static_cast<double>(panel / kColumns);
    auto px = [&](double x) { return ox + kMargin + (x - x0) * scale; };
    auto py = [&](double y) { return oy + kMargin + (y - y0) * scale; };
    out << "<g id=\"frame-" << window.span().first + static_cast<std::int64_t>(t)
        << "\">\n";
    out << "<rect x=\"" << num(ox) << "\" y=\"" << num(oy) << "\" width=\""
        << num(kPanelW) << "\" height=\"" << num(kPanelH)
        << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
    out << "<text x=\"" << num(ox + 4) << "\" y=\"" << num(oy + 14)
        << "\" font-size=\"11\" fill=\"#555555\">t=" << t << "</text>\n";
    for (const NormalizedTrack& p : window.persons) {
      if (!p.present[t]) continue;
      const bool attended = p.track_id == attended_track_id;
      const char* color = attended ? "#d62728" : "#7f7f7f";
      for (const auto& [a, b] : kBones) {
        const auto ja = static_cast<std::size_t>(a);
        const auto jb = static_cast<std::size_t>(b);
        if (!p.is_valid(t, ja) || !p.is_valid(t, jb)) continue;
        const auto [xa, ya] = p.pixel(t, ja);
        const auto [xb, yb] = p.pixel(t, jb);
        out << "<line x1=\"" << num(px(xa)) << "\" y1=\"" << num(py(ya))
            << "\" x2=\"" << num(px(xb)) << "\" y2=\"" << num(py(yb))
            << "\" stroke=\"" << color << "\" stroke-width=\""
            << (attended ? "2" : "1") << "\"/>\n";
      }
    }
    if (t < boxes.size() && boxes[t]) {
      const Box& b = *boxes[t];
      out << "<rect x=\"" << num(px(b.x0)) << "\" y=\"" << num(py(b.y0))
          << "\" width=\"" << num((b.x1 - b.x0) * scale) << "\" height=\""
          << num((b.y1 - b.y0) * scale)
          << "\" fill=\"none\" stroke=\"#d62728\" stroke-dasharray=\"4 2\"/>\n";
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace gar
