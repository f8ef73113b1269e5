#ifndef TSDIT_SVG_HPP_
#define TSDIT_SVG_HPP_

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tsdit/decoder.hpp"
#include "tsdit/preprocess.hpp"
#include "tsdit/scene.hpp"

namespace tsdit {

// Fixed meters-to-pixels scale, recorded on the root element.
inline constexpr double kSvgPixelsPerMeter = 4.0;

namespace detail {

inline std::string fmt_pt(double x, double y) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f,%.2f", x, y);
  return buf;
}

struct SvgFrame {
  double min_x, min_y, max_x, max_y;
  double to_px_x(double x) const { return (x - min_x) * kSvgPixelsPerMeter + 10.0; }
  // SVG y grows downward.
  double to_px_y(double y) const { return (max_y - y) * kSvgPixelsPerMeter + 10.0; }
  double width() const { return (max_x - min_x) * kSvgPixelsPerMeter + 20.0; }
  double height() const { return (max_y - min_y) * kSvgPixelsPerMeter + 20.0; }
};

inline void expand(SvgFrame& f, const Vec2& p) {
  f.min_x = std::min(f.min_x, p.x);
  f.min_y = std::min(f.min_y, p.y);
  f.max_x = std::max(f.max_x, p.x);
  f.max_y = std::max(f.max_y, p.y);
}

inline void polyline(std::string& out, const SvgFrame& f, const std::vector<Vec2>& pts,
                     const char* cls, const char* style) {
  out += "  <polyline class=\"";
  out += cls;
  out += "\" points=\"";
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i > 0) out += " ";
    out += fmt_pt(f.to_px_x(pts[i].x), f.to_px_y(pts[i].y));
  }
  out += "\" style=\"";
  out += style;
  out += "\"/>\n";
}

}  // namespace detail

// Lanes in grey, other agents' tracks in blue, ground-truth futures dashed,
// each sampled trajectory in a color cycle. Coordinates are absolute world
// meters; bundles are world-centric and shifted back by the world center.
inline std::string render_scene_svg(const Scene& scene, const ModelInputs& inputs,
                                    const std::vector<TrajectoryBundle>& samples) {
  detail::SvgFrame frame{1e300, 1e300, -1e300, -1e300};
  for (const LanePolyline& l : scene.lanes)
    for (const Vec2& p : l.points) detail::expand(frame, p);
  for (const AgentTrack& a : scene.agents)
    for (const Vec2& p : a.positions) detail::expand(frame, p);
  if (frame.min_x > frame.max_x) frame = {0.0, 0.0, 1.0, 1.0};

  std::string svg;
  {
    char head[256];
    std::snprintf(head, sizeof(head),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                  "data-pixels-per-meter=\"%.2f\">\n",
                  frame.width(), frame.height(), kSvgPixelsPerMeter);
    svg = head;
  }
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (const LanePolyline& l : scene.lanes) {
    detail::polyline(svg, frame, l.points, "lane", "fill:none;stroke:#bbbbbb;stroke-width:1.5");
  }
  const int t_h = scene.horizon_history;
  for (const AgentTrack& a : scene.agents) {
    if (a.role == AgentRole::Other) {
      detail::polyline(svg, frame, a.positions, "other",
                       "fill:none;stroke:#3366cc;stroke-width:1");
    } else {
      std::vector<Vec2> future(a.positions.begin() + t_h, a.positions.end());
      detail::polyline(svg, frame, future, "gt",
                       "fill:none;stroke:#222222;stroke-width:1;stroke-dasharray:4 3");
    }
  }

  static constexpr const char* kColors[] = {"#cc3333", "#33aa55", "#cc8800",
                                            "#8844cc", "#11aaaa", "#cc44aa"};
  for (size_t s = 0; s < samples.size(); ++s) {
    const TrajectoryBundle& b = samples[s];
    const int a_p = b.positions.dim(0);
    const int t_f = b.positions.dim(1);
    const char* color = kColors[s % (sizeof(kColors) / sizeof(kColors[0]))];
    for (int a = 0; a < a_p; ++a) {
      std::vector<Vec2> pts;
      pts.reserve(static_cast<size_t>(t_f));
      for (int t = 0; t < t_f; ++t) {
        pts.push_back({b.positions.data()[(a * t_f + t) * 2 + 0] + inputs.world_center.x,
                       b.positions.data()[(a * t_f + t) * 2 + 1] + inputs.world_center.y});
      }
      const std::string style =
          std::string("fill:none;stroke:") + color + ";stroke-width:1.2";
      detail::polyline(svg, frame, pts, "sample", style.c_str());
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline void save_svg(const std::string& svg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write svg: " + path);
  out << svg;
}

}  // namespace tsdit

#endif  // TSDIT_SVG_HPP_
