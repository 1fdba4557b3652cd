// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metrics.hpp"

namespace survfuse {

struct KmGroup {
  std::string name;  // "low" or "high"
  std::vector<KmPoint> curve;
};

// Survival probability of a step curve at time t (right-continuous).
inline double km_curve_at(const std::vector<KmPoint>& curve, double t) {
  double value = 1.0;
  for (const KmPoint& point : curve) {
    if (point.time > t) break;
    value = point.survival;
  }
  return value;
}

// Vertical distance between two curves at time t; used to assert that
// separated cohorts produce visually disjoint plots.
inline double curve_gap(const std::vector<KmPoint>& a,
                        const std::vector<KmPoint>& b, double t) {
  return std::abs(km_curve_at(a, t) - km_curve_at(b, t));
}

inline std::string format_p_value(double p) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.2e", p);
  return buffer;
}

// Curve file: one `group time survival at_risk` row per step point.
inline void save_km_curves(const std::string& path,
                           const std::vector<KmGroup>& groups) {
  std::ofstream out(path);
  require(out.good(), "km curves: cannot write '" + path + "'");
  out << "group time survival at_risk\n";
  for (const KmGroup& group : groups) {
    for (const KmPoint& point : group.curve) {
      char line[128];
      std::snprintf(line, sizeof(line), "%s %.17g %.17g %zu\n",
                    group.name.c_str(), point.time, point.survival,
                    point.at_risk);
      out << line;
    }
  }
}

namespace detail {

inline std::string svg_step_path(const std::vector<KmPoint>& curve,
                                 double max_time, double width, double height,
                                 double margin) {
  const double span = max_time > 0.0 ? max_time : 1.0;
  auto x = [&](double t) { return margin + (t / span) * (width - 2 * margin); };
  auto y = [&](double s) {
    return margin + (1.0 - s) * (height - 2 * margin);
  };
  std::ostringstream path;
  double prev_s = 1.0;
  path << "M " << x(0.0) << " " << y(1.0);
  for (const KmPoint& point : curve) {
    path << " L " << x(point.time) << " " << y(prev_s);
    path << " L " << x(point.time) << " " << y(point.survival);
    prev_s = point.survival;
  }
  path << " L " << x(max_time) << " " << y(prev_s);
  return path.str();
}

}  // namespace detail

// Minimal step plot. High-risk curves are drawn red and low-risk curves blue;
// the log-rank p-value is annotated only when both groups are present.
inline void save_km_svg(const std::string& path,
                        const std::vector<KmGroup>& groups,
                        const LogRankResult* test) {
  require(!groups.empty(), "km svg: no curves to draw");
  const double width = 480, height = 360, margin = 40;
  double max_time = 0.0;
  for (const KmGroup& group : groups) {
    for (const KmPoint& point : group.curve) {
      max_time = std::max(max_time, point.time);
    }
  }

  std::ofstream out(path);
  require(out.good(), "km svg: cannot write '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  out << "  <rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  out << "  <line x1=\"" << margin << "\" y1=\"" << height - margin
      << "\" x2=\"" << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "  <line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\""
      << margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  for (const KmGroup& group : groups) {
    const char* color = group.name == "high" ? "red" : "blue";
    out << "  <path d=\""
        << detail::svg_step_path(group.curve, max_time, width, height, margin)
        << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  }
  if (test != nullptr && groups.size() >= 2) {
    out << "  <text x=\"" << margin + 10 << "\" y=\"" << margin + 10
        << "\" font-family=\"monospace\" font-size=\"14\">log-rank p = "
        << format_p_value(test->p_value) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace survfuse
