#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvf/geometry.hpp"
#include "rvf/image.hpp"

namespace rvf {

struct RgbTriple {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const RgbTriple&) const = default;
};

/// One radar capture: timestamp plus the (possibly empty) detection list.
struct RadarFrame {
  double timestamp = 0.0;
  std::vector<RadarDetection> detections;
};

struct RenderStats {
  int drawn = 0;
  int dropped = 0;  ///< detections that projected out of frame
};

/// Range/velocity to pixel values:
///   r = 128(d+20)/250 + 127,  g = 128(v+40)/50 + 127,  b = 128(v-20)/50 + 127
/// rounded half-up and clamped to [0, 255].
inline RgbTriple quantize_rgb(double d, double v) {
  const auto quant = [](double x) -> std::uint8_t {
    const double rounded = std::floor(x + 0.5);
    return static_cast<std::uint8_t>(std::clamp(rounded, 0.0, 255.0));
  };
  return {quant(128.0 * (d + 20.0) / 250.0 + 127.0),
          quant(128.0 * (v + 40.0) / 50.0 + 127.0),
          quant(128.0 * (v - 20.0) / 50.0 + 127.0)};
}

/// Inverse of the g channel over its unclamped band, for decode checks.
inline double velocity_from_g(std::uint8_t g) { return (g - 127.0) * 50.0 / 128.0 - 40.0; }

/// Project a radar frame onto the pixel plane. Each in-frame detection
/// paints a disc of radius splat_radius with quantize_rgb(rho, v); colliding
/// pixels keep the smaller range (nearer target occludes). Untouched pixels
/// stay (0,0,0).
inline Image8 render_radar_frame(const RadarFrame& frame, const SensorRig& rig, int width,
                                 int height, int splat_radius, RenderStats* stats = nullptr) {
  Image8 img(width, height);
  std::vector<double> depth(static_cast<std::size_t>(width) * height,
                            std::numeric_limits<double>::infinity());
  RenderStats local;
  for (const RadarDetection& det : frame.detections) {
    const ProjectionResult proj = project_radar_to_pixel(det, rig);
    if (!proj.in_frame) {
      ++local.dropped;
      continue;
    }
    ++local.drawn;
    const int cx = static_cast<int>(std::floor(proj.x_p + 0.5));
    const int cy = static_cast<int>(std::floor(proj.y_p + 0.5));
    const RgbTriple color = quantize_rgb(det.rho, det.v);
    const int r = splat_radius;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (dx * dx + dy * dy > r * r) continue;
        const int x = cx + dx, y = cy + dy;
        if (!img.in_bounds(x, y)) continue;
        const std::size_t idx = static_cast<std::size_t>(y) * width + x;
        if (det.rho >= depth[idx]) continue;
        depth[idx] = det.rho;
        std::uint8_t* px = img.at(x, y);
        px[0] = color.r;
        px[1] = color.g;
        px[2] = color.b;
      }
    }
  }
  if (stats) *stats = local;
  return img;
}

namespace detail {

/// Match detections of frame `primary` against `other` by nearest neighbour
/// in (theta, phi) within the gate; one-to-one, greedy in primary order.
inline std::vector<int> match_by_angle(const std::vector<RadarDetection>& primary,
                                       const std::vector<RadarDetection>& other,
                                       double gate_rad) {
  std::vector<int> match(primary.size(), -1);
  std::vector<bool> taken(other.size(), false);
  for (std::size_t i = 0; i < primary.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (std::size_t j = 0; j < other.size(); ++j) {
      if (taken[j]) continue;
      const double dt = primary[i].theta - other[j].theta;
      const double dp = primary[i].phi - other[j].phi;
      if (std::abs(dt) > gate_rad || std::abs(dp) > gate_rad) continue;
      const double d2 = dt * dt + dp * dp;
      if (d2 < best) {
        best = d2;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      match[i] = best_j;
      taken[static_cast<std::size_t>(best_j)] = true;
    }
  }
  return match;
}

}  // namespace detail

/// Linear-interpolation time alignment of radar frames onto camera
/// timestamps. For each camera time t in [first, last] radar timestamp, the
/// bracketing frames are matched per target (nearest neighbour in angle
/// within `gate_rad`); matched targets get rho and v linearly interpolated,
/// unmatched targets are copied from the nearer frame. A camera timestamp at
/// an exact radar timestamp returns that frame unchanged.
inline std::vector<RadarFrame> time_align(const std::vector<RadarFrame>& radar,
                                          const std::vector<double>& camera_timestamps,
                                          double gate_rad = deg_to_rad(2.0)) {
  if (radar.empty()) throw std::invalid_argument("time_align: no radar frames");
  for (std::size_t i = 1; i < radar.size(); ++i)
    if (radar[i].timestamp < radar[i - 1].timestamp)
      throw std::invalid_argument("time_align: radar frames not sorted by timestamp");

  std::vector<RadarFrame> out;
  out.reserve(camera_timestamps.size());
  for (const double t : camera_timestamps) {
    if (t < radar.front().timestamp || t > radar.back().timestamp)
      throw std::out_of_range("time_align: camera timestamp " + std::to_string(t) +
                              " outside radar coverage [" +
                              std::to_string(radar.front().timestamp) + ", " +
                              std::to_string(radar.back().timestamp) + "]");

    // Bracket t between consecutive radar frames.
    std::size_t hi = 0;
    while (hi < radar.size() && radar[hi].timestamp < t) ++hi;
    if (hi < radar.size() && radar[hi].timestamp == t) {
      RadarFrame copy = radar[hi];
      copy.timestamp = t;
      out.push_back(std::move(copy));
      continue;
    }
    const RadarFrame& lo_f = radar[hi - 1];
    const RadarFrame& hi_f = radar[hi];
    const double w = (t - lo_f.timestamp) / (hi_f.timestamp - lo_f.timestamp);
    const bool lo_nearer = w <= 0.5;
    const RadarFrame& near_f = lo_nearer ? lo_f : hi_f;
    const RadarFrame& far_f = lo_nearer ? hi_f : lo_f;

    RadarFrame aligned;
    aligned.timestamp = t;
    const std::vector<int> match =
        detail::match_by_angle(near_f.detections, far_f.detections, gate_rad);
    for (std::size_t i = 0; i < near_f.detections.size(); ++i) {
      RadarDetection det = near_f.detections[i];  // theta/phi from nearer frame
      if (match[i] >= 0) {
        const RadarDetection& other = far_f.detections[static_cast<std::size_t>(match[i])];
        const RadarDetection& at_lo = lo_nearer ? det : other;
        const RadarDetection& at_hi = lo_nearer ? other : det;
        det.rho = at_lo.rho + w * (at_hi.rho - at_lo.rho);
        det.v = at_lo.v + w * (at_hi.v - at_lo.v);
      }
      aligned.detections.push_back(det);
    }
    out.push_back(std::move(aligned));
  }
  return out;
}

}  // namespace rvf
