#pragma once

#include <algorithm>

namespace rvf {

struct DetectionBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixels, x1 < x2 and y1 < y2
  double score = 0;                       // [0,1]
  int class_id = 0;
};

/// Ground-truth box in network-input pixel coordinates. class_id is 0-based
/// (same convention as DetectionBox).
struct GtBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int class_id = 0;
};

/// Intersection-over-union of two corner-form boxes. Degenerate boxes give 0.
inline double box_iou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                      double bx2, double by2) {
  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  const double area_b = (bx2 - bx1) * (by2 - by1);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double box_iou(const DetectionBox& a, const DetectionBox& b) {
  return box_iou(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2);
}

}  // namespace rvf
