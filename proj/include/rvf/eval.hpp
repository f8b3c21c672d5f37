#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "rvf/detection.hpp"

namespace rvf {

/// Detections and ground truth for one image; image identity is the index in
/// the surrounding vector.
struct ImageEval {
  std::vector<DetectionBox> dets;
  std::vector<GtBox> gts;
};

/// All values are percentages in [0,100]; a bucket with no ground truth is
/// reported as the sentinel -1 and excluded from nothing else.
struct MetricReport {
  double ap = -1, ap50 = -1, ap75 = -1;
  double ap_small = -1, ap_medium = -1, ap_large = -1;
  double ar1 = -1, ar10 = -1, ar100 = -1;
  double ar_small = -1, ar_medium = -1, ar_large = -1;
};

struct MatchResult {
  std::vector<int> matched_gt;   // per det: matched gt index or -1
  std::vector<std::uint8_t> tp;  // per det: 1 if matched
};

/// One-to-one greedy matching in the order the detections are given (callers
/// sort by descending score first). Each detection takes the unmatched ground
/// truth with the highest IoU at or above the threshold; ties keep the first.
inline MatchResult match_greedy(const std::vector<DetectionBox>& dets,
                                const std::vector<GtBox>& gts, double iou_thresh) {
  MatchResult res;
  res.matched_gt.assign(dets.size(), -1);
  res.tp.assign(dets.size(), 0);
  std::vector<std::uint8_t> taken(gts.size(), 0);
  for (std::size_t di = 0; di < dets.size(); ++di) {
    double best_iou = iou_thresh;
    int best = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi] || gts[gi].class_id != dets[di].class_id) continue;
      const double v = box_iou(dets[di].x1, dets[di].y1, dets[di].x2, dets[di].y2, gts[gi].x1,
                               gts[gi].y1, gts[gi].x2, gts[gi].y2);
      if (v > best_iou || (best < 0 && v >= best_iou)) {
        best_iou = v;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = 1;
      res.matched_gt[di] = best;
      res.tp[di] = 1;
    }
  }
  return res;
}

namespace detail {

constexpr int kNumThresh = 10;  // 0.50 : 0.05 : 0.95

inline double iou_threshold(int t) { return 0.5 + 0.05 * t; }

struct AreaBucket {
  double lo, hi;
};
// all, small, medium, large
inline const std::array<AreaBucket, 4>& area_buckets() {
  static const std::array<AreaBucket, 4> b = {{{0.0, 1e18},
                                               {0.0, 32.0 * 32.0},
                                               {32.0 * 32.0, 96.0 * 96.0},
                                               {96.0 * 96.0, 1e18}}};
  return b;
}

/// Matching outcome for one (image, category, bucket): detections sorted by
/// score (top-100), with per-threshold true-positive and ignore flags.
struct ImgCatEval {
  std::vector<double> scores;
  std::vector<std::array<std::uint8_t, kNumThresh>> tp;
  std::vector<std::array<std::uint8_t, kNumThresh>> ignore;
  long npig = 0;  // ground truths counted by this bucket
};

inline double gt_area(const GtBox& g) { return (g.x2 - g.x1) * (g.y2 - g.y1); }
inline double det_area(const DetectionBox& d) { return (d.x2 - d.x1) * (d.y2 - d.y1); }

inline ImgCatEval evaluate_image(const std::vector<DetectionBox>& all_dets,
                                 const std::vector<GtBox>& all_gts, int category,
                                 const AreaBucket& bucket, int hard_cap) {
  // Category slice; ground truths outside the bucket become "ignored": they
  // can absorb a detection without making it a TP or an FP.
  std::vector<const GtBox*> gts;
  std::vector<std::uint8_t> gt_ignored;
  for (const GtBox& g : all_gts)
    if (g.class_id == category) {
      gts.push_back(&g);
      gt_ignored.push_back(gt_area(g) < bucket.lo || gt_area(g) >= bucket.hi ? 1 : 0);
    }
  // Unignored first, stable.
  std::vector<std::size_t> gt_order(gts.size());
  std::iota(gt_order.begin(), gt_order.end(), 0);
  std::stable_sort(gt_order.begin(), gt_order.end(),
                   [&](std::size_t a, std::size_t b) { return gt_ignored[a] < gt_ignored[b]; });

  std::vector<const DetectionBox*> dets;
  for (const DetectionBox& d : all_dets)
    if (d.class_id == category) dets.push_back(&d);
  std::stable_sort(dets.begin(), dets.end(),
                   [](const DetectionBox* a, const DetectionBox* b) { return a->score > b->score; });
  if (static_cast<int>(dets.size()) > hard_cap) dets.resize(static_cast<std::size_t>(hard_cap));

  ImgCatEval out;
  for (std::size_t gi = 0; gi < gts.size(); ++gi)
    if (!gt_ignored[gi]) ++out.npig;
  out.scores.resize(dets.size());
  out.tp.assign(dets.size(), {});
  out.ignore.assign(dets.size(), {});
  for (std::size_t di = 0; di < dets.size(); ++di) out.scores[di] = dets[di]->score;

  for (int t = 0; t < kNumThresh; ++t) {
    const double thresh = iou_threshold(t);
    std::vector<std::uint8_t> taken(gts.size(), 0);
    for (std::size_t di = 0; di < dets.size(); ++di) {
      double best_iou = thresh;
      int best = -1;
      for (std::size_t oi = 0; oi < gt_order.size(); ++oi) {
        const std::size_t gi = gt_order[oi];
        if (taken[gi]) continue;
        // Once a real match is in hand, ignored ground truths cannot improve it.
        if (best >= 0 && !gt_ignored[static_cast<std::size_t>(best)] && gt_ignored[gi]) break;
        const double v =
            box_iou(dets[di]->x1, dets[di]->y1, dets[di]->x2, dets[di]->y2, gts[gi]->x1,
                    gts[gi]->y1, gts[gi]->x2, gts[gi]->y2);
        if (v > best_iou || (best < 0 && v >= best_iou)) {
          best_iou = v;
          best = static_cast<int>(gi);
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = 1;
        if (gt_ignored[static_cast<std::size_t>(best)])
          out.ignore[di][static_cast<std::size_t>(t)] = 1;
        else
          out.tp[di][static_cast<std::size_t>(t)] = 1;
      } else {
        const double a = det_area(*dets[di]);
        if (a < bucket.lo || a >= bucket.hi) out.ignore[di][static_cast<std::size_t>(t)] = 1;
      }
    }
  }
  return out;
}

/// 101-point interpolated average precision for one (category, bucket,
/// threshold, max-detections) slice; -1 when the bucket holds no ground truth.
inline double ap_101(const std::vector<ImgCatEval>& images, int t, int max_dets) {
  struct Rec {
    double score;
    std::uint8_t tp, ig;
    std::size_t order;
  };
  std::vector<Rec> recs;
  long npig = 0;
  for (const ImgCatEval& img : images) {
    npig += img.npig;
    const std::size_t k = std::min<std::size_t>(img.scores.size(),
                                                static_cast<std::size_t>(max_dets));
    for (std::size_t i = 0; i < k; ++i)
      recs.push_back({img.scores[i], img.tp[i][static_cast<std::size_t>(t)],
                      img.ignore[i][static_cast<std::size_t>(t)], recs.size()});
  }
  if (npig == 0) return -1.0;
  std::sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.order < b.order;
  });

  std::vector<double> precision, recall;
  long tp = 0, fp = 0;
  for (const Rec& r : recs) {
    if (r.ig) continue;
    if (r.tp)
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / npig);
  }
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double total = 0.0;
  for (int j = 0; j <= 100; ++j) {
    const double r = j / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end())
      total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

/// Best recall achieved with at most max_dets detections per image, at one
/// threshold; -1 when the bucket holds no ground truth.
inline double recall_at(const std::vector<ImgCatEval>& images, int t, int max_dets) {
  long npig = 0, tp = 0;
  for (const ImgCatEval& img : images) {
    npig += img.npig;
    const std::size_t k = std::min<std::size_t>(img.scores.size(),
                                                static_cast<std::size_t>(max_dets));
    for (std::size_t i = 0; i < k; ++i)
      if (img.tp[i][static_cast<std::size_t>(t)]) ++tp;
  }
  if (npig == 0) return -1.0;
  return static_cast<double>(tp) / npig;
}

/// Mean over IoU thresholds [t_lo, t_hi] and categories with ground truth.
template <typename PerThresh>
inline double mean_metric(const std::map<int, std::vector<ImgCatEval>>& by_cat, int t_lo,
                          int t_hi, PerThresh&& per_thresh) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [cat, images] : by_cat) {
    double cat_sum = 0.0;
    int cat_n = 0;
    for (int t = t_lo; t <= t_hi; ++t) {
      const double v = per_thresh(images, t);
      if (v >= 0) {
        cat_sum += v;
        ++cat_n;
      }
    }
    if (cat_n > 0) {
      sum += cat_sum / cat_n;
      ++n;
    }
  }
  return n > 0 ? 100.0 * sum / n : -1.0;
}

}  // namespace detail

/// COCO-convention detection metrics: 101-point interpolated AP averaged over
/// IoU thresholds 0.50:0.05:0.95, size buckets split at 32^2 and 96^2 pixels
/// of ground-truth area, AR as best recall under a per-image detection cap.
inline MetricReport compute_metrics(const std::vector<ImageEval>& images, int max_dets = 100) {
  // Category universe = everything present in either dets or gts.
  std::vector<int> cats;
  for (const ImageEval& img : images) {
    for (const auto& d : img.dets) cats.push_back(d.class_id);
    for (const auto& g : img.gts) cats.push_back(g.class_id);
  }
  std::sort(cats.begin(), cats.end());
  cats.erase(std::unique(cats.begin(), cats.end()), cats.end());

  // by_bucket[b] -> category -> per-image evaluations
  std::array<std::map<int, std::vector<detail::ImgCatEval>>, 4> by_bucket;
  for (std::size_t b = 0; b < 4; ++b)
    for (int cat : cats) {
      auto& v = by_bucket[b][cat];
      v.reserve(images.size());
      for (const ImageEval& img : images)
        v.push_back(detail::evaluate_image(img.dets, img.gts, cat, detail::area_buckets()[b],
                                           max_dets));
    }

  auto ap_fn = [&](int max_k) {
    return [max_k](const std::vector<detail::ImgCatEval>& imgs, int t) {
      return detail::ap_101(imgs, t, max_k);
    };
  };
  auto ar_fn = [&](int max_k) {
    return [max_k](const std::vector<detail::ImgCatEval>& imgs, int t) {
      return detail::recall_at(imgs, t, max_k);
    };
  };

  MetricReport r;
  const int T = detail::kNumThresh - 1;
  r.ap = detail::mean_metric(by_bucket[0], 0, T, ap_fn(max_dets));
  r.ap50 = detail::mean_metric(by_bucket[0], 0, 0, ap_fn(max_dets));
  r.ap75 = detail::mean_metric(by_bucket[0], 5, 5, ap_fn(max_dets));
  r.ap_small = detail::mean_metric(by_bucket[1], 0, T, ap_fn(max_dets));
  r.ap_medium = detail::mean_metric(by_bucket[2], 0, T, ap_fn(max_dets));
  r.ap_large = detail::mean_metric(by_bucket[3], 0, T, ap_fn(max_dets));
  r.ar1 = detail::mean_metric(by_bucket[0], 0, T, ar_fn(1));
  r.ar10 = detail::mean_metric(by_bucket[0], 0, T, ar_fn(std::min(10, max_dets)));
  r.ar100 = detail::mean_metric(by_bucket[0], 0, T, ar_fn(max_dets));
  r.ar_small = detail::mean_metric(by_bucket[1], 0, T, ar_fn(max_dets));
  r.ar_medium = detail::mean_metric(by_bucket[2], 0, T, ar_fn(max_dets));
  r.ar_large = detail::mean_metric(by_bucket[3], 0, T, ar_fn(max_dets));
  return r;
}

/// Aligned two-row table in the usual benchmark layout.
inline std::string format_metric_table(const MetricReport& r) {
  auto cell = [](double v) {
    char buf[16];
    if (v < 0)
      std::snprintf(buf, sizeof(buf), "%7s", "-1");
    else
      std::snprintf(buf, sizeof(buf), "%7.1f", v);
    return std::string(buf);
  };
  auto head = [](const char* s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%7s", s);
    return std::string(buf);
  };
  std::string out;
  out += "  " + head("AP") + head("AP50") + head("AP75") + head("APs") + head("APm") +
         head("APl") + "\n";
  out += "  " + cell(r.ap) + cell(r.ap50) + cell(r.ap75) + cell(r.ap_small) + cell(r.ap_medium) +
         cell(r.ap_large) + "\n";
  out += "  " + head("AR1") + head("AR10") + head("AR100") + head("ARs") + head("ARm") +
         head("ARl") + "\n";
  out += "  " + cell(r.ar1) + cell(r.ar10) + cell(r.ar100) + cell(r.ar_small) +
         cell(r.ar_medium) + cell(r.ar_large) + "\n";
  return out;
}

}  // namespace rvf
