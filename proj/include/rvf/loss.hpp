#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rvf/model.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

struct LevelTargets {
  int h = 0, w = 0;
  std::vector<int> cls;                    // 0 = background, else class_id + 1
  std::vector<std::array<double, 4>> reg;  // l, t, r, b distances, valid where pos
  std::vector<double> centerness;
  std::vector<std::uint8_t> pos;
};

struct TargetMap {
  std::array<LevelTargets, 5> levels;
  int n_pos = 0;
};

/// Per-location assignment: a location is positive iff it falls strictly
/// inside a box and the largest of its four distances lands in the level's
/// range. Ranges are the standard (0,64], (64,128], (128,256], (256,512],
/// (512,inf) ladder scaled by input_size/800. Overlaps resolve to the
/// smallest-area box (first listed on exact ties).
inline TargetMap assign_targets(const std::vector<GtBox>& gts,
                                const std::array<std::pair<int, int>, 5>& level_hw,
                                int input_size) {
  for (const GtBox& g : gts)
    if (!(g.x1 < g.x2 && g.y1 < g.y2))
      throw std::invalid_argument("assign_targets: degenerate ground-truth box");

  const double range_scale = input_size / 800.0;
  const double base_ranges[6] = {0, 64, 128, 256, 512, std::numeric_limits<double>::infinity()};

  TargetMap map;
  for (std::size_t li = 0; li < 5; ++li) {
    LevelTargets& lt = map.levels[li];
    lt.h = level_hw[li].first;
    lt.w = level_hw[li].second;
    const std::size_t n = static_cast<std::size_t>(lt.h) * lt.w;
    lt.cls.assign(n, 0);
    lt.reg.assign(n, {0, 0, 0, 0});
    lt.centerness.assign(n, 0.0);
    lt.pos.assign(n, 0);

    const double stride = ModelConfig::kStrides[li];
    const double lo = base_ranges[li] * range_scale;
    const double hi = std::isinf(base_ranges[li + 1])
                          ? base_ranges[li + 1]
                          : base_ranges[li + 1] * range_scale;
    std::size_t p = 0;
    for (int y = 0; y < lt.h; ++y)
      for (int x = 0; x < lt.w; ++x, ++p) {
        const double cx = stride * (x + 0.5);
        const double cy = stride * (y + 0.5);
        double best_area = std::numeric_limits<double>::infinity();
        for (const GtBox& g : gts) {
          const double l = cx - g.x1, t = cy - g.y1, r = g.x2 - cx, b = g.y2 - cy;
          if (l <= 0 || t <= 0 || r <= 0 || b <= 0) continue;
          const double maxd = std::max(std::max(l, t), std::max(r, b));
          if (maxd <= lo || maxd > hi) continue;
          const double area = (g.x2 - g.x1) * (g.y2 - g.y1);
          if (area >= best_area) continue;
          best_area = area;
          lt.cls[p] = g.class_id + 1;
          lt.reg[p] = {l, t, r, b};
          lt.centerness[p] = std::sqrt((std::min(l, r) / std::max(l, r)) *
                                       (std::min(t, b) / std::max(t, b)));
          lt.pos[p] = 1;
        }
        if (lt.pos[p]) ++map.n_pos;
      }
  }
  return map;
}

namespace detail {

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename S>
inline void check_level_shapes(const std::array<TensorT<S>, 5>& t,
                               const std::vector<TargetMap>& targets, const char* where) {
  const int batch = t[0].dim(0);
  if (static_cast<int>(targets.size()) != batch)
    throw std::invalid_argument(std::string(where) + ": " + std::to_string(targets.size()) +
                                " target maps for batch of " + std::to_string(batch));
  for (std::size_t li = 0; li < 5; ++li)
    for (const TargetMap& m : targets)
      if (m.levels[li].h != t[li].dim(2) || m.levels[li].w != t[li].dim(3))
        throw std::invalid_argument(std::string(where) +
                                    ": target map does not match level shape " +
                                    shape_str(t[li].shape()));
}

}  // namespace detail

/// Focal loss on sigmoid class probabilities, summed over every location and
/// class channel of all five levels, divided by max(N_pos, 1).
template <typename S>
inline TensorT<S> focal_loss(const std::array<TensorT<S>, 5>& cls_logits,
                             const std::vector<TargetMap>& targets, double alpha, double gamma,
                             int n_pos_total) {
  detail::check_level_shapes(cls_logits, targets, "focal_loss");
  const double denom = std::max(n_pos_total, 1);
  const int batch = cls_logits[0].dim(0);

  struct Entry {
    std::uint8_t level;
    std::uint8_t positive;
    std::size_t idx;
  };
  std::vector<Entry> entries;
  for (std::size_t li = 0; li < 5; ++li) {
    const auto& t = cls_logits[li];
    const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int n = 0; n < batch; ++n) {
      const LevelTargets& lt = targets[static_cast<std::size_t>(n)].levels[li];
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t base = (static_cast<std::size_t>(n) * c + ci) * plane;
        for (std::size_t p = 0; p < plane; ++p)
          entries.push_back({static_cast<std::uint8_t>(li),
                             static_cast<std::uint8_t>(lt.cls[p] == ci + 1 ? 1 : 0), base + p});
      }
    }
  }

  double total = 0.0;
  for (const Entry& e : entries) {
    const double x = static_cast<double>(cls_logits[e.level].value()[e.idx]);
    const double p = stable_sigmoid(x);
    // -log p = softplus(-x), -log(1-p) = softplus(x)
    if (e.positive)
      total += alpha * std::pow(1.0 - p, gamma) * detail::softplus(-x);
    else
      total += (1.0 - alpha) * std::pow(p, gamma) * detail::softplus(x);
  }

  std::vector<TensorT<S>> parents(cls_logits.begin(), cls_logits.end());
  auto result =
      TensorT<S>::make_node({1}, {static_cast<S>(total / denom)}, std::move(parents), nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    std::array<TensorNode<S>*, 5> nodes;
    for (std::size_t i = 0; i < 5; ++i) nodes[i] = cls_logits[i].node();
    rn->backward_fn = [rn, nodes, entries = std::move(entries), alpha, gamma, denom]() {
      const double g0 = static_cast<double>(rn->grad[0]) / denom;
      for (auto* n : nodes) n->ensure_grad();
      for (const Entry& e : entries) {
        const double x = static_cast<double>(nodes[e.level]->value[e.idx]);
        const double p = stable_sigmoid(x);
        double d;
        if (e.positive) {
          const double log_p = -detail::softplus(-x);
          d = alpha * std::pow(1.0 - p, gamma) * (gamma * p * log_p - (1.0 - p));
        } else {
          const double log_1mp = -detail::softplus(x);
          d = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_1mp);
        }
        nodes[e.level]->grad[e.idx] += static_cast<S>(g0 * d);
      }
    };
  }
  return result;
}

/// 1 - GIoU between predicted and target distance 4-tuples around the same
/// location, averaged over positives with centerness weights.
template <typename S>
inline TensorT<S> giou_loss(const std::array<TensorT<S>, 5>& reg_pred,
                            const std::vector<TargetMap>& targets) {
  detail::check_level_shapes(reg_pred, targets, "giou_loss");
  const int batch = reg_pred[0].dim(0);

  struct Entry {
    std::uint8_t level;
    std::size_t idx0;   // index of the l component; t/r/b follow at +plane steps
    std::size_t plane;
    double weight;
    std::array<double, 4> tg;
  };
  std::vector<Entry> entries;
  double weight_sum = 0.0;
  for (std::size_t li = 0; li < 5; ++li) {
    const auto& t = reg_pred[li];
    const int h = t.dim(2), w = t.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int n = 0; n < batch; ++n) {
      const LevelTargets& lt = targets[static_cast<std::size_t>(n)].levels[li];
      const std::size_t base = static_cast<std::size_t>(n) * 4 * plane;
      for (std::size_t p = 0; p < plane; ++p)
        if (lt.pos[p]) {
          entries.push_back({static_cast<std::uint8_t>(li), base + p, plane, lt.centerness[p],
                             lt.reg[p]});
          weight_sum += lt.centerness[p];
        }
    }
  }
  const double wnorm = std::max(weight_sum, 1e-12);

  struct GiouParts {
    double iw, ih, inter, uni, enc, cw, ch;
  };
  auto parts_of = [](const double* pr, const std::array<double, 4>& tg) {
    GiouParts g{};
    g.iw = std::min(pr[0], tg[0]) + std::min(pr[2], tg[2]);
    g.ih = std::min(pr[1], tg[1]) + std::min(pr[3], tg[3]);
    g.inter = g.iw * g.ih;
    const double ap = (pr[0] + pr[2]) * (pr[1] + pr[3]);
    const double ag = (tg[0] + tg[2]) * (tg[1] + tg[3]);
    g.uni = ap + ag - g.inter;
    g.cw = std::max(pr[0], tg[0]) + std::max(pr[2], tg[2]);
    g.ch = std::max(pr[1], tg[1]) + std::max(pr[3], tg[3]);
    g.enc = g.cw * g.ch;
    return g;
  };

  double total = 0.0;
  for (const Entry& e : entries) {
    double pr[4];
    for (std::size_t i = 0; i < 4; ++i)
      pr[i] = static_cast<double>(reg_pred[e.level].value()[e.idx0 + i * e.plane]);
    const GiouParts g = parts_of(pr, e.tg);
    const double giou = g.inter / g.uni - (g.enc - g.uni) / g.enc;
    total += e.weight * (1.0 - giou);
  }

  std::vector<TensorT<S>> parents(reg_pred.begin(), reg_pred.end());
  auto result =
      TensorT<S>::make_node({1}, {static_cast<S>(total / wnorm)}, std::move(parents), nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    std::array<TensorNode<S>*, 5> nodes;
    for (std::size_t i = 0; i < 5; ++i) nodes[i] = reg_pred[i].node();
    rn->backward_fn = [rn, nodes, entries = std::move(entries), parts_of, wnorm]() {
      const double g0 = static_cast<double>(rn->grad[0]) / wnorm;
      for (auto* n : nodes) n->ensure_grad();
      for (const Entry& e : entries) {
        double pr[4];
        for (std::size_t i = 0; i < 4; ++i)
          pr[i] = static_cast<double>(nodes[e.level]->value[e.idx0 + i * e.plane]);
        const GiouParts g = parts_of(pr, e.tg);
        const double u2 = g.uni * g.uni, c2 = g.enc * g.enc;
        // Components 0/2 (l, r) move the widths; 1/3 (t, b) the heights.
        for (std::size_t i = 0; i < 4; ++i) {
          const bool width = (i % 2 == 0);
          const double d_min = (pr[i] < e.tg[i]) ? 1.0 : 0.0;
          const double d_max = (pr[i] > e.tg[i]) ? 1.0 : 0.0;
          const double d_inter = width ? d_min * g.ih : d_min * g.iw;
          const double d_ap = width ? (pr[1] + pr[3]) : (pr[0] + pr[2]);
          const double d_uni = d_ap - d_inter;
          const double d_enc = width ? d_max * g.ch : d_max * g.cw;
          const double d_giou = (d_inter * g.uni - g.inter * d_uni) / u2 +
                                (d_uni * g.enc - g.uni * d_enc) / c2;
          nodes[e.level]->grad[e.idx0 + i * e.plane] += static_cast<S>(g0 * e.weight * -d_giou);
        }
      }
    };
  }
  return result;
}

/// Binary cross entropy between sigmoid(centerness logit) and the assigned
/// centerness target, over positives only, divided by max(N_pos, 1).
template <typename S>
inline TensorT<S> centerness_loss(const std::array<TensorT<S>, 5>& ctr_logits,
                                  const std::vector<TargetMap>& targets, int n_pos_total) {
  detail::check_level_shapes(ctr_logits, targets, "centerness_loss");
  const double denom = std::max(n_pos_total, 1);
  const int batch = ctr_logits[0].dim(0);

  struct Entry {
    std::uint8_t level;
    std::size_t idx;
    double target;
  };
  std::vector<Entry> entries;
  for (std::size_t li = 0; li < 5; ++li) {
    const auto& t = ctr_logits[li];
    const std::size_t plane = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
    for (int n = 0; n < batch; ++n) {
      const LevelTargets& lt = targets[static_cast<std::size_t>(n)].levels[li];
      const std::size_t base = static_cast<std::size_t>(n) * plane;
      for (std::size_t p = 0; p < plane; ++p)
        if (lt.pos[p]) entries.push_back({static_cast<std::uint8_t>(li), base + p, lt.centerness[p]});
    }
  }

  double total = 0.0;
  for (const Entry& e : entries) {
    const double x = static_cast<double>(ctr_logits[e.level].value()[e.idx]);
    total += detail::softplus(x) - e.target * x;
  }

  std::vector<TensorT<S>> parents(ctr_logits.begin(), ctr_logits.end());
  auto result =
      TensorT<S>::make_node({1}, {static_cast<S>(total / denom)}, std::move(parents), nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    std::array<TensorNode<S>*, 5> nodes;
    for (std::size_t i = 0; i < 5; ++i) nodes[i] = ctr_logits[i].node();
    rn->backward_fn = [rn, nodes, entries = std::move(entries), denom]() {
      const double g0 = static_cast<double>(rn->grad[0]) / denom;
      for (auto* n : nodes) n->ensure_grad();
      for (const Entry& e : entries) {
        const double x = static_cast<double>(nodes[e.level]->value[e.idx]);
        nodes[e.level]->grad[e.idx] += static_cast<S>(g0 * (stable_sigmoid(x) - e.target));
      }
    };
  }
  return result;
}

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double lambda_reg = 1.0;
  bool use_centerness = true;
};

template <typename S>
struct LossResult {
  TensorT<S> total;  // scalar, differentiable
  double cls = 0, reg = 0, centerness = 0;
  int n_pos = 0;
};

/// Composite detection loss: focal + lambda * centerness-weighted GIoU
/// (+ centerness BCE when enabled). Breakdown fields are the per-term
/// contributions exactly as summed into total.
template <typename S>
inline LossResult<S> total_loss(const HeadOutT<S>& head, const std::vector<TargetMap>& targets,
                                const LossConfig& cfg) {
  LossResult<S> out;
  for (const TargetMap& t : targets) out.n_pos += t.n_pos;

  TensorT<S> cls = focal_loss(head.cls, targets, cfg.focal_alpha, cfg.focal_gamma, out.n_pos);
  TensorT<S> reg = scale(giou_loss(head.reg, targets), static_cast<S>(cfg.lambda_reg));
  out.cls = static_cast<double>(cls.item());
  out.reg = static_cast<double>(reg.item());
  out.total = add(cls, reg);
  if (cfg.use_centerness) {
    TensorT<S> ctr = centerness_loss(head.ctr, targets, out.n_pos);
    out.centerness = static_cast<double>(ctr.item());
    out.total = add(out.total, ctr);
  }
  return out;
}

}  // namespace rvf
