#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rvf/detection.hpp"
#include "rvf/nn_ops.hpp"
#include "rvf/optim.hpp"
#include "rvf/rng.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

enum class FusionMode { kAdd, kMul, kCat, kSac };

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kAdd: return "add";
    case FusionMode::kMul: return "mul";
    case FusionMode::kCat: return "cat";
    case FusionMode::kSac: return "sac";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "add" || s == "ADD") return FusionMode::kAdd;
  if (s == "mul" || s == "MUL") return FusionMode::kMul;
  if (s == "cat" || s == "CAT") return FusionMode::kCat;
  if (s == "sac" || s == "SAC") return FusionMode::kSac;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected add|mul|cat|sac)");
}

struct ModelConfig {
  int input_size = 128;       // square input edge; full-scale reference uses 800
  double width_mult = 0.125;  // 1.0 = reference widths 64/256/512/1024/2048
  FusionMode fusion = FusionMode::kSac;
  std::vector<int> sac_kernels{1, 3, 5};  // odd kernel sizes for attention convs
  int head_tower_depth = 2;               // full-scale reference uses 4
  int num_classes = 1;
  std::vector<int> stage_blocks{2, 2, 2};  // residual blocks per backbone stage
  bool bottleneck = false;                 // use 3-conv bottleneck blocks

  static constexpr std::array<int, 5> kStrides{8, 16, 32, 64, 128};

  void validate() const {
    if (input_size < 32 || input_size % 4 != 0)
      throw std::invalid_argument("ModelConfig: input_size must be >= 32 and divisible by 4");
    if (width_mult <= 0) throw std::invalid_argument("ModelConfig: width_mult must be positive");
    if (fusion == FusionMode::kSac) {
      if (sac_kernels.empty())
        throw std::invalid_argument("ModelConfig: sac fusion needs at least one kernel size");
      for (int k : sac_kernels)
        if (k < 1 || k % 2 == 0 || k > 9)
          throw std::invalid_argument("ModelConfig: sac kernel sizes must be odd, in [1,9]");
    }
    if (head_tower_depth < 0 || num_classes < 1)
      throw std::invalid_argument("ModelConfig: bad head_tower_depth or num_classes");
    if (stage_blocks.size() != 3)
      throw std::invalid_argument("ModelConfig: stage_blocks must list 3 stage depths");
    for (int b : stage_blocks)
      if (b < 1) throw std::invalid_argument("ModelConfig: stage depths must be >= 1");
  }

  int ch(int base) const { return std::max(1, static_cast<int>(std::lround(base * width_mult))); }
  int stem_ch() const { return ch(64); }
  int stage1_ch() const { return ch(256); }
  int c3_ch() const { return ch(512); }
  int c4_ch() const { return ch(1024); }
  int c5_ch() const { return ch(2048); }
  int pyr_ch() const { return ch(256); }
};

template <typename S>
struct HeadOutT {
  std::array<TensorT<S>, 5> cls;  // per level: (N, C, h, w) logits
  std::array<TensorT<S>, 5> reg;  // per level: (N, 4, h, w) distances l,t,r,b (post-exp, > 0)
  std::array<TensorT<S>, 5> ctr;  // per level: (N, 1, h, w) logits
};

/// Radar-vision fusion detector: two stems + stage-1 residual branches,
/// one of four fusion rules, three more residual stages, a top-down plus
/// bottom-up feature pyramid (five levels, strides 8..128), and an
/// anchor-free head predicting class logits, box distances, and centerness.
template <typename S>
class ModelT {
 public:
  using T = TensorT<S>;

  struct Conv {
    T w, b;
    int stride = 1, pad = 0;
  };
  struct Affine {
    T gamma, beta;
  };
  struct Block {
    bool bottleneck = false;
    Conv c1, c2, c3;
    Affine a1, a2, a3;
    bool has_proj = false;
    Conv proj;
    Affine aproj;
  };

  ModelConfig cfg;

  ModelT(const ModelConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    const int stem = cfg.stem_ch(), s1 = cfg.stage1_ch();
    const int c3 = cfg.c3_ch(), c4 = cfg.c4_ch(), c5 = cfg.c5_ch(), pyr = cfg.pyr_ch();

    vision_stem_ = make_conv("vision.stem.conv", 3, stem, 7, 2, 3, rng);
    vision_stem_affine_ = make_affine("vision.stem.affine", stem);
    for (int i = 0; i < 3; ++i)
      vision_blocks_.push_back(make_block("vision.block" + std::to_string(i),
                                          i == 0 ? stem : s1, s1, 1, rng));
    radar_stem_ = make_conv("radar.stem.conv", 3, stem, 7, 2, 3, rng);
    radar_stem_affine_ = make_affine("radar.stem.affine", stem);
    radar_blocks_.push_back(make_block("radar.block0", stem, s1, 1, rng));

    if (cfg.fusion == FusionMode::kSac)
      for (std::size_t i = 0; i < cfg.sac_kernels.size(); ++i) {
        const int k = cfg.sac_kernels[i];
        sac_attn_.push_back(
            make_conv("fuse.attn" + std::to_string(i), s1, 1, k, 1, k / 2, rng));
      }
    if (cfg.fusion == FusionMode::kCat || cfg.fusion == FusionMode::kSac)
      fuse_reduce_ = make_conv("fuse.reduce", 2 * s1, s1, 1, 1, 0, rng);

    const int stage_in[3] = {s1, c3, c4};
    const int stage_out[3] = {c3, c4, c5};
    for (int si = 0; si < 3; ++si) {
      std::vector<Block> blocks;
      for (int bi = 0; bi < cfg.stage_blocks[static_cast<std::size_t>(si)]; ++bi)
        blocks.push_back(make_block(
            "stage" + std::to_string(si + 3) + ".block" + std::to_string(bi),
            bi == 0 ? stage_in[si] : stage_out[si], stage_out[si], bi == 0 ? 2 : 1, rng));
      stages_.push_back(std::move(blocks));
    }

    const int lat_in[3] = {c3, c4, c5};
    for (int i = 0; i < 3; ++i) {
      lateral_[static_cast<std::size_t>(i)] =
          make_conv("pyramid.lateral" + std::to_string(i + 3), lat_in[i], pyr, 1, 1, 0, rng);
      smooth_[static_cast<std::size_t>(i)] =
          make_conv("pyramid.smooth" + std::to_string(i + 3), pyr, pyr, 3, 1, 1, rng);
    }
    down_[0] = make_conv("pyramid.down3", pyr, pyr, 3, 2, 1, rng);
    down_[1] = make_conv("pyramid.down4", pyr, pyr, 3, 2, 1, rng);
    out_[0] = make_conv("pyramid.out4", pyr, pyr, 3, 1, 1, rng);
    out_[1] = make_conv("pyramid.out5", pyr, pyr, 3, 1, 1, rng);
    n6_conv_ = make_conv("pyramid.n6", pyr, pyr, 3, 2, 1, rng);
    n7_conv_ = make_conv("pyramid.n7", pyr, pyr, 3, 2, 1, rng);

    for (int d = 0; d < cfg.head_tower_depth; ++d) {
      cls_tower_.push_back(make_conv("head.cls_tower" + std::to_string(d), pyr, pyr, 3, 1, 1, rng));
      reg_tower_.push_back(make_conv("head.reg_tower" + std::to_string(d), pyr, pyr, 3, 1, 1, rng));
    }
    cls_head_ = make_conv("head.cls", pyr, cfg.num_classes, 3, 1, 1, rng);
    reg_head_ = make_conv("head.reg", pyr, 4, 3, 1, 1, rng);
    ctr_head_ = make_conv("head.ctr", pyr, 1, 3, 1, 1, rng);
    for (int i = 0; i < 5; ++i) {
      T s = T::param({1}, {S(1)}, "head.scale" + std::to_string(i));
      scales_[static_cast<std::size_t>(i)] = s;
      register_param(s);
    }
  }

  std::vector<T>& parameters() { return params_; }
  const std::vector<std::pair<std::string, T>>& named_parameters() const { return named_; }

  std::size_t count_parameters(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_)
      if (name.rfind(prefix, 0) == 0) n += t.numel();
    return n;
  }

  /// Stem + three stage-1 residual blocks: stride 4, stage1 channels.
  T preprocess_vision(const T& img) {
    check_input(img, "preprocess_vision");
    T x = stem_fwd(vision_stem_, vision_stem_affine_, img);
    for (const Block& b : vision_blocks_) x = block_fwd(b, x);
    return x;
  }

  /// Stem + a single stage-1 residual block; same output shape as vision.
  T preprocess_radar(const T& img) {
    check_input(img, "preprocess_radar");
    T x = stem_fwd(radar_stem_, radar_stem_affine_, img);
    for (const Block& b : radar_blocks_) x = block_fwd(b, x);
    return x;
  }

  /// Combine the branch outputs. All modes emit stage1 channels.
  T fuse(const T& v, const T& r) {
    if (v.shape() != r.shape())
      throw std::invalid_argument("fuse: branch shapes differ, " + shape_str(v.shape()) + " vs " +
                                  shape_str(r.shape()));
    switch (cfg.fusion) {
      case FusionMode::kAdd: return add(v, r);
      case FusionMode::kMul: return mul(v, r);
      case FusionMode::kCat: return conv_fwd(fuse_reduce_, concat_channels<S>({v, r}));
      case FusionMode::kSac: {
        T a = conv_fwd(sac_attn_[0], r);
        for (std::size_t i = 1; i < sac_attn_.size(); ++i)
          a = add(a, conv_fwd(sac_attn_[i], r));
        a = sigmoid(a);  // (N,1,h,w), broadcast over channels
        T enhanced = mul(a, v);
        return conv_fwd(fuse_reduce_, concat_channels<S>({enhanced, r}));
      }
    }
    throw std::logic_error("fuse: unreachable");
  }

  /// Three stride-2 residual stages after fusion: strides 8, 16, 32.
  std::array<T, 3> backbone_stages(const T& fused) {
    std::array<T, 3> out;
    T x = fused;
    for (int si = 0; si < 3; ++si) {
      for (const Block& b : stages_[static_cast<std::size_t>(si)]) x = block_fwd(b, x);
      out[static_cast<std::size_t>(si)] = x;
    }
    return out;
  }

  /// Top-down merge then bottom-up re-aggregation; two extra stride-2 convs
  /// extend the pyramid to strides 64 and 128.
  std::array<T, 5> path_aggregate(const T& c3, const T& c4, const T& c5) {
    T p5 = conv_fwd(lateral_[2], c5);
    T p4 = add(conv_fwd(lateral_[1], c4), upsample_nearest(p5, c4.dim(2), c4.dim(3)));
    T p3 = add(conv_fwd(lateral_[0], c3), upsample_nearest(p4, c3.dim(2), c3.dim(3)));
    p3 = conv_fwd(smooth_[0], p3);
    p4 = conv_fwd(smooth_[1], p4);
    p5 = conv_fwd(smooth_[2], p5);

    std::array<T, 5> n;
    n[0] = p3;
    n[1] = conv_fwd(out_[0], add(conv_fwd(down_[0], n[0]), p4));
    n[2] = conv_fwd(out_[1], add(conv_fwd(down_[1], n[1]), p5));
    n[3] = conv_fwd(n6_conv_, n[2]);
    n[4] = conv_fwd(n7_conv_, relu(n[3]));
    return n;
  }

  /// Shared-weight towers across all levels; regression passes through
  /// exp(scale_i * x) with a learnable per-level scalar, so distances stay
  /// positive; centerness hangs off the regression tower.
  HeadOutT<S> head_forward(const std::array<T, 5>& pyr) {
    HeadOutT<S> out;
    for (std::size_t i = 0; i < 5; ++i) {
      T ct = pyr[i];
      for (const Conv& c : cls_tower_) ct = relu(conv_fwd(c, ct));
      T rt = pyr[i];
      for (const Conv& c : reg_tower_) rt = relu(conv_fwd(c, rt));
      out.cls[i] = conv_fwd(cls_head_, ct);
      out.reg[i] = exp(mul(conv_fwd(reg_head_, rt), scales_[i]));
      out.ctr[i] = conv_fwd(ctr_head_, rt);
    }
    return out;
  }

  /// Full forward pass. zero_radar_branch substitutes zeros for the radar
  /// branch output (used by the radar-ablation harness).
  HeadOutT<S> forward(const T& vision_img, const T& radar_img, bool zero_radar_branch = false) {
    T v = preprocess_vision(vision_img);
    T r = preprocess_radar(radar_img);
    if (zero_radar_branch) r = T::zeros(r.shape());
    T fused = fuse(v, r);
    auto c = backbone_stages(fused);
    auto pyr = path_aggregate(c[0], c[1], c[2]);
    return head_forward(pyr);
  }

 private:
  void check_input(const T& img, const char* where) const {
    if (img.rank() != 4 || img.dim(1) != 3 || img.dim(2) != cfg.input_size ||
        img.dim(3) != cfg.input_size)
      throw std::invalid_argument(std::string(where) + ": expected (N,3," +
                                  std::to_string(cfg.input_size) + "," +
                                  std::to_string(cfg.input_size) + "), got " +
                                  shape_str(img.shape()));
  }

  void register_param(const T& t) {
    params_.push_back(t);
    named_.emplace_back(t.name(), t);
  }

  Conv make_conv(const std::string& name, int cin, int cout, int k, int stride, int pad,
                 Rng& rng) {
    Conv c;
    c.w = msra_init<S>({cout, cin, k, k}, cin * k * k, rng, name + ".w");
    c.b = T::param({cout}, std::vector<S>(static_cast<std::size_t>(cout), S(0)), name + ".b");
    c.stride = stride;
    c.pad = pad;
    register_param(c.w);
    register_param(c.b);
    return c;
  }

  Affine make_affine(const std::string& name, int channels) {
    Affine a;
    a.gamma = T::param({channels}, std::vector<S>(static_cast<std::size_t>(channels), S(1)),
                       name + ".gamma");
    a.beta = T::param({channels}, std::vector<S>(static_cast<std::size_t>(channels), S(0)),
                      name + ".beta");
    register_param(a.gamma);
    register_param(a.beta);
    return a;
  }

  Block make_block(const std::string& name, int cin, int cout, int stride, Rng& rng) {
    Block b;
    b.bottleneck = cfg.bottleneck;
    if (b.bottleneck) {
      const int mid = std::max(1, cout / 4);
      b.c1 = make_conv(name + ".conv1", cin, mid, 1, 1, 0, rng);
      b.a1 = make_affine(name + ".affine1", mid);
      b.c2 = make_conv(name + ".conv2", mid, mid, 3, stride, 1, rng);
      b.a2 = make_affine(name + ".affine2", mid);
      b.c3 = make_conv(name + ".conv3", mid, cout, 1, 1, 0, rng);
      b.a3 = make_affine(name + ".affine3", cout);
    } else {
      b.c1 = make_conv(name + ".conv1", cin, cout, 3, stride, 1, rng);
      b.a1 = make_affine(name + ".affine1", cout);
      b.c2 = make_conv(name + ".conv2", cout, cout, 3, 1, 1, rng);
      b.a2 = make_affine(name + ".affine2", cout);
    }
    if (cin != cout || stride != 1) {
      b.has_proj = true;
      b.proj = make_conv(name + ".proj", cin, cout, 1, stride, 0, rng);
      b.aproj = make_affine(name + ".proj_affine", cout);
    }
    return b;
  }

  T conv_fwd(const Conv& c, const T& x) { return conv2d(x, c.w, c.b, c.stride, c.pad); }
  T affine_fwd(const Affine& a, const T& x) { return channel_affine(x, a.gamma, a.beta); }

  T stem_fwd(const Conv& stem, const Affine& affine, const T& img) {
    T x = relu(affine_fwd(affine, conv_fwd(stem, img)));
    return max_pool(x, 3, 2, 1);
  }

  T block_fwd(const Block& b, const T& x) {
    T main;
    if (b.bottleneck) {
      main = relu(affine_fwd(b.a1, conv_fwd(b.c1, x)));
      main = relu(affine_fwd(b.a2, conv_fwd(b.c2, main)));
      main = affine_fwd(b.a3, conv_fwd(b.c3, main));
    } else {
      main = relu(affine_fwd(b.a1, conv_fwd(b.c1, x)));
      main = affine_fwd(b.a2, conv_fwd(b.c2, main));
    }
    T skip = b.has_proj ? affine_fwd(b.aproj, conv_fwd(b.proj, x)) : x;
    return relu(add(main, skip));
  }

  Conv vision_stem_, radar_stem_;
  Affine vision_stem_affine_, radar_stem_affine_;
  std::vector<Block> vision_blocks_, radar_blocks_;
  std::vector<Conv> sac_attn_;
  Conv fuse_reduce_;
  std::vector<std::vector<Block>> stages_;
  std::array<Conv, 3> lateral_, smooth_;
  std::array<Conv, 2> down_, out_;
  Conv n6_conv_, n7_conv_;
  std::vector<Conv> cls_tower_, reg_tower_;
  Conv cls_head_, reg_head_, ctr_head_;
  std::array<T, 5> scales_;

  std::vector<T> params_;
  std::vector<std::pair<std::string, T>> named_;
};

using Model = ModelT<double>;
using HeadOut = HeadOutT<double>;

/// Greedy decode of the head output for one image in the batch: per-location
/// boxes from the distance regression, combined score sqrt(cls_p * ctr_p),
/// score threshold, per-class NMS, global top-k, clip to frame.
template <typename S>
inline std::vector<DetectionBox> decode_detections(const HeadOutT<S>& head,
                                                   const ModelConfig& cfg, double score_thresh,
                                                   double nms_iou, int max_dets = 100,
                                                   int image_index = 0) {
  struct Cand {
    DetectionBox box;
    std::size_t order;
  };
  std::vector<Cand> cands;
  const double frame = cfg.input_size;
  std::size_t order = 0;
  for (std::size_t li = 0; li < 5; ++li) {
    const auto& cls = head.cls[li];
    const auto& reg = head.reg[li];
    const auto& ctr = head.ctr[li];
    const int c = cls.dim(1), h = cls.dim(2), w = cls.dim(3);
    const double stride = ModelConfig::kStrides[li];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t cls_base = static_cast<std::size_t>(image_index) * c * plane;
    const std::size_t reg_base = static_cast<std::size_t>(image_index) * 4 * plane;
    const std::size_t ctr_base = static_cast<std::size_t>(image_index) * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const double ctr_p = stable_sigmoid(static_cast<double>(ctr.value()[ctr_base + p]));
        const double cx = stride * (x + 0.5);
        const double cy = stride * (y + 0.5);
        const double l = static_cast<double>(reg.value()[reg_base + 0 * plane + p]);
        const double t = static_cast<double>(reg.value()[reg_base + 1 * plane + p]);
        const double r = static_cast<double>(reg.value()[reg_base + 2 * plane + p]);
        const double b = static_cast<double>(reg.value()[reg_base + 3 * plane + p]);
        for (int ci = 0; ci < c; ++ci, ++order) {
          const double cls_p =
              stable_sigmoid(static_cast<double>(cls.value()[cls_base + ci * plane + p]));
          const double score = std::sqrt(cls_p * ctr_p);
          if (score < score_thresh) continue;
          DetectionBox box;
          box.x1 = std::clamp(cx - l, 0.0, frame);
          box.y1 = std::clamp(cy - t, 0.0, frame);
          box.x2 = std::clamp(cx + r, 0.0, frame);
          box.y2 = std::clamp(cy + b, 0.0, frame);
          box.score = score;
          box.class_id = ci;
          if (box.x1 >= box.x2 || box.y1 >= box.y2) continue;
          cands.push_back({box, order});
        }
      }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.box.score != b.box.score) return a.box.score > b.box.score;
    return a.order < b.order;
  });

  std::vector<DetectionBox> kept;
  for (const Cand& cand : cands) {
    bool suppressed = false;
    for (const DetectionBox& k : kept) {
      if (k.class_id != cand.box.class_id) continue;
      if (box_iou(k, cand.box) > nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(cand.box);
      if (static_cast<int>(kept.size()) >= max_dets) break;
    }
  }
  return kept;
}

}  // namespace rvf
