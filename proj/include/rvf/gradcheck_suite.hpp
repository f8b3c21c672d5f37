#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rvf/gradcheck.hpp"
#include "rvf/loss.hpp"
#include "rvf/model.hpp"
#include "rvf/nn_ops.hpp"
#include "rvf/rng.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

struct SuiteCheck {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  std::size_t coords = 0;
  bool pass = false;
};

constexpr double kOpGradTol = 1e-6;
constexpr double kModelGradTol = 1e-4;

namespace detail {

inline Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo, double hi,
                          const std::string& name) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor::param(std::move(shape), std::move(data), name);
}

/// Scalarize y as sum(c * y) with a cotangent c that depends only on the
/// seed and y's shape, so repeated calls inside grad_check see the same
/// function.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = r.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

inline SuiteCheck run_one(const std::string& name, double tol, GradCheckResult res) {
  SuiteCheck c;
  c.name = name;
  c.max_rel_err = res.max_rel_err;
  c.tol = tol;
  c.coords = res.coords_checked;
  c.pass = res.max_rel_err <= tol;
  return c;
}

/// Target map over tiny level grids, produced by the real assignment rule.
/// The boxes are sized for the 32-px-scaled range ladder so that levels 0, 1,
/// and 2 each pick up one positive location.
inline TargetMap suite_targets() {
  const std::array<std::pair<int, int>, 5> hw = {
      std::pair<int, int>{4, 4}, {2, 2}, {1, 1}, {1, 1}, {1, 1}};
  std::vector<GtBox> gts;
  gts.push_back({2.0, 2.5, 6.5, 6.0, 0});
  gts.push_back({4.0, 5.0, 12.5, 12.0, 0});
  gts.push_back({9.0, 8.0, 25.0, 24.5, 0});
  TargetMap tm = assign_targets(gts, hw, 32);
  if (tm.n_pos != 3) throw std::logic_error("suite_targets: expected positives");
  return tm;
}

}  // namespace detail

/// Central-difference checks for every differentiable op, each on small
/// random tensors. relu is checked away from its kink.
inline std::vector<SuiteCheck> run_op_gradchecks(std::uint64_t seed = 7) {
  using detail::rand_tensor;
  using detail::run_one;
  using detail::weighted_sum;
  std::vector<SuiteCheck> out;
  Rng rng(seed);
  const double h = 1e-5;
  std::uint64_t cot = 1000;  // per-check cotangent seed

  auto check = [&](const std::string& name, Tensor x, auto&& f,
                   const std::function<bool(std::size_t)>& exclude = nullptr) {
    out.push_back(run_one(name, kOpGradTol, grad_check(f, std::move(x), h, exclude)));
  };

  {
    Tensor b = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "b");
    const std::uint64_t cs = ++cot;
    check("add.same", rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a"),
          [&, cs](Tensor& x) { return weighted_sum(add(x, b), cs); });
  }
  {
    Tensor a = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a");
    const std::uint64_t cs = ++cot;
    check("add.scalar", rand_tensor(rng, {1}, -1, 1, "s"),
          [&, cs](Tensor& x) { return weighted_sum(add(a, x), cs); });
  }
  {
    Tensor a = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a");
    const std::uint64_t cs = ++cot;
    check("add.channel", rand_tensor(rng, {2, 1, 4, 4}, -1, 1, "c"),
          [&, cs](Tensor& x) { return weighted_sum(add(a, x), cs); });
  }
  {
    Tensor b = rand_tensor(rng, {2, 3, 4, 4}, 0.5, 1.5, "b");
    const std::uint64_t cs = ++cot;
    check("mul.same", rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a"),
          [&, cs](Tensor& x) { return weighted_sum(mul(x, b), cs); });
  }
  {
    Tensor a = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a");
    const std::uint64_t cs = ++cot;
    check("mul.scalar", rand_tensor(rng, {1}, 0.5, 1.5, "s"),
          [&, cs](Tensor& x) { return weighted_sum(mul(a, x), cs); });
  }
  {
    Tensor a = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a");
    const std::uint64_t cs = ++cot;
    check("mul.channel", rand_tensor(rng, {2, 1, 4, 4}, 0.5, 1.5, "c"),
          [&, cs](Tensor& x) { return weighted_sum(mul(a, x), cs); });
  }
  {
    const std::uint64_t cs = ++cot;
    check("scale", rand_tensor(rng, {3, 5}, -1, 1, "x"),
          [cs](Tensor& x) { return weighted_sum(scale(x, -1.7), cs); });
  }
  {
    // Keep every coordinate at least 10h away from the relu kink.
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, 0.01, 1.0, "x");
    auto& v = x.raw_value();
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
    const std::uint64_t cs = ++cot;
    check("relu", x, [cs](Tensor& t) { return weighted_sum(relu(t), cs); });
  }
  {
    const std::uint64_t cs = ++cot;
    check("sigmoid", rand_tensor(rng, {2, 8}, -3, 3, "x"),
          [cs](Tensor& x) { return weighted_sum(sigmoid(x), cs); });
  }
  {
    const std::uint64_t cs = ++cot;
    check("exp", rand_tensor(rng, {2, 8}, -1, 1, "x"),
          [cs](Tensor& x) { return weighted_sum(exp(x), cs); });
  }
  check("sum", rand_tensor(rng, {4, 4}, -1, 1, "x"), [](Tensor& x) { return sum(x); });
  {
    Tensor gamma = rand_tensor(rng, {3}, 0.5, 1.5, "gamma");
    Tensor beta = rand_tensor(rng, {3}, -0.5, 0.5, "beta");
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "x");
    const std::uint64_t c1 = ++cot, c2 = ++cot, c3 = ++cot;
    check("channel_affine.x", rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "x2"),
          [&, c1](Tensor& t) { return weighted_sum(channel_affine(t, gamma, beta), c1); });
    check("channel_affine.gamma", gamma,
          [&, c2](Tensor& g) { return weighted_sum(channel_affine(x, g, beta), c2); });
    check("channel_affine.beta", beta,
          [&, c3](Tensor& b) { return weighted_sum(channel_affine(x, gamma, b), c3); });
  }
  {
    Tensor w = rand_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5, "w");
    Tensor b = rand_tensor(rng, {4}, -0.5, 0.5, "b");
    Tensor x = rand_tensor(rng, {2, 3, 6, 6}, -1, 1, "x");
    const std::uint64_t c1 = ++cot, c2 = ++cot, c3 = ++cot;
    check("conv2d.x", rand_tensor(rng, {2, 3, 6, 6}, -1, 1, "x2"),
          [&, c1](Tensor& t) { return weighted_sum(conv2d(t, w, b, 2, 1), c1); });
    check("conv2d.w", w, [&, c2](Tensor& t) { return weighted_sum(conv2d(x, t, b, 2, 1), c2); });
    check("conv2d.b", b, [&, c3](Tensor& t) { return weighted_sum(conv2d(x, w, t, 2, 1), c3); });
  }
  {
    Tensor w = rand_tensor(rng, {5, 4, 1, 1}, -0.5, 0.5, "w");
    Tensor b = rand_tensor(rng, {5}, -0.5, 0.5, "b");
    const std::uint64_t cs = ++cot;
    check("conv2d.1x1", rand_tensor(rng, {1, 4, 5, 5}, -1, 1, "x"),
          [&, cs](Tensor& x) { return weighted_sum(conv2d(x, w, b, 1, 0), cs); });
  }
  {
    const std::uint64_t cs = ++cot;
    check("max_pool", rand_tensor(rng, {2, 2, 6, 6}, -1, 1, "x"),
          [cs](Tensor& x) { return weighted_sum(max_pool(x, 3, 2, 1), cs); });
  }
  {
    const std::uint64_t cs = ++cot;
    check("upsample_nearest", rand_tensor(rng, {2, 3, 3, 3}, -1, 1, "x"),
          [cs](Tensor& x) { return weighted_sum(upsample_nearest(x, 6, 6), cs); });
  }
  {
    Tensor a = rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a");
    Tensor b = rand_tensor(rng, {2, 2, 4, 4}, -1, 1, "b");
    const std::uint64_t c1 = ++cot, c2 = ++cot;
    check("concat.a", rand_tensor(rng, {2, 3, 4, 4}, -1, 1, "a2"), [&, c1](Tensor& x) {
      return weighted_sum(concat_channels(std::vector<Tensor>{x, b}), c1);
    });
    check("concat.b", b, [&, c2](Tensor& x) {
      return weighted_sum(concat_channels(std::vector<Tensor>{a, x}), c2);
    });
  }

  // Loss terms, driven through the real target-assignment rule.
  {
    const TargetMap one = detail::suite_targets();
    const std::vector<TargetMap> tm{one};
    auto level_tensors = [&](int channels, double lo, double hi, const char* nm) {
      std::array<Tensor, 5> t;
      for (int i = 0; i < 5; ++i)
        t[static_cast<std::size_t>(i)] =
            rand_tensor(rng, {1, channels, one.levels[static_cast<std::size_t>(i)].h,
                              one.levels[static_cast<std::size_t>(i)].w},
                        lo, hi, nm);
      return t;
    };
    {
      std::array<Tensor, 5> cls = level_tensors(1, -2, 2, "cls");
      check("loss.focal", cls[0], [&](Tensor& x) {
        std::array<Tensor, 5> probe = cls;
        probe[0] = x;
        return focal_loss(probe, tm, 0.25, 2.0, one.n_pos);
      });
    }
    {
      std::array<Tensor, 5> reg = level_tensors(4, 0.5, 20.0, "reg");
      check("loss.giou", reg[0], [&](Tensor& x) {
        std::array<Tensor, 5> probe = reg;
        probe[0] = x;
        return giou_loss(probe, tm);
      });
    }
    {
      std::array<Tensor, 5> ctr = level_tensors(1, -2, 2, "ctr");
      check("loss.centerness", ctr[0], [&](Tensor& x) {
        std::array<Tensor, 5> probe = ctr;
        probe[0] = x;
        return centerness_loss(probe, tm, one.n_pos);
      });
    }
  }
  return out;
}

/// Directional derivative probes through the full network and loss on a
/// single sensor pair at the given input size.
inline SuiteCheck run_model_gradcheck(int probes, int input_size = 64, std::uint64_t seed = 11,
                                      FusionMode fusion = FusionMode::kSac) {
  ModelConfig mc;
  mc.input_size = input_size;
  mc.width_mult = 0.125;
  mc.fusion = fusion;
  mc.head_tower_depth = 1;
  mc.stage_blocks = {1, 1, 1};
  mc.validate();

  Rng init_rng(seed);
  Model model(mc, init_rng);

  Rng data_rng = Rng::substream(seed, {0x70726f6265ULL});
  Tensor vision = detail::rand_tensor(data_rng, {1, 3, input_size, input_size}, 0.0, 1.0, "vision");
  vision.node()->requires_grad = false;
  Tensor radar = detail::rand_tensor(data_rng, {1, 3, input_size, input_size}, 0.0, 1.0, "radar");
  radar.node()->requires_grad = false;

  // Boxes scale with the input so the assignment geometry stays proportional.
  const double s = input_size / 64.0;
  std::vector<GtBox> gts;
  gts.push_back({8.0 * s, 8.0 * s, 56.0 * s, 56.0 * s, 0});
  gts.push_back({36.0 * s, 8.0 * s, 60.0 * s, 28.0 * s, 0});

  // Level shapes from one dry-run forward.
  std::vector<TargetMap> tm(1);
  {
    NoGradGuard ng;
    HeadOut head = model.forward(vision, radar);
    std::array<std::pair<int, int>, 5> hw;
    for (int i = 0; i < 5; ++i) {
      const auto& s = head.cls[static_cast<std::size_t>(i)].shape();
      hw[static_cast<std::size_t>(i)] = {s[2], s[3]};
    }
    tm[0] = assign_targets(gts, hw, mc.input_size);
  }
  if (tm[0].n_pos < 2) throw std::logic_error("run_model_gradcheck: expected >= 2 positives");

  LossConfig lc;
  auto f = [&]() {
    HeadOut head = model.forward(vision, radar);
    return total_loss(head, tm, lc).total;
  };
  return detail::run_one("model.directional", kModelGradTol,
                         directional_grad_check(f, model.parameters(), 1e-5, probes, data_rng));
}

}  // namespace rvf
