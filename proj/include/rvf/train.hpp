#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvf/loss.hpp"
#include "rvf/model.hpp"
#include "rvf/optim.hpp"
#include "rvf/rng.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int iterations = 2000;   // full-scale reference runs 40000
  int batch_pairs = 2;     // full-scale reference uses 4
  double lambda_reg = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  bool use_centerness = true;
  std::uint64_t seed = 1;
  int eval_interval = 0;  // 0 disables periodic evaluation

  void validate() const {
    if (lr < 0 || momentum < 0 || weight_decay < 0 || iterations < 1 || batch_pairs < 1 ||
        lambda_reg < 0)
      throw std::invalid_argument("TrainConfig: negative or zero-sized setting");
  }

  LossConfig loss_config() const {
    return LossConfig{focal_alpha, focal_gamma, lambda_reg, use_centerness};
  }
};

/// One paired frame ready for the network: both images as (1,3,S,S) tensors
/// in [0,1], plus its ground truth in input pixel coordinates.
template <typename S>
struct TrainSampleT {
  TensorT<S> vision;
  TensorT<S> radar;
  std::vector<GtBox> gts;
};

using TrainSample = TrainSampleT<double>;

struct LossRow {
  int iteration = 0;  // 1-based
  double total = 0, cls = 0, reg = 0, centerness = 0;
};

inline std::string loss_csv_header() { return "iteration,total,cls,reg,centerness"; }

namespace detail {

/// Stack (1,C,H,W) sample tensors into one (B,C,H,W) constant batch.
template <typename S>
inline TensorT<S> stack_batch(const std::vector<const TensorT<S>*>& items) {
  const auto& first = *items[0];
  std::vector<int> shape = first.shape();
  shape[0] = static_cast<int>(items.size());
  std::vector<S> data;
  data.reserve(shape_numel(shape));
  for (const TensorT<S>* t : items) {
    if (t->shape() != first.shape())
      throw std::invalid_argument("stack_batch: mismatched sample shapes " +
                                  shape_str(t->shape()) + " vs " + shape_str(first.shape()));
    data.insert(data.end(), t->value().begin(), t->value().end());
  }
  return TensorT<S>::from(std::move(shape), std::move(data));
}

}  // namespace detail

/// SGD training over an in-memory sample set. Batches are drawn uniformly
/// with replacement from a dedicated RNG substream, so the whole run is a
/// pure function of (model init, samples, config). The eval hook, when given,
/// fires every eval_interval iterations and at the end.
template <typename S>
inline std::vector<LossRow> train(ModelT<S>& model, const std::vector<TrainSampleT<S>>& samples,
                                  const TrainConfig& cfg,
                                  const std::function<void(int)>& eval_hook = nullptr,
                                  const std::function<void(const LossRow&)>& row_hook = nullptr) {
  cfg.validate();
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  for (const auto& s : samples)
    for (const GtBox& g : s.gts)
      if (!(g.x1 < g.x2 && g.y1 < g.y2))
        throw std::invalid_argument("train: degenerate ground-truth box in sample set");

  // Level shapes depend only on input_size; probe them with one forward pass.
  std::array<std::pair<int, int>, 5> level_hw;
  {
    NoGradGuard ng;
    auto head = model.forward(samples[0].vision, samples[0].radar);
    for (std::size_t i = 0; i < 5; ++i)
      level_hw[i] = {head.cls[i].dim(2), head.cls[i].dim(3)};
  }
  std::vector<TargetMap> sample_targets;
  sample_targets.reserve(samples.size());
  for (const auto& s : samples)
    sample_targets.push_back(assign_targets(s.gts, level_hw, model.cfg.input_size));

  Rng rng = Rng::substream(cfg.seed, {0x747261696eULL});
  SgdState<S> sgd;
  const LossConfig loss_cfg = cfg.loss_config();
  std::vector<LossRow> curve;
  curve.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<const TensorT<S>*> vis, rad;
    std::vector<TargetMap> targets;
    for (int b = 0; b < cfg.batch_pairs; ++b) {
      const std::size_t idx = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(samples.size()) - 1));
      vis.push_back(&samples[idx].vision);
      rad.push_back(&samples[idx].radar);
      targets.push_back(sample_targets[idx]);
    }
    TensorT<S> vbatch = detail::stack_batch(vis);
    TensorT<S> rbatch = detail::stack_batch(rad);

    auto head = model.forward(vbatch, rbatch);
    LossResult<S> loss = total_loss(head, targets, loss_cfg);
    const double total = static_cast<double>(loss.total.item());
    if (!std::isfinite(total))
      throw std::runtime_error("train: loss diverged (non-finite) at iteration " +
                               std::to_string(it));

    zero_grads(model.parameters());
    backward(loss.total);
    sgd_step(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay, sgd);

    LossRow row{it, total, loss.cls, loss.reg, loss.centerness};
    curve.push_back(row);
    if (row_hook) row_hook(row);
    if (eval_hook && cfg.eval_interval > 0 &&
        (it % cfg.eval_interval == 0 || it == cfg.iterations))
      eval_hook(it);
  }
  return curve;
}

}  // namespace rvf
