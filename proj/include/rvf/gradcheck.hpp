#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rvf/rng.hpp"
#include "rvf/tensor.hpp"

namespace rvf {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compare backward() against central differences coordinate by coordinate.
/// f must map the given tensor to a scalar tensor and be re-runnable.
/// Coordinates where exclude(i) is true (e.g. relu kinks within 10h of zero)
/// are left out of the max.
template <typename S, typename F>
inline GradCheckResult grad_check(F&& f, TensorT<S> x, double h,
                                  const std::function<bool(std::size_t)>& exclude = nullptr) {
  TensorT<S> y = f(x);
  if (y.numel() != 1) throw std::logic_error("grad_check: f must return a scalar");
  x.zero_grad();
  backward(y);
  std::vector<double> analytic(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) analytic[i] = static_cast<double>(x.grad()[i]);

  GradCheckResult res;
  NoGradGuard ng;
  auto eval = [&]() { return static_cast<double>(f(x).item()); };
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (exclude && exclude(i)) continue;
    const S orig = x.raw_value()[i];
    x.raw_value()[i] = orig + static_cast<S>(h);
    const double fp = eval();
    x.raw_value()[i] = orig - static_cast<S>(h);
    const double fm = eval();
    x.raw_value()[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    res.max_rel_err = std::max(res.max_rel_err, rel_err(fd, analytic[i]));
    ++res.coords_checked;
  }
  return res;
}

/// Directional probes for large parameter sets: draws a random unit direction
/// d over the concatenation of all params and compares d . grad against
/// (f(p + h d) - f(p - h d)) / 2h. f takes no arguments and reads the params.
template <typename S, typename F>
inline GradCheckResult directional_grad_check(F&& f, std::vector<TensorT<S>> params, double h,
                                              int probes, Rng& rng) {
  TensorT<S> y = f();
  if (y.numel() != 1) throw std::logic_error("directional_grad_check: f must return a scalar");
  for (auto& p : params) p.zero_grad();
  backward(y);
  std::vector<std::vector<double>> analytic;
  std::size_t total = 0;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    total += p.numel();
  }
  if (total == 0) throw std::logic_error("directional_grad_check: empty parameter set");

  GradCheckResult res;
  NoGradGuard ng;
  std::vector<std::vector<double>> dir(params.size());
  for (int probe = 0; probe < probes; ++probe) {
    double norm_sq = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      dir[pi].resize(params[pi].numel());
      for (auto& d : dir[pi]) {
        d = rng.normal(0.0, 1.0);
        norm_sq += d * d;
      }
    }
    const double inv_norm = 1.0 / std::sqrt(norm_sq);
    double dot = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (std::size_t i = 0; i < dir[pi].size(); ++i) {
        dir[pi][i] *= inv_norm;
        dot += dir[pi][i] * analytic[pi][i];
      }

    auto shift = [&](double t) {
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& v = params[pi].raw_value();
        for (std::size_t i = 0; i < v.size(); ++i)
          v[i] += static_cast<S>(t * dir[pi][i]);
      }
    };
    shift(h);
    const double fp = static_cast<double>(f().item());
    shift(-2.0 * h);
    const double fm = static_cast<double>(f().item());
    shift(h);
    const double fd = (fp - fm) / (2.0 * h);
    res.max_rel_err = std::max(res.max_rel_err, rel_err(fd, dot));
    ++res.coords_checked;
  }
  return res;
}

}  // namespace rvf
