#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rvf {

/// Thread-local autograd switch. Off = forward passes record nothing.
inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename S>
class TensorT;

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::string name;  // set for parameters
  std::vector<TensorT<S>> parents;
  std::function<void()> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

/// Dense n-d tensor handle with reverse-mode autodiff. Copies share the
/// underlying node. Values are immutable after construction except through
/// raw_value() (used by the optimizer and finite-difference probes).
template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape) {
    return from_data(std::move(shape), {}, false, "");
  }
  static TensorT full(std::vector<int> shape, S v) {
    const std::size_t n = shape_numel(shape);
    auto t = from_data(std::move(shape), std::vector<S>(n, v), false, "");
    return t;
  }
  static TensorT from(std::vector<int> shape, std::vector<S> data) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    return from_data(std::move(shape), std::move(data), false, "");
  }
  static TensorT scalar(S v) { return from({1}, {v}); }

  /// Trainable leaf.
  static TensorT param(std::vector<int> shape, std::vector<S> data, std::string name) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: param data/shape mismatch for " + name);
    return from_data(std::move(shape), std::move(data), true, std::move(name));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  const std::vector<S>& value() const { return node_->value; }
  const std::vector<S>& grad() const { return node_->grad; }
  std::vector<S>& raw_value() { return node_->value; }
  std::vector<S>& raw_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  S item() const {
    if (numel() != 1) throw std::logic_error("tensor: item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  TensorNode<S>* node() const { return node_.get(); }

  /// Internal: build a node. Used by every op.
  static TensorT make_node(std::vector<int> shape, std::vector<S> value,
                           std::vector<TensorT> parents, std::function<void()> backward_fn) {
    TensorT t = from_data(std::move(shape), std::move(value), false, "");
    bool needs = grad_mode() &&
                 std::any_of(parents.begin(), parents.end(),
                             [](const TensorT& p) { return p.requires_grad(); });
    if (needs) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
      t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

 private:
  static TensorT from_data(std::vector<int> shape, std::vector<S> data, bool requires_grad,
                           std::string name) {
    TensorT t;
    t.node_ = std::make_shared<TensorNode<S>>();
    const std::size_t n = shape_numel(shape);
    t.node_->shape = std::move(shape);
    if (data.empty())
      t.node_->value.assign(n, S(0));
    else
      t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.node_->name = std::move(name);
    return t;
  }

  std::shared_ptr<TensorNode<S>> node_;
};

using Tensor = TensorT<double>;

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Populates grad on every
/// requires_grad node reachable through the recorded graph. Unless
/// retain_graph is set, closures and parent links are released afterwards.
template <typename S>
inline void backward(const TensorT<S>& loss, bool retain_graph = false) {
  if (loss.numel() != 1)
    throw std::logic_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order over parents. order holds handles, not raw
  // pointers: releasing parent links below drops the only owners of interior
  // temporaries, and the sweep must outlive them.
  std::vector<TensorT<S>> order;
  std::unordered_set<TensorNode<S>*> visited;
  std::vector<std::pair<TensorT<S>, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    TensorNode<S>* node = stack.back().first.node();
    std::size_t& next = stack.back().second;
    if (next < node->parents.size()) {
      TensorT<S> p = node->parents[next++];
      if (p.node()->requires_grad && !visited.count(p.node())) {
        visited.insert(p.node());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<S>* n = it->node();
    if (n->backward_fn) n->backward_fn();
    if (!retain_graph) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { kSame, kScalarA, kScalarB, kChanA, kChanB };

template <typename S>
inline Broadcast classify_broadcast(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (a.numel() == 1) return Broadcast::kScalarA;
  if (b.numel() == 1) return Broadcast::kScalarB;
  if (a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
      a.dim(3) == b.dim(3)) {
    if (a.dim(1) == 1) return Broadcast::kChanA;
    if (b.dim(1) == 1) return Broadcast::kChanB;
  }
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

/// Per (sample, pixel) index mapping for the 1-channel broadcast.
struct ChanIndex {
  int channels;
  std::size_t plane;  // H*W
  std::size_t map(std::size_t full_idx) const {
    const std::size_t within = full_idx % (static_cast<std::size_t>(channels) * plane);
    const std::size_t n = full_idx / (static_cast<std::size_t>(channels) * plane);
    return n * plane + within % plane;
  }
};

}  // namespace detail

template <typename S>
inline TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  using detail::Broadcast;
  const Broadcast bc = detail::classify_broadcast(a, b, "add");
  const TensorT<S>& big = (bc == Broadcast::kScalarA || bc == Broadcast::kChanA) ? b : a;
  std::vector<S> out(big.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::ChanIndex ci{};
  if (bc == Broadcast::kChanA || bc == Broadcast::kChanB)
    ci = {big.dim(1), static_cast<std::size_t>(big.dim(2)) * big.dim(3)};
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (bc) {
      case Broadcast::kSame: out[i] = av[i] + bv[i]; break;
      case Broadcast::kScalarA: out[i] = av[0] + bv[i]; break;
      case Broadcast::kScalarB: out[i] = av[i] + bv[0]; break;
      case Broadcast::kChanA: out[i] = av[ci.map(i)] + bv[i]; break;
      case Broadcast::kChanB: out[i] = av[i] + bv[ci.map(i)]; break;
    }
  }
  auto* an = a.node();
  auto* bn = b.node();
  TensorT<S> t;
  auto result = TensorT<S>::make_node(
      big.shape(), std::move(out), {a, b}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [an, bn, rn, bc, ci]() {
      const auto& g = rn->grad;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (bc) {
            case Broadcast::kSame: an->grad[i] += g[i]; break;
            case Broadcast::kScalarA: an->grad[0] += g[i]; break;
            case Broadcast::kScalarB: an->grad[i] += g[i]; break;
            case Broadcast::kChanA: an->grad[ci.map(i)] += g[i]; break;
            case Broadcast::kChanB: an->grad[i] += g[i]; break;
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (bc) {
            case Broadcast::kSame: bn->grad[i] += g[i]; break;
            case Broadcast::kScalarA: bn->grad[i] += g[i]; break;
            case Broadcast::kScalarB: bn->grad[0] += g[i]; break;
            case Broadcast::kChanA: bn->grad[i] += g[i]; break;
            case Broadcast::kChanB: bn->grad[ci.map(i)] += g[i]; break;
          }
        }
      }
    };
  }
  return result;
}

template <typename S>
inline TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  using detail::Broadcast;
  const Broadcast bc = detail::classify_broadcast(a, b, "mul");
  const TensorT<S>& big = (bc == Broadcast::kScalarA || bc == Broadcast::kChanA) ? b : a;
  std::vector<S> out(big.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::ChanIndex ci{};
  if (bc == Broadcast::kChanA || bc == Broadcast::kChanB)
    ci = {big.dim(1), static_cast<std::size_t>(big.dim(2)) * big.dim(3)};
  auto a_at = [&](std::size_t i) -> S {
    switch (bc) {
      case Broadcast::kScalarA: return av[0];
      case Broadcast::kChanA: return av[ci.map(i)];
      default: return av[i];
    }
  };
  auto b_at = [&](std::size_t i) -> S {
    switch (bc) {
      case Broadcast::kScalarB: return bv[0];
      case Broadcast::kChanB: return bv[ci.map(i)];
      default: return bv[i];
    }
  };
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a_at(i) * b_at(i);

  auto* an = a.node();
  auto* bn = b.node();
  auto result = TensorT<S>::make_node(big.shape(), std::move(out), {a, b}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [an, bn, rn, bc, ci]() {
      const auto& g = rn->grad;
      const auto& av2 = an->value;
      const auto& bv2 = bn->value;
      auto a_idx = [&](std::size_t i) {
        return bc == Broadcast::kScalarA ? std::size_t(0)
               : bc == Broadcast::kChanA ? ci.map(i)
                                         : i;
      };
      auto b_idx = [&](std::size_t i) {
        return bc == Broadcast::kScalarB ? std::size_t(0)
               : bc == Broadcast::kChanB ? ci.map(i)
                                         : i;
      };
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[a_idx(i)] += g[i] * bv2[b_idx(i)];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[b_idx(i)] += g[i] * av2[a_idx(i)];
      }
    };
  }
  return result;
}

template <typename S>
inline TensorT<S> scale(const TensorT<S>& x, S c) {
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  auto* xn = x.node();
  auto result = TensorT<S>::make_node(x.shape(), std::move(out), {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn, c]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i) xn->grad[i] += c * rn->grad[i];
    };
  }
  return result;
}

template <typename S>
inline TensorT<S> relu(const TensorT<S>& x) {
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
  auto* xn = x.node();
  auto result = TensorT<S>::make_node(x.shape(), std::move(out), {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        if (xn->value[i] > S(0)) xn->grad[i] += rn->grad[i];
    };
  }
  return result;
}

template <typename S>
inline S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
inline TensorT<S> sigmoid(const TensorT<S>& x) {
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  auto* xn = x.node();
  auto result = TensorT<S>::make_node(x.shape(), std::move(out), {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i) {
        const S y = rn->value[i];
        xn->grad[i] += rn->grad[i] * y * (S(1) - y);
      }
    };
  }
  return result;
}

template <typename S>
inline TensorT<S> exp(const TensorT<S>& x) {
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  auto* xn = x.node();
  auto result = TensorT<S>::make_node(x.shape(), std::move(out), {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        xn->grad[i] += rn->grad[i] * rn->value[i];
    };
  }
  return result;
}

template <typename S>
inline TensorT<S> sum(const TensorT<S>& x) {
  S total = std::accumulate(x.value().begin(), x.value().end(), S(0));
  auto* xn = x.node();
  auto result = TensorT<S>::make_node({1}, {total}, {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn]() {
      xn->ensure_grad();
      const S g = rn->grad[0];
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    };
  }
  return result;
}

/// Per-channel affine y = gamma[c] * x + beta[c]; the norm-free stand-in
/// where the reference backbone would put batch norm.
template <typename S>
inline TensorT<S> channel_affine(const TensorT<S>& x, const TensorT<S>& gamma,
                                 const TensorT<S>& beta) {
  if (x.rank() != 4) throw std::invalid_argument("channel_affine: need NCHW input");
  const int c = x.dim(1);
  if (static_cast<int>(gamma.numel()) != c || static_cast<int>(beta.numel()) != c)
    throw std::invalid_argument("channel_affine: gamma/beta length " +
                                std::to_string(gamma.numel()) + " vs channels " +
                                std::to_string(c));
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int n = x.dim(0);
  std::vector<S> out(x.numel());
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::size_t idx = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int c2 = 0; c2 < c; ++c2) {
      const S g = gv[static_cast<std::size_t>(c2)];
      const S b = bv[static_cast<std::size_t>(c2)];
      for (std::size_t p = 0; p < plane; ++p, ++idx) out[idx] = g * xv[idx] + b;
    }

  auto* xn = x.node();
  auto* gn = gamma.node();
  auto* bn = beta.node();
  auto result = TensorT<S>::make_node(x.shape(), std::move(out), {x, gamma, beta}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, gn, bn, rn, n, c, plane]() {
      const auto& g = rn->grad;
      if (xn->requires_grad) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      std::size_t idx = 0;
      for (int ni = 0; ni < n; ++ni)
        for (int c2 = 0; c2 < c; ++c2) {
          const std::size_t cc = static_cast<std::size_t>(c2);
          S dg = 0, db = 0;
          const S gamma_c = gn->value[cc];
          for (std::size_t p = 0; p < plane; ++p, ++idx) {
            if (xn->requires_grad) xn->grad[idx] += g[idx] * gamma_c;
            dg += g[idx] * xn->value[idx];
            db += g[idx];
          }
          if (gn->requires_grad) gn->grad[cc] += dg;
          if (bn->requires_grad) bn->grad[cc] += db;
        }
    };
  }
  return result;
}

}  // namespace rvf
