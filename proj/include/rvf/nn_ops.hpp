#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvf/tensor.hpp"

namespace rvf {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvDims {
  int n, cin, h, w;
  int cout, k, stride, pad;
  int oh, ow;
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename S>
inline ConvDims conv_dims(const TensorT<S>& x, const TensorT<S>& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw std::invalid_argument("conv2d: need NCHW input and OIKK weights, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (w.dim(2) != w.dim(3))
    throw std::invalid_argument("conv2d: non-square kernel " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv2d: input channels mismatch, input " + shape_str(x.shape()) +
                                " vs weights " + shape_str(w.shape()));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
             w.dim(0), w.dim(2), stride,   pad,
             0,        0};
  d.oh = conv_out_extent(d.h, d.k, stride, pad);
  d.ow = conv_out_extent(d.w, d.k, stride, pad);
  if (d.oh < 1 || d.ow < 1)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(d.k) +
                                " does not fit input " + shape_str(x.shape()) + " with stride " +
                                std::to_string(stride) + " padding " + std::to_string(pad));
  return d;
}

/// Unpack one sample into patch matrix: rows = cin*k*k, cols = oh*ow, row-major.
template <typename S>
inline void im2col(const S* x, const ConvDims& d, S* cols) {
  const std::size_t ohw = static_cast<std::size_t>(d.oh) * d.ow;
  std::size_t r = 0;
  for (int ci = 0; ci < d.cin; ++ci) {
    const S* plane = x + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.k; ++ky)
      for (int kx = 0; kx < d.k; ++kx, ++r) {
        S* row = cols + r * ohw;
        std::size_t c = 0;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) {
            for (int ox = 0; ox < d.ow; ++ox, ++c) row[c] = S(0);
            continue;
          }
          const S* src = plane + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox, ++c) {
            const int ix = ox * d.stride - d.pad + kx;
            row[c] = (ix >= 0 && ix < d.w) ? src[ix] : S(0);
          }
        }
      }
  }
}

/// Scatter-add of the patch matrix back onto an input-shaped gradient.
template <typename S>
inline void col2im_add(const S* cols, const ConvDims& d, S* dx) {
  const std::size_t ohw = static_cast<std::size_t>(d.oh) * d.ow;
  std::size_t r = 0;
  for (int ci = 0; ci < d.cin; ++ci) {
    S* plane = dx + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.k; ++ky)
      for (int kx = 0; kx < d.k; ++kx, ++r) {
        const S* row = cols + r * ohw;
        std::size_t c = 0;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) {
            c += static_cast<std::size_t>(d.ow);
            continue;
          }
          S* dst = plane + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox, ++c) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += row[c];
          }
        }
      }
  }
}

}  // namespace detail

/// 2-d convolution, NCHW input, OIKK weights, per-output-channel bias.
/// Output spatial extent is (in + 2*pad - k) / stride + 1.
template <typename S>
inline TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                         int stride, int pad) {
  using detail::RowMat;
  const detail::ConvDims d = detail::conv_dims(x, w, stride, pad);
  if (static_cast<int>(b.numel()) != d.cout)
    throw std::invalid_argument("conv2d: bias length " + std::to_string(b.numel()) +
                                " vs output channels " + std::to_string(d.cout));
  const std::size_t ohw = static_cast<std::size_t>(d.oh) * d.ow;
  const std::size_t ckk = static_cast<std::size_t>(d.cin) * d.k * d.k;
  const std::size_t in_plane = static_cast<std::size_t>(d.cin) * d.h * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.cout) * ohw;

  std::vector<S> out(static_cast<std::size_t>(d.n) * out_plane);
  std::vector<S> cols(ckk * ohw);
  Eigen::Map<const RowMat<S>> wmap(w.value().data(), d.cout, static_cast<Eigen::Index>(ckk));
  for (int ni = 0; ni < d.n; ++ni) {
    detail::im2col(x.value().data() + static_cast<std::size_t>(ni) * in_plane, d, cols.data());
    Eigen::Map<const RowMat<S>> cmap(cols.data(), static_cast<Eigen::Index>(ckk),
                                     static_cast<Eigen::Index>(ohw));
    Eigen::Map<RowMat<S>> omap(out.data() + static_cast<std::size_t>(ni) * out_plane, d.cout,
                               static_cast<Eigen::Index>(ohw));
    omap.noalias() = wmap * cmap;
    for (int co = 0; co < d.cout; ++co)
      omap.row(co).array() += b.value()[static_cast<std::size_t>(co)];
  }

  auto* xn = x.node();
  auto* wn = w.node();
  auto* bn = b.node();
  auto result = TensorT<S>::make_node({d.n, d.cout, d.oh, d.ow}, std::move(out), {x, w, b},
                                      nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, wn, bn, rn, d, ohw, ckk, in_plane, out_plane]() {
      if (xn->requires_grad) xn->ensure_grad();
      if (wn->requires_grad) wn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      std::vector<S> cols(ckk * ohw);
      std::vector<S> dcols;
      Eigen::Map<const RowMat<S>> wmap(wn->value.data(), d.cout,
                                       static_cast<Eigen::Index>(ckk));
      for (int ni = 0; ni < d.n; ++ni) {
        Eigen::Map<const RowMat<S>> gmap(rn->grad.data() + static_cast<std::size_t>(ni) * out_plane,
                                         d.cout, static_cast<Eigen::Index>(ohw));
        if (bn->requires_grad)
          for (int co = 0; co < d.cout; ++co)
            bn->grad[static_cast<std::size_t>(co)] += gmap.row(co).sum();
        if (wn->requires_grad) {
          detail::im2col(xn->value.data() + static_cast<std::size_t>(ni) * in_plane, d,
                         cols.data());
          Eigen::Map<const RowMat<S>> cmap(cols.data(), static_cast<Eigen::Index>(ckk),
                                           static_cast<Eigen::Index>(ohw));
          Eigen::Map<RowMat<S>> dwmap(wn->grad.data(), d.cout, static_cast<Eigen::Index>(ckk));
          dwmap.noalias() += gmap * cmap.transpose();
        }
        if (xn->requires_grad) {
          dcols.resize(ckk * ohw);
          Eigen::Map<RowMat<S>> dcmap(dcols.data(), static_cast<Eigen::Index>(ckk),
                                      static_cast<Eigen::Index>(ohw));
          dcmap.noalias() = wmap.transpose() * gmap;
          detail::col2im_add(dcols.data(), d, xn->grad.data() + static_cast<std::size_t>(ni) * in_plane);
        }
      }
    };
  }
  return result;
}

/// Max pooling. Padding cells never win; a window with no valid cell yields 0.
/// Ties go to the first cell in window scan order (row-major).
template <typename S>
inline TensorT<S> max_pool(const TensorT<S>& x, int k, int stride, int pad) {
  if (x.rank() != 4) throw std::invalid_argument("max_pool: need NCHW input");
  if (k < 1 || stride < 1 || pad < 0 || pad >= k)
    throw std::invalid_argument("max_pool: bad window/stride/padding");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = detail::conv_out_extent(h, k, stride, pad);
  const int ow = detail::conv_out_extent(w, k, stride, pad);
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("max_pool: window does not fit input " + shape_str(x.shape()));

  std::vector<S> out(static_cast<std::size_t>(n) * c * oh * ow);
  std::vector<std::int64_t> argmax(out.size(), -1);
  const auto& xv = x.value();
  std::size_t o = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(iy) * w + ix;
              if (xv[idx] > best) {
                best = xv[idx];
                best_idx = static_cast<std::int64_t>(idx);
              }
            }
          }
          out[o] = best_idx < 0 ? S(0) : best;
          argmax[o] = best_idx;
        }
    }

  auto* xn = x.node();
  auto result =
      TensorT<S>::make_node({n, c, oh, ow}, std::move(out), {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn, argmax = std::move(argmax)]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        if (argmax[i] >= 0) xn->grad[static_cast<std::size_t>(argmax[i])] += rn->grad[i];
    };
  }
  return result;
}

/// Nearest-neighbour resize to an explicit target extent.
/// Source index is floor(out_index * in_extent / out_extent).
template <typename S>
inline TensorT<S> upsample_nearest(const TensorT<S>& x, int oh, int ow) {
  if (x.rank() != 4) throw std::invalid_argument("upsample_nearest: need NCHW input");
  if (oh < 1 || ow < 1) throw std::invalid_argument("upsample_nearest: bad target extent");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<int> ymap(static_cast<std::size_t>(oh)), xmap(static_cast<std::size_t>(ow));
  for (int oy = 0; oy < oh; ++oy)
    ymap[static_cast<std::size_t>(oy)] =
        static_cast<int>(static_cast<std::int64_t>(oy) * h / oh);
  for (int ox = 0; ox < ow; ++ox)
    xmap[static_cast<std::size_t>(ox)] =
        static_cast<int>(static_cast<std::int64_t>(ox) * w / ow);

  std::vector<S> out(static_cast<std::size_t>(n) * c * oh * ow);
  const auto& xv = x.value();
  std::size_t o = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        const std::size_t row = base + static_cast<std::size_t>(ymap[static_cast<std::size_t>(oy)]) * w;
        for (int ox = 0; ox < ow; ++ox, ++o)
          out[o] = xv[row + static_cast<std::size_t>(xmap[static_cast<std::size_t>(ox)])];
      }
    }

  auto* xn = x.node();
  auto result = TensorT<S>::make_node({n, c, oh, ow}, std::move(out), {x}, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [xn, rn, n, c, h, w, oh, ow, ymap = std::move(ymap),
                       xmap = std::move(xmap)]() {
      xn->ensure_grad();
      std::size_t o = 0;
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            const std::size_t row =
                base + static_cast<std::size_t>(ymap[static_cast<std::size_t>(oy)]) * w;
            for (int ox = 0; ox < ow; ++ox, ++o)
              xn->grad[row + static_cast<std::size_t>(xmap[static_cast<std::size_t>(ox)])] +=
                  rn->grad[o];
          }
        }
    };
  }
  return result;
}

/// Concatenate along the channel axis. All inputs share N, H, W.
template <typename S>
inline TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int c_total = 0;
  for (const auto& x : xs) {
    if (x.rank() != 4 || x.dim(0) != n || x.dim(2) != h || x.dim(3) != w)
      throw std::invalid_argument("concat_channels: incompatible input " + shape_str(x.shape()) +
                                  " vs " + shape_str(xs[0].shape()));
    c_total += x.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<S> out(static_cast<std::size_t>(n) * c_total * plane);
  std::vector<int> offsets;  // channel offset of each input
  int off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const auto& xv = x.value();
    const int ci = x.dim(1);
    for (int ni = 0; ni < n; ++ni) {
      const std::size_t src = static_cast<std::size_t>(ni) * ci * plane;
      const std::size_t dst = (static_cast<std::size_t>(ni) * c_total + off) * plane;
      std::copy(xv.begin() + static_cast<std::ptrdiff_t>(src),
                xv.begin() + static_cast<std::ptrdiff_t>(src + static_cast<std::size_t>(ci) * plane),
                out.begin() + static_cast<std::ptrdiff_t>(dst));
    }
    off += ci;
  }

  std::vector<TensorNode<S>*> nodes;
  std::vector<int> chans;
  for (const auto& x : xs) {
    nodes.push_back(x.node());
    chans.push_back(x.dim(1));
  }
  auto result = TensorT<S>::make_node({n, c_total, h, w}, std::move(out), xs, nullptr);
  auto* rn = result.node();
  if (rn->requires_grad) {
    rn->backward_fn = [nodes = std::move(nodes), chans = std::move(chans),
                       offsets = std::move(offsets), rn, n, c_total, plane]() {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        nodes[i]->ensure_grad();
        const int ci = chans[i];
        for (int ni = 0; ni < n; ++ni) {
          const std::size_t src = (static_cast<std::size_t>(ni) * c_total + offsets[i]) * plane;
          const std::size_t dst = static_cast<std::size_t>(ni) * ci * plane;
          for (std::size_t j = 0; j < static_cast<std::size_t>(ci) * plane; ++j)
            nodes[i]->grad[dst + j] += rn->grad[src + j];
        }
      }
    };
  }
  return result;
}

}  // namespace rvf
