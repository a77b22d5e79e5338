// SPDX-License-Identifier: Apache-2.0
#include "hsakd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "hsakd/parallel.hpp"

namespace hsakd {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

using Inputs = std::span<const std::shared_ptr<TensorImpl>>;

// c[m, n] = a[m, k] * b[k, n]. In strict mode every output element is
// accumulated over k in index order, so a row's result does not depend on
// how many other rows or columns share the call.
template <class T>
void gemm_forward(T* c, const T* a, const T* b, Eigen::Index m, Eigen::Index k,
                  Eigen::Index n) {
  if (!strict_mode()) {
    MapMat<T>(c, m, n).noalias() = ConstMapMat<T>(a, m, k) * ConstMapMat<T>(b, k, n);
    return;
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    T* row = c + i * n;
    std::fill(row, row + n, T(0));
    for (Eigen::Index p = 0; p < k; ++p) {
      const T w = a[i * k + p];
      const T* src = b + p * n;
      for (Eigen::Index j = 0; j < n; ++j) row[j] = std::fma(w, src[j], row[j]);
    }
  }
}

std::string axis_msg(std::string_view op, std::string_view what) {
  return std::string(op) + ": " + std::string(what);
}

void require_defined(std::string_view op, const Tensor& t) {
  if (!t.defined()) throw ContractError(axis_msg(op, "undefined input tensor"));
}

void require_same_dtype(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(axis_msg(op, "dtype mismatch (" +
                                         std::string(dtype_name(a.dtype())) +
                                         " vs " +
                                         std::string(dtype_name(b.dtype())) + ")"));
  }
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  require_same_dtype(op, a, b);
  if (a.shape() == b.shape()) return;
  std::string detail = "shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape());
  if (a.rank() == b.rank()) {
    detail += " at axes";
    for (std::size_t i = 0; i < a.rank(); ++i) {
      if (a.dim(i) != b.dim(i)) detail += " " + std::to_string(i);
    }
  } else {
    detail += " (rank " + std::to_string(a.rank()) + " vs " +
              std::to_string(b.rank()) + ")";
  }
  throw DimensionError(axis_msg(op, detail));
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(axis_msg(op, "expected rank " + std::to_string(rank) +
                                          ", got shape " + shape_str(t.shape())));
  }
}

bool wants_grad(const std::shared_ptr<TensorImpl>& impl) {
  return impl && impl->requires_grad;
}

template <class T>
std::span<T> grad_of(TensorImpl& impl) {
  return detail::grad_buffer(impl).template span<T>();
}

// ---------------------------------------------------------------------------
// Elementwise

enum class Binary { add, sub, mul };

Tensor binary(Primitive kind, Binary op, const Tensor& a, const Tensor& b) {
  const auto name = primitive_name(kind);
  require_defined(name, a);
  require_defined(name, b);
  require_same_shape(name, a, b);
  return dispatch_dtype(a.dtype(), [&]<typename T>() {
    const auto x = a.data<T>();
    const auto y = b.data<T>();
    Storage out(a.dtype(), x.size());
    auto o = out.template span<T>();
    const std::size_t n = x.size();
    switch (op) {
      case Binary::add: for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i]; break;
      case Binary::sub: for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i]; break;
      case Binary::mul: for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[i]; break;
    }
    return detail::record(
        kind, a.shape(), std::move(out), {a, b},
        [op](const Storage& gout, Inputs in) {
          const auto g = gout.template span<T>();
          const auto& ia = in[0];
          const auto& ib = in[1];
          if (wants_grad(ia)) {
            auto ga = grad_of<T>(*ia);
            const auto yb = ib->data.template span<T>();
            for (std::size_t i = 0; i < g.size(); ++i) {
              ga[i] += op == Binary::mul ? g[i] * yb[i] : g[i];
            }
          }
          if (wants_grad(ib)) {
            auto gb = grad_of<T>(*ib);
            const auto xa = ia->data.template span<T>();
            for (std::size_t i = 0; i < g.size(); ++i) {
              switch (op) {
                case Binary::add: gb[i] += g[i]; break;
                case Binary::sub: gb[i] -= g[i]; break;
                case Binary::mul: gb[i] += g[i] * xa[i]; break;
              }
            }
          }
        });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(Primitive::add, Binary::add, a, b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(Primitive::sub, Binary::sub, a, b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(Primitive::mul, Binary::mul, a, b);
}

Tensor mul_scalar(const Tensor& a, double s) {
  require_defined("mul_scalar", a);
  return dispatch_dtype(a.dtype(), [&]<typename T>() {
    const auto x = a.data<T>();
    const T k = static_cast<T>(s);
    Storage out(a.dtype(), x.size());
    auto o = out.template span<T>();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] * k;
    return detail::record(Primitive::mul_scalar, a.shape(), std::move(out), {a},
                          [k](const Storage& gout, Inputs in) {
                            const auto g = gout.template span<T>();
                            auto gx = grad_of<T>(*in[0]);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              gx[i] += g[i] * k;
                            }
                          });
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined("add_bias", x);
  require_defined("add_bias", bias);
  require_same_dtype("add_bias", x, bias);
  if (x.rank() < 2) {
    throw DimensionError("add_bias: input must have rank >= 2, got " +
                         shape_str(x.shape()));
  }
  require_rank("add_bias", bias, 1);
  if (bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_bias: bias axis 0 = " + std::to_string(bias.dim(0)) +
                         " does not match input axis 1 = " +
                         std::to_string(x.dim(1)));
  }
  const std::size_t outer = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.numel() / (outer * channels);
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto xv = x.data<T>();
    const auto bv = bias.data<T>();
    Storage out(x.dtype(), xv.size());
    auto o = out.template span<T>();
    for (std::size_t b = 0; b < outer; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) o[base + i] = xv[base + i] + bv[c];
      }
    }
    return detail::record(
        Primitive::add_bias, x.shape(), std::move(out), {x, bias},
        [outer, channels, inner](const Storage& gout, Inputs in) {
          const auto g = gout.template span<T>();
          if (wants_grad(in[0])) {
            auto gx = grad_of<T>(*in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
          }
          if (wants_grad(in[1])) {
            auto gb = grad_of<T>(*in[1]);
            for (std::size_t b = 0; b < outer; ++b) {
              for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t base = (b * channels + c) * inner;
                T acc = 0;
                for (std::size_t i = 0; i < inner; ++i) acc += g[base + i];
                gb[c] += acc;
              }
            }
          }
        });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  require_same_dtype("matmul", a, b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: left axis 1 = " + std::to_string(a.dim(1)) +
                         " does not match right axis 0 = " +
                         std::to_string(b.dim(0)));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  return dispatch_dtype(a.dtype(), [&]<typename T>() {
    Storage out(a.dtype(), static_cast<std::size_t>(m * n));
    gemm_forward<T>(out.template span<T>().data(), a.data<T>().data(), b.data<T>().data(), m,
                    k, n);
    return detail::record(
        Primitive::matmul, Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b},
        [m, k, n](const Storage& gout, Inputs in) {
          ConstMapMat<T> g(gout.template span<T>().data(), m, n);
          if (wants_grad(in[0])) {
            MapMat<T>(grad_of<T>(*in[0]).data(), m, k).noalias() +=
                g * ConstMapMat<T>(in[1]->data.template span<T>().data(), k, n)
                        .transpose();
          }
          if (wants_grad(in[1])) {
            MapMat<T>(grad_of<T>(*in[1]).data(), k, n).noalias() +=
                ConstMapMat<T>(in[0]->data.template span<T>().data(), m, k)
                    .transpose() *
                g;
          }
        });
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM over the whole batch.

namespace {

struct ConvGeom {
  std::size_t batch, in_c, h, w, out_c, k, stride, pad, out_h, out_w;
  std::size_t patch() const { return in_c * k * k; }
  std::size_t plane() const { return out_h * out_w; }
  std::size_t columns() const { return batch * plane(); }
};

// Output columns [lo, hi) whose input column ox * stride + k - pad is inside [0, w).
struct Span1 {
  std::size_t lo, hi;
};

inline Span1 valid_range(std::size_t out, std::size_t stride, std::size_t k, std::size_t pad,
                         std::size_t w) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + k - pad < w) ++hi;
  return {lo, hi};
}

// cols is [patch x columns], row r = (c, ky, kx), column = b * plane + pixel.
template <class T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const std::size_t ncols = g.columns();
  parallel_for(g.batch, 1, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      for (std::size_t c = 0; c < g.in_c; ++c) {
        const T* img = x + (b * g.in_c + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const Span1 ys = valid_range(g.out_h, g.stride, ky, g.pad, g.h);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const Span1 xs = valid_range(g.out_w, g.stride, kx, g.pad, g.w);
            const std::size_t r = (c * g.k + ky) * g.k + kx;
            T* dst = cols + r * ncols + b * g.plane();
            std::fill(dst, dst + ys.lo * g.out_w, T(0));
            for (std::size_t oy = ys.lo; oy < ys.hi; ++oy) {
              T* row = dst + oy * g.out_w;
              const T* src = img + (oy * g.stride + ky - g.pad) * g.w;
              std::fill(row, row + xs.lo, T(0));
              if (xs.lo < xs.hi) {
                if (g.stride == 1) {
                  std::copy(src + (xs.lo + kx - g.pad), src + (xs.hi + kx - g.pad), row + xs.lo);
                } else {
                  for (std::size_t ox = xs.lo; ox < xs.hi; ++ox) {
                    row[ox] = src[ox * g.stride + kx - g.pad];
                  }
                }
              }
              std::fill(row + xs.hi, row + g.out_w, T(0));
            }
            std::fill(dst + ys.hi * g.out_w, dst + g.plane(), T(0));
          }
        }
      }
    }
  });
}

template <class T>
void col2im(const ConvGeom& g, const T* cols, T* dx) {
  const std::size_t ncols = g.columns();
  parallel_for(g.batch, 1, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      for (std::size_t c = 0; c < g.in_c; ++c) {
        T* img = dx + (b * g.in_c + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const Span1 ys = valid_range(g.out_h, g.stride, ky, g.pad, g.h);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const Span1 xs = valid_range(g.out_w, g.stride, kx, g.pad, g.w);
            const std::size_t r = (c * g.k + ky) * g.k + kx;
            const T* src = cols + r * ncols + b * g.plane();
            for (std::size_t oy = ys.lo; oy < ys.hi; ++oy) {
              const T* row = src + oy * g.out_w;
              T* dst = img + (oy * g.stride + ky - g.pad) * g.w;
              for (std::size_t ox = xs.lo; ox < xs.hi; ++ox) {
                dst[ox * g.stride + kx - g.pad] += row[ox];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  require_defined("conv2d", input);
  require_defined("conv2d", kernel);
  require_same_dtype("conv2d", input, kernel);
  require_rank("conv2d", input, 4);
  require_rank("conv2d", kernel, 4);
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (kernel.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: input axis 1 (channels) = " +
                         std::to_string(input.dim(1)) +
                         " does not match kernel axis 1 = " +
                         std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError("conv2d: kernel axes 2 and 3 must be equal, got " +
                         shape_str(kernel.shape()));
  }
  ConvGeom g{};
  g.batch = input.dim(0);
  g.in_c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.out_c = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw DimensionError("conv2d: spatial axes 2,3 of input " +
                         shape_str(input.shape()) + " smaller than kernel " +
                         std::to_string(g.k));
  }
  g.out_h = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.out_w = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias) {
    require_same_dtype("conv2d", input, bias);
    require_rank("conv2d", bias, 1);
    if (bias.dim(0) != g.out_c) {
      throw DimensionError("conv2d: bias axis 0 = " + std::to_string(bias.dim(0)) +
                           " does not match kernel axis 0 = " +
                           std::to_string(g.out_c));
    }
  }

  return dispatch_dtype(input.dtype(), [&]<typename T>() {
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto ncols = static_cast<Eigen::Index>(g.columns());
    const auto oc = static_cast<Eigen::Index>(g.out_c);
    // the column matrix is kept for the kernel gradient
    std::shared_ptr<T[]> cols(new T[g.patch() * g.columns()]);
    im2col<T>(g, input.data<T>().data(), cols.get());
    std::unique_ptr<T[]> result(new T[g.out_c * g.columns()]);
    gemm_forward<T>(result.get(), kernel.data<T>().data(), cols.get(), oc, patch, ncols);
    if (!grad_enabled() || !kernel.requires_grad()) cols.reset();

    Storage out(input.dtype(), g.batch * g.out_c * g.plane());
    auto o = out.template span<T>();
    const auto bv = has_bias ? bias.data<T>() : std::span<const T>{};
    const std::size_t plane = g.plane();
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.out_c; ++c) {
        const T* src = result.get() + c * g.columns() + b * plane;
        T* dst = o.data() + (b * g.out_c + c) * plane;
        const T shift = has_bias ? bv[c] : T(0);
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + shift;
      }
    }

    std::vector<Tensor> inputs{input, kernel};
    if (has_bias) inputs.push_back(bias);
    return detail::record(
        Primitive::conv2d, Shape{g.batch, g.out_c, g.out_h, g.out_w},
        std::move(out), std::move(inputs),
        [g, has_bias, cols](const Storage& gout, Inputs in) {
          const auto patch = static_cast<Eigen::Index>(g.patch());
          const auto ncols = static_cast<Eigen::Index>(g.columns());
          const auto oc = static_cast<Eigen::Index>(g.out_c);
          const std::size_t plane = g.plane();
          const auto go = gout.template span<T>();
          std::unique_ptr<T[]> gmat(new T[g.out_c * g.columns()]);
          for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t c = 0; c < g.out_c; ++c) {
              std::copy_n(go.data() + (b * g.out_c + c) * plane, plane,
                          gmat.get() + c * g.columns() + b * plane);
            }
          }
          ConstMapMat<T> gm(gmat.get(), oc, ncols);
          if (has_bias && wants_grad(in[2])) {
            auto gb = grad_of<T>(*in[2]);
            for (std::size_t c = 0; c < g.out_c; ++c) {
              T acc = 0;
              const T* row = gmat.get() + c * g.columns();
              for (std::size_t i = 0; i < g.columns(); ++i) acc += row[i];
              gb[c] += acc;
            }
          }
          if (wants_grad(in[1])) {
            MapMat<T>(grad_of<T>(*in[1]).data(), oc, patch).noalias() +=
                gm * ConstMapMat<T>(cols.get(), patch, ncols).transpose();
          }
          if (wants_grad(in[0])) {
            std::unique_ptr<T[]> dcols(new T[g.patch() * g.columns()]);
            MapMat<T>(dcols.get(), patch, ncols).noalias() =
                ConstMapMat<T>(in[1]->data.template span<T>().data(), oc, patch)
                    .transpose() *
                gm;
            col2im<T>(g, dcols.get(), grad_of<T>(*in[0]).data());
          }
        });
  });
}

// ---------------------------------------------------------------------------
// Activations, pooling, shape

Tensor relu(const Tensor& x) {
  require_defined("relu", x);
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    Storage out(x.dtype(), v.size());
    auto o = out.template span<T>();
    for (std::size_t i = 0; i < v.size(); ++i) o[i] = v[i] > T(0) ? v[i] : T(0);
    return detail::record(Primitive::relu, x.shape(), std::move(out), {x},
                          [](const Storage& gout, Inputs in) {
                            const auto g = gout.template span<T>();
                            const auto v = in[0]->data.template span<T>();
                            auto gx = grad_of<T>(*in[0]);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              if (v[i] > T(0)) gx[i] += g[i];
                            }
                          });
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_defined("global_avg_pool", x);
  require_rank("global_avg_pool", x, 4);
  const std::size_t bc = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    Storage out(x.dtype(), bc);
    auto o = out.template span<T>();
    for (std::size_t i = 0; i < bc; ++i) {
      T acc = 0;
      for (std::size_t p = 0; p < plane; ++p) acc += v[i * plane + p];
      o[i] = acc / static_cast<T>(plane);
    }
    return detail::record(
        Primitive::global_avg_pool, Shape{x.dim(0), x.dim(1)}, std::move(out), {x},
        [bc, plane](const Storage& gout, Inputs in) {
          const auto g = gout.template span<T>();
          auto gx = grad_of<T>(*in[0]);
          for (std::size_t i = 0; i < bc; ++i) {
            const T share = g[i] / static_cast<T>(plane);
            for (std::size_t p = 0; p < plane; ++p) gx[i * plane + p] += share;
          }
        });
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_defined("max_pool2d", x);
  require_rank("max_pool2d", x, 4);
  if (kernel == 0 || stride == 0) {
    throw ContractError("max_pool2d: kernel and stride must be positive");
  }
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  if (h < kernel || w < kernel) {
    throw DimensionError("max_pool2d: spatial axes 2,3 of " + shape_str(x.shape()) +
                         " smaller than kernel " + std::to_string(kernel));
  }
  const std::size_t oh = (h - kernel) / stride + 1;
  const std::size_t ow = (w - kernel) / stride + 1;
  const std::size_t planes = x.dim(0) * x.dim(1);
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    Storage out(x.dtype(), planes * oh * ow);
    auto o = out.template span<T>();
    std::vector<std::size_t> argmax(o.size());
    for (std::size_t pl = 0; pl < planes; ++pl) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = pl * h * w + (oy * stride) * w + ox * stride;
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const std::size_t idx =
                  pl * h * w + (oy * stride + ky) * w + ox * stride + kx;
              if (v[idx] > v[best]) best = idx;  // strict: lowest index wins ties
            }
          }
          const std::size_t oi = (pl * oh + oy) * ow + ox;
          o[oi] = v[best];
          argmax[oi] = best;
        }
      }
    }
    return detail::record(Primitive::max_pool2d,
                          Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                          [argmax = std::move(argmax)](const Storage& gout, Inputs in) {
                            const auto g = gout.template span<T>();
                            auto gx = grad_of<T>(*in[0]);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              gx[argmax[i]] += g[i];
                            }
                          });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    return detail::record(Primitive::reshape, std::move(shape), x.storage(), {x},
                          [](const Storage& gout, Inputs in) {
                            const auto g = gout.template span<T>();
                            auto gx = grad_of<T>(*in[0]);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                          });
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  require_defined("log_softmax", x);
  if (axis >= x.rank()) {
    throw DimensionError("log_softmax: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(x.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    Storage out(x.dtype(), v.size());
    auto o = out.template span<T>();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * n * inner + b;
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (v[base + i * inner] > v[base + arg * inner]) arg = i;
        }
        const T mx = v[base + arg * inner];
        // The max term contributes exactly 1; log1p keeps tiny tails exact.
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i != arg) acc += std::exp(static_cast<double>(v[base + i * inner] - mx));
        }
        const T tail = static_cast<T>(std::log1p(acc));
        for (std::size_t i = 0; i < n; ++i) {
          o[base + i * inner] = (v[base + i * inner] - mx) - tail;
        }
      }
    }
    Storage saved = out;
    return detail::record(
        Primitive::log_softmax, x.shape(), std::move(out), {x},
        [saved = std::move(saved), outer, inner, n](const Storage& gout, Inputs in) {
          const auto g = gout.template span<T>();
          const auto y = saved.template span<T>();
          auto gx = grad_of<T>(*in[0]);
          for (std::size_t a = 0; a < outer; ++a) {
            for (std::size_t b = 0; b < inner; ++b) {
              const std::size_t base = a * n * inner + b;
              T total = 0;
              for (std::size_t i = 0; i < n; ++i) total += g[base + i * inner];
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = base + i * inner;
                gx[k] += g[k] - std::exp(y[k]) * total;
              }
            }
          }
        });
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> cols) {
  require_defined("gather_rows", x);
  require_rank("gather_rows", x, 2);
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.dim(1);
  if (cols.size() != rows) {
    throw DimensionError("gather_rows: " + std::to_string(cols.size()) +
                         " indices for axis 0 of size " + std::to_string(rows));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (cols[r] >= width) {
      throw ContractError("gather_rows: index " + std::to_string(cols[r]) +
                          " at row " + std::to_string(r) + " out of range for axis 1 = " +
                          std::to_string(width));
    }
  }
  std::vector<std::size_t> picks(cols.begin(), cols.end());
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    Storage out(x.dtype(), rows);
    auto o = out.template span<T>();
    for (std::size_t r = 0; r < rows; ++r) o[r] = v[r * width + picks[r]];
    return detail::record(Primitive::gather_rows, Shape{rows}, std::move(out), {x},
                          [picks = std::move(picks), width](const Storage& gout,
                                                            Inputs in) {
                            const auto g = gout.template span<T>();
                            auto gx = grad_of<T>(*in[0]);
                            for (std::size_t r = 0; r < g.size(); ++r) {
                              gx[r * width + picks[r]] += g[r];
                            }
                          });
  });
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined("index_rows", x);
  if (x.rank() < 1) throw DimensionError("index_rows: input must have rank >= 1");
  const std::size_t n = x.dim(0);
  const std::size_t row_size = n == 0 ? 0 : x.numel() / n;
  for (std::size_t r : rows) {
    if (r >= n) {
      throw ContractError("index_rows: row " + std::to_string(r) +
                          " out of range for axis 0 = " + std::to_string(n));
    }
  }
  std::vector<std::size_t> picks(rows.begin(), rows.end());
  Shape shape = x.shape();
  shape[0] = picks.size();
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    Storage out(x.dtype(), picks.size() * row_size);
    auto o = out.template span<T>();
    for (std::size_t i = 0; i < picks.size(); ++i) {
      std::copy_n(v.data() + picks[i] * row_size, row_size, o.data() + i * row_size);
    }
    return detail::record(
        Primitive::index_rows, std::move(shape), std::move(out), {x},
        [picks = std::move(picks), row_size](const Storage& gout, Inputs in) {
          const auto g = gout.template span<T>();
          auto gx = grad_of<T>(*in[0]);
          for (std::size_t i = 0; i < picks.size(); ++i) {
            for (std::size_t j = 0; j < row_size; ++j) {
              gx[picks[i] * row_size + j] += g[i * row_size + j];
            }
          }
        });
  });
}

namespace {

Tensor reduce(Primitive kind, const Tensor& x, bool mean) {
  require_defined(primitive_name(kind), x);
  if (x.numel() == 0) {
    throw DimensionError(std::string(primitive_name(kind)) + ": empty input");
  }
  const double scale = mean ? 1.0 / static_cast<double>(x.numel()) : 1.0;
  return dispatch_dtype(x.dtype(), [&]<typename T>() {
    const auto v = x.data<T>();
    double acc = 0.0;
    for (T e : v) acc += static_cast<double>(e);
    Storage out(x.dtype(), 1);
    out.set(0, acc * scale);
    return detail::record(kind, Shape{}, std::move(out), {x},
                          [scale](const Storage& gout, Inputs in) {
                            const T g = gout.template span<T>()[0] * static_cast<T>(scale);
                            auto gx = grad_of<T>(*in[0]);
                            for (T& e : gx) e += g;
                          });
  });
}

}  // namespace

Tensor reduce_sum(const Tensor& x) { return reduce(Primitive::reduce_sum, x, false); }

Tensor reduce_mean(const Tensor& x) { return reduce(Primitive::reduce_mean, x, true); }

Tensor kl_div(const Tensor& teacher_log_probs, const Tensor& student_log_probs) {
  require_defined("kl_div", teacher_log_probs);
  require_defined("kl_div", student_log_probs);
  require_same_shape("kl_div", teacher_log_probs, student_log_probs);
  Tensor teacher = teacher_log_probs.detach();
  return dispatch_dtype(teacher.dtype(), [&]<typename T>() {
    const auto t = teacher.data<T>();
    const auto s = student_log_probs.data<T>();
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double diff = static_cast<double>(t[i]) - static_cast<double>(s[i]);
      if (diff != 0.0) acc += std::exp(static_cast<double>(t[i])) * diff;
    }
    Storage out(teacher.dtype(), 1);
    out.set(0, acc);
    return detail::record(Primitive::kl_div, Shape{}, std::move(out),
                          {teacher, student_log_probs},
                          [](const Storage& gout, Inputs in) {
                            if (!wants_grad(in[1])) return;
                            const T g = gout.template span<T>()[0];
                            const auto t = in[0]->data.template span<T>();
                            auto gs = grad_of<T>(*in[1]);
                            for (std::size_t i = 0; i < t.size(); ++i) {
                              gs[i] -= g * std::exp(t[i]);
                            }
                          });
  });
}

Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs,
                       const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi) {
      throw ContractError(std::string(primitive_name(kind)) + ": expected " +
                          std::to_string(lo) +
                          (lo == hi ? "" : "-" + std::to_string(hi)) +
                          " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case Primitive::add: need(2, 2); return add(inputs[0], inputs[1]);
    case Primitive::sub: need(2, 2); return sub(inputs[0], inputs[1]);
    case Primitive::mul: need(2, 2); return mul(inputs[0], inputs[1]);
    case Primitive::mul_scalar: need(1, 1); return mul_scalar(inputs[0], attrs.scalar);
    case Primitive::add_bias: need(2, 2); return add_bias(inputs[0], inputs[1]);
    case Primitive::matmul: need(2, 2); return matmul(inputs[0], inputs[1]);
    case Primitive::conv2d:
      need(2, 3);
      return conv2d(inputs[0], inputs[1], inputs.size() == 3 ? inputs[2] : Tensor{},
                    attrs.stride, attrs.padding);
    case Primitive::relu: need(1, 1); return relu(inputs[0]);
    case Primitive::global_avg_pool: need(1, 1); return global_avg_pool(inputs[0]);
    case Primitive::max_pool2d:
      need(1, 1);
      return max_pool2d(inputs[0], attrs.kernel, attrs.stride);
    case Primitive::reshape: need(1, 1); return reshape(inputs[0], attrs.shape);
    case Primitive::log_softmax: need(1, 1); return log_softmax(inputs[0], attrs.axis);
    case Primitive::gather_rows: need(1, 1); return gather_rows(inputs[0], attrs.indices);
    case Primitive::index_rows: need(1, 1); return index_rows(inputs[0], attrs.indices);
    case Primitive::reduce_mean: need(1, 1); return reduce_mean(inputs[0]);
    case Primitive::reduce_sum: need(1, 1); return reduce_sum(inputs[0]);
    case Primitive::kl_div: need(2, 2); return kl_div(inputs[0], inputs[1]);
  }
  throw ContractError("apply_primitive: unknown primitive");
}

}  // namespace hsakd
