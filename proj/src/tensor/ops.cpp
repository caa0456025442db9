#include "supra/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "tensor_impl.hpp"

namespace supra {

using detail::grad_of;
using detail::ImplPtr;
using detail::make_result;

namespace {

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  }
}

// dfdx(x, y) receives the input and the saved output.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF dfdx) {
  auto x = a.values();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  std::vector<float> saved(out);
  return make_result(op, a.shape(), std::move(out), {&a},
                     [dfdx, saved = std::move(saved)](std::span<const float> g,
                                                                         std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       const auto& xv = in[0]->data;
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], saved[i]);
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  auto x = a.values();
  auto y = b.values();
  const std::size_t n = y.size();
  std::vector<float> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); i += n) {
    for (std::size_t j = 0; j < n; ++j) out[i + j] += y[j];
  }
  return make_result("add", a.shape(), std::move(out), {&a, &b},
                     [n](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       auto gb = grad_of(in[1]);
                       if (gb.empty()) return;
                       for (std::size_t i = 0; i < g.size(); i += n) {
                         for (std::size_t j = 0; j < n; ++j) gb[j] += g[i + j];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  auto x = a.values();
  auto y = b.values();
  const std::size_t n = y.size();
  std::vector<float> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); i += n) {
    for (std::size_t j = 0; j < n; ++j) out[i + j] -= y[j];
  }
  return make_result("sub", a.shape(), std::move(out), {&a, &b},
                     [n](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       auto gb = grad_of(in[1]);
                       if (gb.empty()) return;
                       for (std::size_t i = 0; i < g.size(); i += n) {
                         for (std::size_t j = 0; j < n; ++j) gb[j] -= g[i + j];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  auto x = a.values();
  auto y = b.values();
  const std::size_t n = y.size();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); i += n) {
    for (std::size_t j = 0; j < n; ++j) out[i + j] = x[i + j] * y[j];
  }
  return make_result("mul", a.shape(), std::move(out), {&a, &b},
                     [n](std::span<const float> g, std::span<const ImplPtr> in) {
                       const auto& xv = in[0]->data;
                       const auto& yv = in[1]->data;
                       auto ga = grad_of(in[0]);
                       auto gb = grad_of(in[1]);
                       for (std::size_t i = 0; i < g.size(); i += n) {
                         for (std::size_t j = 0; j < n; ++j) {
                           if (!ga.empty()) ga[i + j] += g[i + j] * yv[j];
                           if (!gb.empty()) gb[j] += g[i + j] * xv[i + j];
                         }
                       }
                     });
}

Tensor add_scalar(const Tensor& a, float s) {
  auto x = a.values();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + s;
  return make_result("add_scalar", a.shape(), std::move(out), {&a},
                     [](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

Tensor mul_scalar(const Tensor& a, float s) {
  auto x = a.values();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return make_result("mul_scalar", a.shape(), std::move(out), {&a},
                     [s](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                     });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](float x) { return x > 0.0f ? x : 0.0f; },
               [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor gelu(const Tensor& a) {
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  constexpr float inv_sqrt2pi = 0.39894228040143268f;
  return unary(
      "gelu", a, [](float x) { return 0.5f * x * (1.0f + std::erf(x * inv_sqrt2)); },
      [](float x, float) {
        const float cdf = 0.5f * (1.0f + std::erf(x * inv_sqrt2));
        const float pdf = inv_sqrt2pi * std::exp(-0.5f * x * x);
        return cdf + x * pdf;
      });
}

Tensor clamp_max(const Tensor& a, float hi) {
  return unary("clamp_max", a, [hi](float x) { return x < hi ? x : hi; },
               [hi](float x, float) { return x < hi ? 1.0f : 0.0f; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  return make_result("sum", {}, {static_cast<float>(acc)}, {&a},
                     [](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (float& v : ga) v += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  const float inv = 1.0f / static_cast<float>(a.numel());
  return make_result("mean", {}, {static_cast<float>(acc / static_cast<double>(a.numel()))}, {&a},
                     [inv](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (float& v : ga) v += g[0] * inv;
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto x = a.values();
  return make_result("reshape", std::move(shape), std::vector<float>(x.begin(), x.end()), {&a},
                     [](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

namespace {

// Copies `src` (shape `s`) into `dst` with axes i and j swapped. `inverse`
// scatters back, i.e. treats `src` as already swapped and accumulates.
void swap_axes(const float* src, float* dst, const Shape& s, std::size_t i, std::size_t j, bool accumulate) {
  const std::size_t r = s.size();
  std::vector<std::size_t> in_stride(r, 1), out_stride(r, 1);
  Shape os = s;
  std::swap(os[i], os[j]);
  for (std::size_t k = r; k-- > 1;) {
    in_stride[k - 1] = in_stride[k] * s[k];
    out_stride[k - 1] = out_stride[k] * os[k];
  }
  // Stride in the output for each input axis.
  std::vector<std::size_t> map_stride = out_stride;
  std::swap(map_stride[i], map_stride[j]);
  std::vector<std::size_t> idx(r, 0);
  const std::size_t n = shape_numel(s);
  std::size_t out_off = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    if (accumulate) {
      dst[out_off] += src[lin];
    } else {
      dst[out_off] = src[lin];
    }
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      out_off += map_stride[k];
      if (idx[k] < s[k]) break;
      out_off -= map_stride[k] * s[k];
      idx[k] = 0;
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  const std::size_t i = norm_axis(axis0, a.rank(), "transpose");
  const std::size_t j = norm_axis(axis1, a.rank(), "transpose");
  Shape os = a.shape();
  std::swap(os[i], os[j]);
  std::vector<float> out(a.numel());
  swap_axes(a.values().data(), out.data(), a.shape(), i, j, false);
  return make_result("transpose", os, std::move(out), {&a},
                     [i, j, os](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       swap_axes(g.data(), ga.data(), os, i, j, true);
                     });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, a.rank(), "slice");
  const auto sp = split_at(a.shape(), ax);
  if (length == 0 || start + length > sp.len) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for axis of size " + std::to_string(sp.len));
  }
  Shape os = a.shape();
  os[ax] = length;
  auto x = a.values();
  std::vector<float> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const float* src = x.data() + (o * sp.len + start) * sp.inner;
    std::copy(src, src + length * sp.inner, out.data() + o * length * sp.inner);
  }
  return make_result("slice", std::move(os), std::move(out), {&a},
                     [sp, start, length](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto ga = grad_of(in[0]);
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         float* dst = ga.data() + (o * sp.len + start) * sp.inner;
                         const float* src = g.data() + o * length * sp.inner;
                         for (std::size_t k = 0; k < length * sp.inner; ++k) dst[k] += src[k];
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = norm_axis(axis, parts[0].rank(), "concat");
  Shape ref = parts[0].shape();
  ref[ax] = 0;
  Shape os = ref;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != os.size()) throw ShapeError("concat: rank mismatch " + shape_str(s));
    lens.push_back(s[ax]);
    s[ax] = 0;
    if (s != ref) throw ShapeError("concat: incompatible shape " + shape_str(p.shape()));
    os[ax] += lens.back();
  }
  const auto sp = split_at(os, ax);
  std::vector<float> out(shape_numel(os));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy(x.data() + o * lens[p] * sp.inner, x.data() + (o + 1) * lens[p] * sp.inner,
                out.data() + (o * sp.len + offset) * sp.inner);
    }
    offset += lens[p];
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return make_result("concat", std::move(os), std::move(out), inputs,
                     [sp, lens](std::span<const float> g, std::span<const ImplPtr> in) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         auto gp = grad_of(in[p]);
                         if (!gp.empty()) {
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                             const float* src = g.data() + (o * sp.len + off) * sp.inner;
                             float* dst = gp.data() + o * lens[p] * sp.inner;
                             for (std::size_t k = 0; k < lens[p] * sp.inner; ++k) dst[k] += src[k];
                           }
                         }
                         off += lens[p];
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  if (indices.empty()) throw ShapeError("embedding: no indices");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  auto t = table.values();
  std::vector<float> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw ShapeError("embedding: index " + std::to_string(indices[i]) + " out of range for " + std::to_string(rows) +
                       " rows");
    }
    std::copy(t.data() + indices[i] * d, t.data() + (indices[i] + 1) * d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result("embedding", {indices.size(), d}, std::move(out), {&table},
                     [idx = std::move(idx), d](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto gt = grad_of(in[0]);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t k = 0; k < d; ++k) gt[idx[i] * d + k] += g[i * d + k];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  const bool shared_b = b.rank() == 2;
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  if (k != k2 || (!shared_b && batch_a != batch_b)) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = shape_numel(batch_a);
  Shape os = batch_a;
  os.push_back(m);
  os.push_back(n);
  std::vector<float> out(batch * m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t s = 0; s < batch; ++s) {
    kernels::gemm_nn(av.data() + s * m * k, bv.data() + (shared_b ? 0 : s * k * n), out.data() + s * m * n, m, k, n,
                     false);
  }
  return make_result("matmul", std::move(os), std::move(out), {&a, &b},
                     [batch, m, k, n, shared_b](std::span<const float> g, std::span<const ImplPtr> in) {
                       const auto& ad = in[0]->data;
                       const auto& bd = in[1]->data;
                       auto ga = grad_of(in[0]);
                       auto gb = grad_of(in[1]);
                       std::vector<float> bt;
                       if (!ga.empty()) bt.resize(k * n);
                       for (std::size_t s = 0; s < batch; ++s) {
                         const float* gs = g.data() + s * m * n;
                         const float* bs = bd.data() + (shared_b ? 0 : s * k * n);
                         if (!ga.empty()) {
                           if (!shared_b || s == 0) kernels::transpose2d(bs, bt.data(), k, n);
                           kernels::gemm_nn(gs, bt.data(), ga.data() + s * m * k, m, n, k, true);
                         }
                         if (!gb.empty()) {
                           kernels::gemm_tn_acc(ad.data() + s * m * k, gs, gb.data() + (shared_b ? 0 : s * k * n), m,
                                                k, n);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = out_dim;
  std::vector<float> out(rows * out_dim);
  kernels::gemm_nn(x.values().data(), weight.values().data(), out.data(), rows, in, out_dim, false);
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bv[j];
    }
  }
  detail::BackwardFn fn = [rows, in, out_dim](std::span<const float> g, std::span<const ImplPtr> inputs) {
    auto gx = grad_of(inputs[0]);
    auto gw = grad_of(inputs[1]);
    if (!gx.empty()) {
      std::vector<float> wt(in * out_dim);
      kernels::transpose2d(inputs[1]->data.data(), wt.data(), in, out_dim);
      kernels::gemm_nn(g.data(), wt.data(), gx.data(), rows, out_dim, in, true);
    }
    if (!gw.empty()) kernels::gemm_tn_acc(inputs[0]->data.data(), g.data(), gw.data(), rows, in, out_dim);
    if (inputs.size() > 2) {
      auto gb = grad_of(inputs[2]);
      if (!gb.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
        }
      }
    }
  };
  if (bias.defined()) return make_result("linear", std::move(os), std::move(out), {&x, &weight, &bias}, fn);
  return make_result("linear", std::move(os), std::move(out), {&x, &weight}, fn);
}

namespace {

// Softmax along an axis expressed as (outer, len, inner) strides.
void softmax_rows(const float* x, float* y, const AxisSplit& sp, bool log_space) {
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const float* xr = x + o * sp.len * sp.inner + in;
      float* yr = y + o * sp.len * sp.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < sp.len; ++i) mx = std::max(mx, xr[i * sp.inner]);
      float total = 0.0f;
      for (std::size_t i = 0; i < sp.len; ++i) total += std::exp(xr[i * sp.inner] - mx);
      if (log_space) {
        const float lse = std::log(total);
        for (std::size_t i = 0; i < sp.len; ++i) yr[i * sp.inner] = xr[i * sp.inner] - mx - lse;
      } else {
        const float inv = 1.0f / total;
        for (std::size_t i = 0; i < sp.len; ++i) yr[i * sp.inner] = std::exp(xr[i * sp.inner] - mx) * inv;
      }
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const auto sp = split_at(x.shape(), norm_axis(axis, x.rank(), "softmax"));
  std::vector<float> out(x.numel());
  softmax_rows(x.values().data(), out.data(), sp, false);
  std::vector<float> y(out);
  return make_result("softmax", x.shape(), std::move(out), {&x},
                     [sp, y = std::move(y)](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto gx = grad_of(in[0]);
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t q = 0; q < sp.inner; ++q) {
                           const std::size_t base = o * sp.len * sp.inner + q;
                           float dot = 0.0f;
                           for (std::size_t i = 0; i < sp.len; ++i) {
                             dot += g[base + i * sp.inner] * y[base + i * sp.inner];
                           }
                           for (std::size_t i = 0; i < sp.len; ++i) {
                             const std::size_t p = base + i * sp.inner;
                             gx[p] += y[p] * (g[p] - dot);
                           }
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const auto sp = split_at(x.shape(), norm_axis(axis, x.rank(), "log_softmax"));
  std::vector<float> out(x.numel());
  softmax_rows(x.values().data(), out.data(), sp, true);
  std::vector<float> y(out);
  return make_result("log_softmax", x.shape(), std::move(out), {&x},
                     [sp, y = std::move(y)](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto gx = grad_of(in[0]);
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t q = 0; q < sp.inner; ++q) {
                           const std::size_t base = o * sp.len * sp.inner + q;
                           float total = 0.0f;
                           for (std::size_t i = 0; i < sp.len; ++i) total += g[base + i * sp.inner];
                           for (std::size_t i = 0; i < sp.len; ++i) {
                             const std::size_t p = base + i * sp.inner;
                             gx[p] += g[p] - std::exp(y[p]) * total;
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (!(eps > 0.0f)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t d = x.dim(-1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                     " do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(rows);  // 0 marks a degenerate (zero-variance) row
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xv.data() + r * d;
    float mu = 0.0f;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<float>(d);
    float var = 0.0f;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<float>(d);
    const float is = var < eps ? 0.0f : 1.0f / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const float h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const float> g,
                                                                      std::span<const ImplPtr> in) {
        auto gx = grad_of(in[0]);
        auto gg = grad_of(in[1]);
        auto gb = grad_of(in[2]);
        const auto& gain_v = in[1]->data;
        std::vector<float> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const float* gr = g.data() + r * d;
          const float* hr = xhat.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            if (!gg.empty()) gg[j] += gr[j] * hr[j];
            if (!gb.empty()) gb[j] += gr[j];
          }
          if (gx.empty() || inv_std[r] == 0.0f) continue;
          float mean_dh = 0.0f, mean_dh_h = 0.0f;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = gr[j] * gain_v[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * hr[j];
          }
          mean_dh /= static_cast<float>(d);
          mean_dh_h /= static_cast<float>(d);
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
        }
      });
}

CumMaxResult cumulative_max_time(const Tensor& x, std::span<const float> initial) {
  if (x.rank() != 2) throw ShapeError("cumulative_max_time: expected [T, D], got " + shape_str(x.shape()));
  const std::size_t t_len = x.dim(0), d = x.dim(1);
  if (!initial.empty() && initial.size() != d) {
    throw ShapeError("cumulative_max_time: initial state of size " + std::to_string(initial.size()) +
                     " for width " + std::to_string(d));
  }
  auto xv = x.values();
  std::vector<float> out(x.numel());
  std::vector<std::int64_t> arg(x.numel());
  for (std::size_t j = 0; j < d; ++j) {
    float best = initial.empty() ? xv[j] : initial[j];
    std::int64_t best_t = initial.empty() ? 0 : -1;
    for (std::size_t t = 0; t < t_len; ++t) {
      const float v = xv[t * d + j];
      if (v > best) {
        best = v;
        best_t = static_cast<std::int64_t>(t);
      }
      out[t * d + j] = best;
      arg[t * d + j] = best_t;
    }
  }
  CumMaxResult result;
  result.argmax = arg;
  result.values = make_result("cumulative_max_time", x.shape(), std::move(out), {&x},
                              [d, arg = std::move(arg)](std::span<const float> g, std::span<const ImplPtr> in) {
                                auto gx = grad_of(in[0]);
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                  if (arg[i] >= 0) gx[static_cast<std::size_t>(arg[i]) * d + i % d] += g[i];
                                }
                              });
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const float> class_weights) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, C], got " + shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (targets.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                     std::to_string(b));
  }
  if (!class_weights.empty() && class_weights.size() != c) {
    throw ShapeError("cross_entropy: class weights of size " + std::to_string(class_weights.size()) + " for " +
                     std::to_string(c) + " classes");
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] != kIgnoreIndex && (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " outside [0, " +
                              std::to_string(c) + ")");
    }
  }
  std::vector<float> logp(logits.numel());
  softmax_rows(logits.values().data(), logp.data(), {b, c, 1}, true);
  std::vector<float> row_w(b, 0.0f);
  double total_w = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] == kIgnoreIndex) continue;
    const auto y = static_cast<std::size_t>(targets[i]);
    row_w[i] = class_weights.empty() ? 1.0f : class_weights[y];
    total_w += row_w[i];
    loss -= static_cast<double>(row_w[i]) * logp[i * c + y];
  }
  const float norm = total_w > 0.0 ? static_cast<float>(1.0 / total_w) : 0.0f;
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result("cross_entropy", {}, {static_cast<float>(loss) * norm}, {&logits},
                     [b, c, norm, tg = std::move(tg), row_w = std::move(row_w), logp = std::move(logp)](
                         std::span<const float> g, std::span<const ImplPtr> in) {
                       auto gl = grad_of(in[0]);
                       for (std::size_t i = 0; i < b; ++i) {
                         if (tg[i] == kIgnoreIndex) continue;
                         const float scale = g[0] * row_w[i] * norm;
                         for (std::size_t j = 0; j < c; ++j) {
                           const float p = std::exp(logp[i * c + j]);
                           gl[i * c + j] += scale * (p - (static_cast<int>(j) == tg[i] ? 1.0f : 0.0f));
                         }
                       }
                     });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  auto p = pred.values();
  auto t = target.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += static_cast<double>(p[i] - t[i]) * (p[i] - t[i]);
  const float n = static_cast<float>(p.size());
  std::vector<float> tv(t.begin(), t.end());
  return make_result("mse", {}, {static_cast<float>(acc / p.size())}, {&pred},
                     [n, tv = std::move(tv)](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto gp = grad_of(in[0]);
                       const auto& pv = in[0]->data;
                       for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * 2.0f * (pv[i] - tv[i]) / n;
                     });
}

Tensor dropout(const Tensor& x, float p, bool training, std::mt19937_64& rng) {
  if (p < 0.0f || p >= 1.0f) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0f) return x;
  const float scale = 1.0f / (1.0f - p);
  auto xv = x.values();
  std::vector<float> mask(xv.size());
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < p ? 0.0f : scale;
    out[i] = xv[i] * mask[i];
  }
  return make_result("dropout", x.shape(), std::move(out), {&x},
                     [mask = std::move(mask)](std::span<const float> g, std::span<const ImplPtr> in) {
                       auto gx = grad_of(in[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                     });
}

}  // namespace supra
