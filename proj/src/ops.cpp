// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "avsr/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

namespace avsr {

using detail::grad_of;
using detail::make_result;

namespace {

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("axis out of range");
  return axis;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// (outer, len, inner) decomposition around one axis.
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) r.outer *= s[static_cast<size_t>(i)];
    else if (i == axis) r.len = s[static_cast<size_t>(i)];
    else r.inner *= s[static_cast<size_t>(i)];
  }
  return r;
}

template <class F, class T>
Tensor<T> unary(const Tensor<T>& x, F f, std::type_identity_t<std::function<void(TensorNode<T>&)>> bw) {
  std::vector<T> out(x.vec().size());
  const auto& in = x.vec();
  for (size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, std::move(bw));
}

}  // namespace

// ---------------------------------------------------------------- gemm

void set_num_threads(int n) {
  if (n < 1) throw UsageError("thread count must be >= 1");
  openblas_set_num_threads(n);
}

int default_num_threads() {
  const char* env = std::getenv("AVSR_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string("AVSR_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<int>(n);
}

template <>
void gemm<float>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const float* a, const float* b,
                 float* c, float beta) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (int64_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
              static_cast<int>(n));
}

template <>
void gemm<double>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const double* a,
                  const double* b, double* c, double beta) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (int64_t i = 0; i < m * n; ++i) c[i] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
              static_cast<int>(n));
}

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.vec());
  const auto& bv = b.vec();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& self) {
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto& g = grad_of(*t);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.vec());
  const auto& bv = b.vec();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& self) {
    if (a.requires_grad()) {
      auto& g = grad_of(a);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_of(b);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.vec());
  const auto& bv = b.vec();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& self) {
    if (a.requires_grad()) {
      auto& g = grad_of(a);
      const auto& bv = b.vec();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_of(b);
      const auto& av = a.vec();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T v) { return v * s; }, [a, s](TensorNode<T>& self) {
    auto& g = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T v) { return v + s; }, [a](TensorNode<T>& self) {
    auto& g = grad_of(a);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const int64_t d = b.numel();
  if (x.dim(-1) != d) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(b.shape()));
  }
  std::vector<T> out(x.vec());
  const auto& bv = b.vec();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i % static_cast<size_t>(d)];
  return make_result(x.shape(), std::move(out), {x, b}, [x, b, d](TensorNode<T>& self) {
    if (x.requires_grad()) {
      auto& g = grad_of(x);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_of(b);
      for (size_t i = 0; i < self.grad.size(); ++i) g[i % static_cast<size_t>(d)] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  auto y = std::make_shared<std::vector<T>>(x.vec().size());
  for (size_t i = 0; i < y->size(); ++i) (*y)[i] = std::exp(x.vec()[i]);
  return make_result(x.shape(), std::vector<T>(*y), {x}, [x, y](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*y)[i];
  });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    const auto& xv = x.vec();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / xv[i];
  });
}

template <class T>
static T sigm(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return sigm(v); }, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    const auto& xv = x.vec();
    for (size_t i = 0; i < g.size(); ++i) {
      const T s = sigm(xv[i]);
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Tensor<T> swish(const Tensor<T>& x) {
  return unary(x, [](T v) { return v * sigm(v); }, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    const auto& xv = x.vec();
    for (size_t i = 0; i < g.size(); ++i) {
      const T s = sigm(xv[i]);
      g[i] += self.grad[i] * (s + xv[i] * s * (T(1) - s));
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    const auto& xv = x.vec();
    for (size_t i = 0; i < g.size(); ++i) g[i] += xv[i] > T(0) ? self.grad[i] : T(0);
  });
}

template <class T>
Tensor<T> glu(const Tensor<T>& x) {
  const int64_t d2 = x.dim(-1);
  if (d2 % 2 != 0) throw DimensionError("glu: odd last extent in " + shape_str(x.shape()));
  const int64_t d = d2 / 2;
  const int64_t rows = x.numel() / d2;
  Shape shape = x.shape();
  shape.back() = d;
  std::vector<T> out(static_cast<size_t>(rows * d));
  const auto& xv = x.vec();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < d; ++c) {
      out[r * d + c] = xv[r * d2 + c] * sigm(xv[r * d2 + d + c]);
    }
  }
  return make_result(shape, std::move(out), {x}, [x, rows, d, d2](TensorNode<T>& self) {
    auto& g = grad_of(x);
    const auto& xv = x.vec();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < d; ++c) {
        const T a = xv[r * d2 + c];
        const T s = sigm(xv[r * d2 + d + c]);
        const T go = self.grad[r * d + c];
        g[r * d2 + c] += go * s;
        g[r * d2 + d + c] += go * a * s * (T(1) - s);
      }
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.vec()) acc += v;
  return make_result<T>({1}, {acc}, {x}, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> dot_const(const Tensor<T>& x, const std::vector<T>& w) {
  if (static_cast<int64_t>(w.size()) != x.numel()) throw DimensionError("dot_const: size mismatch");
  T acc = T(0);
  for (size_t i = 0; i < w.size(); ++i) acc += x.vec()[i] * w[i];
  return make_result<T>({1}, {acc}, {x}, [x, w](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

template <class T>
Tensor<T> mean_trailing(const Tensor<T>& x, int count) {
  if (count < 1 || count >= x.rank()) throw ParameterError("mean_trailing: bad axis count");
  Shape out_shape(x.shape().begin(), x.shape().end() - count);
  const int64_t inner = x.numel() / shape_numel(out_shape);
  const int64_t outer = shape_numel(out_shape);
  std::vector<T> out(static_cast<size_t>(outer), T(0));
  const auto& xv = x.vec();
  for (int64_t o = 0; o < outer; ++o) {
    T acc = T(0);
    for (int64_t i = 0; i < inner; ++i) acc += xv[o * inner + i];
    out[o] = acc / static_cast<T>(inner);
  }
  return make_result(out_shape, std::move(out), {x}, [x, inner, outer](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t o = 0; o < outer; ++o) {
      const T go = self.grad[o] / static_cast<T>(inner);
      for (int64_t i = 0; i < inner; ++i) g[o * inner + i] += go;
    }
  });
}

// ---------------------------------------------------------------- layout

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), std::vector<T>(x.vec()), {x}, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw DimensionError("permute: rank mismatch");
  std::vector<bool> used(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || used[static_cast<size_t>(p)]) throw ParameterError("permute: invalid perm");
    used[static_cast<size_t>(p)] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(static_cast<size_t>(r));
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in[i + 1];
  std::vector<int64_t> src_stride(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = in[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  const int64_t n = x.numel();
  // Gather map: output flat index -> input flat index.
  auto index_map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t src = 0;
  for (int64_t o = 0; o < n; ++o) {
    (*index_map)[o] = src;
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[a] < out_shape[a]) {
        src += src_stride[a];
        break;
      }
      src -= src_stride[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  std::vector<T> out(static_cast<size_t>(n));
  const auto& xv = x.vec();
  for (int64_t o = 0; o < n; ++o) out[o] = xv[(*index_map)[o]];
  return make_result(out_shape, std::move(out), {x}, [x, index_map](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (size_t o = 0; o < self.grad.size(); ++o) g[(*index_map)[o]] += self.grad[o];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x, int a0, int a1) {
  const int r = x.rank();
  a0 = norm_axis(a0, r);
  a1 = norm_axis(a1, r);
  std::vector<int> perm(static_cast<size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a0], perm[a1]);
  return permute(x, perm);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ParameterError("concat: no inputs");
  const int r = xs[0].rank();
  axis = norm_axis(axis, r);
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.shape()[i] != xs[0].shape()[i]) {
        throw DimensionError("concat: " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
      }
    }
    out_shape[axis] += t.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (const auto& t : xs) {
    const int64_t len = t.shape()[axis];
    const auto& tv = t.vec();
    for (int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(tv.begin() + o * len * s.inner, len * s.inner,
                  out.begin() + (o * s.len + offset) * s.inner);
    }
    offset += len;
  }
  return make_result(out_shape, std::move(out), xs, [xs, s, axis](TensorNode<T>& self) {
    int64_t offset = 0;
    for (const auto& t : xs) {
      const int64_t len = t.shape()[axis];
      if (t.requires_grad()) {
        auto& g = grad_of(t);
        for (int64_t o = 0; o < s.outer; ++o) {
          for (int64_t i = 0; i < len * s.inner; ++i) {
            g[o * len * s.inner + i] += self.grad[(o * s.len + offset) * s.inner + i];
          }
        }
      }
      offset += len;
    }
  });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t length) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length <= 0 || start + length > s.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(static_cast<size_t>(s.outer * length * s.inner));
  const auto& xv = x.vec();
  for (int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + (o * s.len + start) * s.inner, length * s.inner,
                out.begin() + o * length * s.inner);
  }
  return make_result(out_shape, std::move(out), {x}, [x, s, start, length](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t i = 0; i < length * s.inner; ++i) {
        g[(o * s.len + start) * s.inner + i] += self.grad[o * length * s.inner + i];
      }
    }
  });
}

template <class T>
Tensor<T> pad_rows(const Tensor<T>& x, int64_t rows) {
  const int64_t n = x.dim(0);
  if (rows < n) throw DimensionError("pad_rows: target shorter than input");
  if (rows == n) return x;
  Shape shape = x.shape();
  shape[0] = rows;
  std::vector<T> out(static_cast<size_t>(shape_numel(shape)), T(0));
  std::copy(x.vec().begin(), x.vec().end(), out.begin());
  return make_result(shape, std::move(out), {x}, [x](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> subsample_rows(const Tensor<T>& x, int64_t stride) {
  if (stride < 1) throw ParameterError("subsample_rows: stride must be >= 1");
  const int64_t n = x.dim(0);
  const int64_t row = x.numel() / n;
  const int64_t m = (n + stride - 1) / stride;
  Shape shape = x.shape();
  shape[0] = m;
  std::vector<T> out(static_cast<size_t>(m * row));
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(x.vec().begin() + i * stride * row, row, out.begin() + i * row);
  }
  return make_result(shape, std::move(out), {x}, [x, m, row, stride](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t c = 0; c < row; ++c) g[i * stride * row + c] += self.grad[i * row + c];
    }
  });
}

// ---------------------------------------------------------------- matmul

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const int64_t m = a.dim(-2), p = a.dim(-1), p2 = b.dim(-2), q = b.dim(-1);
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  const bool shared_a = lead_a.empty() && !lead_b.empty();
  const bool shared_b = lead_b.empty();
  if (p != p2 || (!shared_a && !shared_b && lead_a != lead_b)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  }
  const Shape& lead = shared_a ? lead_b : lead_a;
  const int64_t batch = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(q);
  std::vector<T> out(static_cast<size_t>(batch * m * q), T(0));
  const T* ad = a.vec().data();
  const T* bd = b.vec().data();
  if (shared_b) {
    gemm<T>(false, false, batch * m, q, p, ad, bd, out.data());
  } else {
    for (int64_t i = 0; i < batch; ++i) {
      gemm<T>(false, false, m, q, p, shared_a ? ad : ad + i * m * p, bd + i * p * q,
              out.data() + i * m * q);
    }
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [a, b, m, p, q, batch, shared_a, shared_b](TensorNode<T>& self) {
                       const T* go = self.grad.data();
                       const T* ad = a.vec().data();
                       const T* bd = b.vec().data();
                       if (a.requires_grad()) {
                         T* ga = grad_of(a).data();
                         if (shared_b) {
                           gemm<T>(false, true, batch * m, p, q, go, bd, ga);
                         } else {
                           for (int64_t i = 0; i < batch; ++i) {
                             gemm<T>(false, true, m, p, q, go + i * m * q, bd + i * p * q,
                                     shared_a ? ga : ga + i * m * p);
                           }
                         }
                       }
                       if (b.requires_grad()) {
                         T* gb = grad_of(b).data();
                         if (shared_b) {
                           gemm<T>(true, false, p, q, batch * m, ad, go, gb);
                         } else {
                           for (int64_t i = 0; i < batch; ++i) {
                             gemm<T>(true, false, p, q, m, shared_a ? ad : ad + i * m * p,
                                     go + i * m * q, gb + i * p * q);
                           }
                         }
                       }
                     });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " with weight " +
                         shape_str(w.shape()));
  }
  const int64_t in = w.dim(0), out_dim = w.dim(1);
  const int64_t rows = x.numel() / in;
  if (bias.defined() && bias.numel() != out_dim) throw DimensionError("linear: bias size");
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<T> out(static_cast<size_t>(rows * out_dim), T(0));
  if (bias.defined()) {
    for (int64_t r = 0; r < rows; ++r) std::copy(bias.vec().begin(), bias.vec().end(), out.begin() + r * out_dim);
  }
  gemm<T>(false, false, rows, out_dim, in, x.vec().data(), w.vec().data(), out.data());
  return make_result(shape, std::move(out), {x, w, bias},
                     [x, w, bias, rows, in, out_dim](TensorNode<T>& self) {
                       const T* go = self.grad.data();
                       if (x.requires_grad()) {
                         gemm<T>(false, true, rows, in, out_dim, go, w.vec().data(), grad_of(x).data());
                       }
                       if (w.requires_grad()) {
                         gemm<T>(true, false, in, out_dim, rows, x.vec().data(), go, grad_of(w).data());
                       }
                       if (bias.defined() && bias.requires_grad()) {
                         auto& gb = grad_of(bias);
                         for (int64_t r = 0; r < rows; ++r) {
                           for (int64_t c = 0; c < out_dim; ++c) gb[c] += go[r * out_dim + c];
                         }
                       }
                     });
}

// ---------------------------------------------------------------- softmax

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.vec().size());
  const auto& xv = x.vec();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.len * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      if (!std::isfinite(mx)) {
        throw NumericError(mx == -std::numeric_limits<T>::infinity()
                               ? "softmax: every entry of a row is -inf"
                               : "softmax: non-finite input");
      }
      T z = T(0);
      for (int64_t l = 0; l < s.len; ++l) {
        const T e = std::exp(xv[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (int64_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  auto y = std::make_shared<std::vector<T>>(out);
  return make_result(x.shape(), std::move(out), {x}, [x, s, y](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t in = 0; in < s.inner; ++in) {
        const int64_t base = o * s.len * s.inner + in;
        T dotp = T(0);
        for (int64_t l = 0; l < s.len; ++l) dotp += self.grad[base + l * s.inner] * (*y)[base + l * s.inner];
        for (int64_t l = 0; l < s.len; ++l) {
          const int64_t i = base + l * s.inner;
          g[i] += (*y)[i] * (self.grad[i] - dotp);
        }
      }
    }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  axis = norm_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.vec().size());
  const auto& xv = x.vec();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.len * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[base + l * s.inner]);
      if (!std::isfinite(mx)) throw NumericError("log_softmax: non-finite row maximum");
      T z = T(0);
      for (int64_t l = 0; l < s.len; ++l) z += std::exp(xv[base + l * s.inner] - mx);
      const T lz = mx + std::log(z);
      for (int64_t l = 0; l < s.len; ++l) out[base + l * s.inner] = xv[base + l * s.inner] - lz;
    }
  }
  auto y = std::make_shared<std::vector<T>>(out);
  return make_result(x.shape(), std::move(out), {x}, [x, s, y](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t in = 0; in < s.inner; ++in) {
        const int64_t base = o * s.len * s.inner + in;
        T gs = T(0);
        for (int64_t l = 0; l < s.len; ++l) gs += self.grad[base + l * s.inner];
        for (int64_t l = 0; l < s.len; ++l) {
          const int64_t i = base + l * s.inner;
          g[i] += self.grad[i] - std::exp((*y)[i]) * gs;
        }
      }
    }
  });
}

template <class T>
Tensor<T> mask_keys(const Tensor<T>& scores, const std::vector<bool>& key_valid) {
  const int64_t m = scores.dim(-1);
  if (static_cast<int64_t>(key_valid.size()) != m) throw DimensionError("mask_keys: mask length");
  std::vector<T> out(scores.vec());
  for (size_t i = 0; i < out.size(); ++i) {
    if (!key_valid[i % static_cast<size_t>(m)]) out[i] = -std::numeric_limits<T>::infinity();
  }
  return make_result(scores.shape(), std::move(out), {scores}, [scores, key_valid, m](TensorNode<T>& self) {
    auto& g = grad_of(scores);
    for (size_t i = 0; i < g.size(); ++i) {
      if (key_valid[i % static_cast<size_t>(m)]) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------- convolution

namespace {

// Convolution geometry lifted to three spatial axes (missing axes are 1).
struct ConvGeom {
  int64_t batch = 1, cin = 1, cout = 1, groups = 1;
  std::array<int64_t, 3> in{1, 1, 1}, k{1, 1, 1}, out{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0};
  int64_t in_sp() const { return in[0] * in[1] * in[2]; }
  int64_t out_sp() const { return out[0] * out[1] * out[2]; }
  int64_t ksz() const { return k[0] * k[1] * k[2]; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, int64_t channels, T* cols) {
  const int64_t osp = g.out_sp();
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t kd = 0; kd < g.k[0]; ++kd) {
      for (int64_t kh = 0; kh < g.k[1]; ++kh) {
        for (int64_t kw = 0; kw < g.k[2]; ++kw) {
          T* row = cols + (((c * g.k[0] + kd) * g.k[1] + kh) * g.k[2] + kw) * osp;
          for (int64_t od = 0; od < g.out[0]; ++od) {
            const int64_t id = od * g.stride[0] - g.pad[0] + kd;
            for (int64_t oh = 0; oh < g.out[1]; ++oh) {
              const int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
              T* dst = row + (od * g.out[1] + oh) * g.out[2];
              if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) {
                std::fill_n(dst, g.out[2], T(0));
                continue;
              }
              const T* src = x + (c * g.in[0] + id) * g.in[1] * g.in[2] + ih * g.in[2];
              for (int64_t ow = 0; ow < g.out[2]; ++ow) {
                const int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                dst[ow] = (iw >= 0 && iw < g.in[2]) ? src[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeom& g, int64_t channels, T* dx) {
  const int64_t osp = g.out_sp();
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t kd = 0; kd < g.k[0]; ++kd) {
      for (int64_t kh = 0; kh < g.k[1]; ++kh) {
        for (int64_t kw = 0; kw < g.k[2]; ++kw) {
          const T* row = cols + (((c * g.k[0] + kd) * g.k[1] + kh) * g.k[2] + kw) * osp;
          for (int64_t od = 0; od < g.out[0]; ++od) {
            const int64_t id = od * g.stride[0] - g.pad[0] + kd;
            if (id < 0 || id >= g.in[0]) continue;
            for (int64_t oh = 0; oh < g.out[1]; ++oh) {
              const int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
              if (ih < 0 || ih >= g.in[1]) continue;
              const T* src = row + (od * g.out[1] + oh) * g.out[2];
              T* dst = dx + (c * g.in[0] + id) * g.in[1] * g.in[2] + ih * g.in[2];
              for (int64_t ow = 0; ow < g.out[2]; ++ow) {
                const int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                if (iw >= 0 && iw < g.in[2]) dst[iw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const ConvSpec& spec) {
  const int dims = w.rank() - 2;
  if (dims < 1 || dims > 3) throw DimensionError("conv: kernel rank must be 3, 4 or 5");
  if (x.rank() != dims + 2) {
    throw DimensionError("conv: input " + shape_str(x.shape()) + " does not match kernel " +
                         shape_str(w.shape()));
  }
  ConvGeom g;
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.cout = w.dim(0);
  g.groups = spec.groups;
  if (g.groups < 1 || g.cin % g.groups != 0 || g.cout % g.groups != 0 || w.dim(1) != g.cin / g.groups) {
    throw DimensionError("conv: channel mismatch between input " + shape_str(x.shape()) +
                         " and kernel " + shape_str(w.shape()));
  }
  if (static_cast<int>(spec.stride.size()) != dims || static_cast<int>(spec.padding.size()) != dims) {
    throw ParameterError("conv: stride/padding length must equal spatial rank");
  }
  const int off = 3 - dims;
  for (int i = 0; i < dims; ++i) {
    g.in[off + i] = x.dim(2 + i);
    g.k[off + i] = w.dim(2 + i);
    g.stride[off + i] = spec.stride[i];
    g.pad[off + i] = spec.padding[i];
    if (spec.stride[i] < 1 || spec.padding[i] < 0) throw ParameterError("conv: bad stride/padding");
    const int64_t span = g.in[off + i] + 2 * g.pad[off + i] - g.k[off + i];
    if (span < 0) {
      throw DimensionError("conv: kernel " + shape_str(w.shape()) + " larger than padded input " +
                           shape_str(x.shape()));
    }
    g.out[off + i] = span / g.stride[off + i] + 1;
  }
  if (bias.defined() && bias.numel() != g.cout) throw DimensionError("conv: bias size");

  Shape out_shape{g.batch, g.cout};
  for (int i = 0; i < dims; ++i) out_shape.push_back(g.out[off + i]);
  const int64_t cg = g.cin / g.groups, og = g.cout / g.groups;
  const int64_t kdim = cg * g.ksz(), osp = g.out_sp();
  std::vector<T> out(static_cast<size_t>(g.batch * g.cout * osp), T(0));
  std::vector<T> cols(static_cast<size_t>(kdim * osp));
  for (int64_t b = 0; b < g.batch; ++b) {
    for (int64_t gr = 0; gr < g.groups; ++gr) {
      im2col(x.vec().data() + (b * g.cin + gr * cg) * g.in_sp(), g, cg, cols.data());
      gemm<T>(false, false, og, osp, kdim, w.vec().data() + gr * og * kdim, cols.data(),
              out.data() + (b * g.cout + gr * og) * osp);
    }
    if (bias.defined()) {
      for (int64_t c = 0; c < g.cout; ++c) {
        T* o = out.data() + (b * g.cout + c) * osp;
        for (int64_t i = 0; i < osp; ++i) o[i] += bias.vec()[c];
      }
    }
  }
  return make_result(out_shape, std::move(out), {x, w, bias}, [x, w, bias, g](TensorNode<T>& self) {
    const int64_t cg = g.cin / g.groups, og = g.cout / g.groups;
    const int64_t kdim = cg * g.ksz(), osp = g.out_sp();
    std::vector<T> cols(static_cast<size_t>(kdim * osp));
    std::vector<T> dcols;
    T* gx = x.requires_grad() ? grad_of(x).data() : nullptr;
    T* gw = w.requires_grad() ? grad_of(w).data() : nullptr;
    if (gx) dcols.resize(cols.size());
    for (int64_t b = 0; b < g.batch; ++b) {
      for (int64_t gr = 0; gr < g.groups; ++gr) {
        const T* go = self.grad.data() + (b * g.cout + gr * og) * osp;
        if (gw) {
          im2col(x.vec().data() + (b * g.cin + gr * cg) * g.in_sp(), g, cg, cols.data());
          gemm<T>(false, true, og, kdim, osp, go, cols.data(), gw + gr * og * kdim);
        }
        if (gx) {
          gemm<T>(true, false, kdim, osp, og, w.vec().data() + gr * og * kdim, go, dcols.data(), T(0));
          col2im(dcols.data(), g, cg, gx + (b * g.cin + gr * cg) * g.in_sp());
        }
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      auto& gb = grad_of(bias);
      for (int64_t b = 0; b < g.batch; ++b) {
        for (int64_t c = 0; c < g.cout; ++c) {
          const T* go = self.grad.data() + (b * g.cout + c) * osp;
          T acc = T(0);
          for (int64_t i = 0; i < osp; ++i) acc += go[i];
          gb[c] += acc;
        }
      }
    }
  });
}

template <class T>
Tensor<T> max_pool(const Tensor<T>& x, const std::vector<int64_t>& kernel,
                   const std::vector<int64_t>& stride, const std::vector<int64_t>& padding) {
  const int dims = x.rank() - 2;
  if (dims < 1 || dims > 3 || static_cast<int>(kernel.size()) != dims ||
      static_cast<int>(stride.size()) != dims || static_cast<int>(padding.size()) != dims) {
    throw DimensionError("max_pool: rank mismatch for input " + shape_str(x.shape()));
  }
  ConvGeom g;
  const int off = 3 - dims;
  for (int i = 0; i < dims; ++i) {
    g.in[off + i] = x.dim(2 + i);
    g.k[off + i] = kernel[i];
    g.stride[off + i] = stride[i];
    g.pad[off + i] = padding[i];
    const int64_t span = g.in[off + i] + 2 * padding[i] - kernel[i];
    if (span < 0) throw DimensionError("max_pool: window larger than padded input");
    g.out[off + i] = span / stride[i] + 1;
  }
  const int64_t planes = x.dim(0) * x.dim(1);
  Shape out_shape{x.dim(0), x.dim(1)};
  for (int i = 0; i < dims; ++i) out_shape.push_back(g.out[off + i]);
  const int64_t osp = g.out_sp(), isp = g.in_sp();
  std::vector<T> out(static_cast<size_t>(planes * osp));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size(), -1);
  const auto& xv = x.vec();
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t od = 0; od < g.out[0]; ++od) {
      for (int64_t oh = 0; oh < g.out[1]; ++oh) {
        for (int64_t ow = 0; ow < g.out[2]; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_i = -1;
          for (int64_t kd = 0; kd < g.k[0]; ++kd) {
            const int64_t id = od * g.stride[0] - g.pad[0] + kd;
            if (id < 0 || id >= g.in[0]) continue;
            for (int64_t kh = 0; kh < g.k[1]; ++kh) {
              const int64_t ih = oh * g.stride[1] - g.pad[1] + kh;
              if (ih < 0 || ih >= g.in[1]) continue;
              for (int64_t kw = 0; kw < g.k[2]; ++kw) {
                const int64_t iw = ow * g.stride[2] - g.pad[2] + kw;
                if (iw < 0 || iw >= g.in[2]) continue;
                const int64_t idx = p * isp + (id * g.in[1] + ih) * g.in[2] + iw;
                if (xv[idx] > best || best_i < 0) {
                  best = xv[idx];
                  best_i = idx;
                }
              }
            }
          }
          const int64_t o = p * osp + (od * g.out[1] + oh) * g.out[2] + ow;
          out[o] = best;
          (*argmax)[o] = best_i;
        }
      }
    }
  }
  return make_result(out_shape, std::move(out), {x}, [x, argmax](TensorNode<T>& self) {
    auto& gx = grad_of(x);
    for (size_t o = 0; o < self.grad.size(); ++o) {
      if ((*argmax)[o] >= 0) gx[(*argmax)[o]] += self.grad[o];
    }
  });
}

template <class T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int64_t stride, int64_t padding) {
  if (x.rank() != 2 || w.rank() != 2 || w.dim(0) != x.dim(1)) {
    throw DimensionError("depthwise_conv1d: input " + shape_str(x.shape()) + " kernel " +
                         shape_str(w.shape()));
  }
  if (stride < 1 || padding < 0) throw ParameterError("depthwise_conv1d: bad stride/padding");
  const int64_t n = x.dim(0), d = x.dim(1), k = w.dim(1);
  const int64_t span = n + 2 * padding - k;
  if (span < 0) throw DimensionError("depthwise_conv1d: kernel larger than padded input");
  const int64_t m = span / stride + 1;
  std::vector<T> out(static_cast<size_t>(m * d), T(0));
  const T* xv = x.vec().data();
  const T* wv = w.vec().data();
  for (int64_t t = 0; t < m; ++t) {
    T* o = out.data() + t * d;
    if (bias.defined()) std::copy(bias.vec().begin(), bias.vec().end(), o);
    for (int64_t j = 0; j < k; ++j) {
      const int64_t src = t * stride - padding + j;
      if (src < 0 || src >= n) continue;
      const T* xi = xv + src * d;
      for (int64_t c = 0; c < d; ++c) o[c] += xi[c] * wv[c * k + j];
    }
  }
  return make_result<T>({m, d}, std::move(out), {x, w, bias},
                        [x, w, bias, n, d, k, m, stride, padding](TensorNode<T>& self) {
                          const T* go = self.grad.data();
                          T* gx = x.requires_grad() ? grad_of(x).data() : nullptr;
                          T* gw = w.requires_grad() ? grad_of(w).data() : nullptr;
                          const T* xv = x.vec().data();
                          const T* wv = w.vec().data();
                          for (int64_t t = 0; t < m; ++t) {
                            const T* g = go + t * d;
                            for (int64_t j = 0; j < k; ++j) {
                              const int64_t src = t * stride - padding + j;
                              if (src < 0 || src >= n) continue;
                              if (gx) {
                                T* gxi = gx + src * d;
                                for (int64_t c = 0; c < d; ++c) gxi[c] += g[c] * wv[c * k + j];
                              }
                              if (gw) {
                                const T* xi = xv + src * d;
                                for (int64_t c = 0; c < d; ++c) gw[c * k + j] += g[c] * xi[c];
                              }
                            }
                          }
                          if (bias.defined() && bias.requires_grad()) {
                            auto& gb = grad_of(bias);
                            for (int64_t t = 0; t < m; ++t) {
                              for (int64_t c = 0; c < d; ++c) gb[c] += go[t * d + c];
                            }
                          }
                        });
}

// ---------------------------------------------------------------- pooling along time

template <class T>
Tensor<T> avg_pool1d(const Tensor<T>& x, int64_t k) {
  if (k <= 0) throw ParameterError("avg_pool1d: k must be >= 1, got " + std::to_string(k));
  if (x.rank() != 2) throw DimensionError("avg_pool1d expects [n, d], got " + shape_str(x.shape()));
  if (k == 1) return x;
  const int64_t n = x.dim(0), d = x.dim(1);
  const int64_t m = (n + k - 1) / k;
  std::vector<T> out(static_cast<size_t>(m * d), T(0));
  const auto& xv = x.vec();
  for (int64_t w = 0; w < m; ++w) {
    const int64_t lo = w * k, hi = std::min(n, lo + k);
    const T inv = T(1) / static_cast<T>(hi - lo);
    for (int64_t t = lo; t < hi; ++t) {
      for (int64_t c = 0; c < d; ++c) out[w * d + c] += xv[t * d + c];
    }
    for (int64_t c = 0; c < d; ++c) out[w * d + c] *= inv;
  }
  return make_result<T>({m, d}, std::move(out), {x}, [x, n, d, k, m](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t w = 0; w < m; ++w) {
      const int64_t lo = w * k, hi = std::min(n, lo + k);
      const T inv = T(1) / static_cast<T>(hi - lo);
      for (int64_t t = lo; t < hi; ++t) {
        for (int64_t c = 0; c < d; ++c) g[t * d + c] += self.grad[w * d + c] * inv;
      }
    }
  });
}

template <class T>
Tensor<T> upsample_nearest1d(const Tensor<T>& x, int64_t k, int64_t target_len) {
  if (k <= 0) throw ParameterError("upsample_nearest1d: k must be >= 1");
  if (x.rank() != 2) throw DimensionError("upsample_nearest1d expects [m, d]");
  const int64_t m = x.dim(0), d = x.dim(1);
  if (target_len < (m - 1) * k + 1 || target_len > m * k) {
    throw ParameterError("upsample_nearest1d: target length " + std::to_string(target_len) +
                         " outside [" + std::to_string((m - 1) * k + 1) + ", " +
                         std::to_string(m * k) + "]");
  }
  if (k == 1) return x;
  std::vector<T> out(static_cast<size_t>(target_len * d));
  const auto& xv = x.vec();
  for (int64_t t = 0; t < target_len; ++t) std::copy_n(xv.begin() + (t / k) * d, d, out.begin() + t * d);
  return make_result<T>({target_len, d}, std::move(out), {x}, [x, k, d, target_len](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (int64_t t = 0; t < target_len; ++t) {
      for (int64_t c = 0; c < d; ++c) g[(t / k) * d + c] += self.grad[t * d + c];
    }
  });
}

// ---------------------------------------------------------------- normalization

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine size");
  const int64_t rows = x.numel() / d;
  std::vector<T> out(x.vec().size());
  auto xhat = std::make_shared<std::vector<T>>(x.vec().size());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const auto& xv = x.vec();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xi = xv.data() + r * d;
    T mu = T(0);
    for (int64_t c = 0; c < d; ++c) mu += xi[c];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (int64_t c = 0; c < d; ++c) var += (xi[c] - mu) * (xi[c] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (int64_t c = 0; c < d; ++c) {
      const T h = (xi[c] - mu) * rs;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gamma.vec()[c] + beta.vec()[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, rstd, rows, d](TensorNode<T>& self) {
                       const auto& gv = gamma.vec();
                       if (gamma.requires_grad() || beta.requires_grad()) {
                         auto* gg = gamma.requires_grad() ? &grad_of(gamma) : nullptr;
                         auto* gb = beta.requires_grad() ? &grad_of(beta) : nullptr;
                         for (int64_t r = 0; r < rows; ++r) {
                           for (int64_t c = 0; c < d; ++c) {
                             const T go = self.grad[r * d + c];
                             if (gg) (*gg)[c] += go * (*xhat)[r * d + c];
                             if (gb) (*gb)[c] += go;
                           }
                         }
                       }
                       if (x.requires_grad()) {
                         auto& gx = grad_of(x);
                         for (int64_t r = 0; r < rows; ++r) {
                           T s1 = T(0), s2 = T(0);
                           for (int64_t c = 0; c < d; ++c) {
                             const T gh = self.grad[r * d + c] * gv[c];
                             s1 += gh;
                             s2 += gh * (*xhat)[r * d + c];
                           }
                           s1 /= static_cast<T>(d);
                           s2 /= static_cast<T>(d);
                           for (int64_t c = 0; c < d; ++c) {
                             const T gh = self.grad[r * d + c] * gv[c];
                             gx[r * d + c] += (*rstd)[r] * (gh - s1 - (*xhat)[r * d + c] * s2);
                           }
                         }
                       }
                     });
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, int channel_axis, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormStats<T>& stats, bool training, T momentum,
                     T eps) {
  channel_axis = norm_axis(channel_axis, x.rank());
  const AxisSplit s = split_at(x.shape(), channel_axis);
  const int64_t C = s.len;
  if (gamma.numel() != C || beta.numel() != C || stats.mean.numel() != C || stats.var.numel() != C) {
    throw DimensionError("batch_norm: channel count mismatch for " + shape_str(x.shape()));
  }
  const int64_t count = s.outer * s.inner;
  const auto& xv = x.vec();
  std::vector<T> mu(static_cast<size_t>(C), T(0)), var(static_cast<size_t>(C), T(0));
  if (training) {
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t c = 0; c < C; ++c) {
        const T* p = xv.data() + (o * C + c) * s.inner;
        for (int64_t i = 0; i < s.inner; ++i) mu[c] += p[i];
      }
    }
    for (auto& m : mu) m /= static_cast<T>(count);
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t c = 0; c < C; ++c) {
        const T* p = xv.data() + (o * C + c) * s.inner;
        for (int64_t i = 0; i < s.inner; ++i) var[c] += (p[i] - mu[c]) * (p[i] - mu[c]);
      }
    }
    for (auto& v : var) v /= static_cast<T>(count);
    const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
    for (int64_t c = 0; c < C; ++c) {
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mu[c];
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * var[c] * unbias;
    }
  } else {
    mu = stats.mean.vec();
    var = stats.var.vec();
  }
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) (*rstd)[c] = T(1) / std::sqrt(var[c] + eps);
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  std::vector<T> out(xv.size());
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t c = 0; c < C; ++c) {
      const int64_t base = (o * C + c) * s.inner;
      for (int64_t i = 0; i < s.inner; ++i) {
        const T h = (xv[base + i] - mu[c]) * (*rstd)[c];
        (*xhat)[base + i] = h;
        out[base + i] = h * gamma.vec()[c] + beta.vec()[c];
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, rstd, s, C, count, training](TensorNode<T>& self) {
                       std::vector<T> sg(static_cast<size_t>(C), T(0)), sgh(static_cast<size_t>(C), T(0));
                       for (int64_t o = 0; o < s.outer; ++o) {
                         for (int64_t c = 0; c < C; ++c) {
                           const int64_t base = (o * C + c) * s.inner;
                           for (int64_t i = 0; i < s.inner; ++i) {
                             sg[c] += self.grad[base + i];
                             sgh[c] += self.grad[base + i] * (*xhat)[base + i];
                           }
                         }
                       }
                       if (gamma.requires_grad()) {
                         auto& gg = grad_of(gamma);
                         for (int64_t c = 0; c < C; ++c) gg[c] += sgh[c];
                       }
                       if (beta.requires_grad()) {
                         auto& gb = grad_of(beta);
                         for (int64_t c = 0; c < C; ++c) gb[c] += sg[c];
                       }
                       if (!x.requires_grad()) return;
                       auto& gx = grad_of(x);
                       const auto& gv = gamma.vec();
                       for (int64_t o = 0; o < s.outer; ++o) {
                         for (int64_t c = 0; c < C; ++c) {
                           const int64_t base = (o * C + c) * s.inner;
                           const T k = gv[c] * (*rstd)[c];
                           for (int64_t i = 0; i < s.inner; ++i) {
                             if (training) {
                               const T n = static_cast<T>(count);
                               gx[base + i] += k * (self.grad[base + i] - sg[c] / n -
                                                    (*xhat)[base + i] * sgh[c] / n);
                             } else {
                               gx[base + i] += k * self.grad[base + i];
                             }
                           }
                         }
                       }
                     });
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.vec().size());
  std::vector<T> out(x.vec().size());
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] = x.vec()[i] * (*mask)[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [x, mask](TensorNode<T>& self) {
    auto& g = grad_of(x);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------- relative positions

template <class T>
Tensor<T> rel_scores(const Tensor<T>& q, const Tensor<T>& e, int64_t n_max) {
  if (q.rank() != 3 || e.rank() != 3 || q.dim(0) != e.dim(0) || q.dim(2) != e.dim(2)) {
    throw DimensionError("rel_scores: q " + shape_str(q.shape()) + " e " + shape_str(e.shape()));
  }
  const int64_t H = q.dim(0), n = q.dim(1), dh = q.dim(2), R = e.dim(1);
  if (R != 2 * n_max - 1) throw DimensionError("rel_scores: table rows must be 2 n_max - 1");
  if (n > n_max) {
    throw ConfigError("rel_scores: sequence length " + std::to_string(n) + " exceeds n_max " +
                      std::to_string(n_max));
  }
  // Rows of e for offsets -(n-1) .. (n-1).
  const int64_t lo = n_max - n, W = 2 * n - 1;
  std::vector<T> full(static_cast<size_t>(n * W));
  std::vector<T> out(static_cast<size_t>(H * n * n));
  for (int64_t h = 0; h < H; ++h) {
    gemm<T>(false, true, n, W, dh, q.vec().data() + h * n * dh, e.vec().data() + (h * R + lo) * dh,
            full.data(), T(0));
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < n; ++j) out[(h * n + i) * n + j] = full[i * W + (j - i + n - 1)];
    }
  }
  return make_result<T>({H, n, n}, std::move(out), {q, e}, [q, e, H, n, dh, R, lo, W](TensorNode<T>& self) {
    std::vector<T> dfull(static_cast<size_t>(n * W));
    for (int64_t h = 0; h < H; ++h) {
      std::fill(dfull.begin(), dfull.end(), T(0));
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) dfull[i * W + (j - i + n - 1)] += self.grad[(h * n + i) * n + j];
      }
      if (q.requires_grad()) {
        gemm<T>(false, false, n, dh, W, dfull.data(), e.vec().data() + (h * R + lo) * dh,
                grad_of(q).data() + h * n * dh);
      }
      if (e.requires_grad()) {
        gemm<T>(true, false, W, dh, n, dfull.data(), q.vec().data() + h * n * dh,
                grad_of(e).data() + (h * R + lo) * dh);
      }
    }
  });
}

// ---------------------------------------------------------------- instantiation

#define AVSR_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> log(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> swish(const Tensor<T>&);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> glu(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> dot_const(const Tensor<T>&, const std::vector<T>&);                         \
  template Tensor<T> mean_trailing(const Tensor<T>&, int);                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                         \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                 \
  template Tensor<T> slice(const Tensor<T>&, int, int64_t, int64_t);                             \
  template Tensor<T> pad_rows(const Tensor<T>&, int64_t);                                        \
  template Tensor<T> subsample_rows(const Tensor<T>&, int64_t);                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> softmax(const Tensor<T>&, int);                                             \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                         \
  template Tensor<T> mask_keys(const Tensor<T>&, const std::vector<bool>&);                      \
  template Tensor<T> conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&); \
  template Tensor<T> max_pool(const Tensor<T>&, const std::vector<int64_t>&,                     \
                              const std::vector<int64_t>&, const std::vector<int64_t>&);         \
  template Tensor<T> depthwise_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      int64_t, int64_t);                                         \
  template Tensor<T> avg_pool1d(const Tensor<T>&, int64_t);                                      \
  template Tensor<T> upsample_nearest1d(const Tensor<T>&, int64_t, int64_t);                     \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> batch_norm(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&,       \
                                BatchNormStats<T>&, bool, T, T);                                 \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                              \
  template Tensor<T> rel_scores(const Tensor<T>&, const Tensor<T>&, int64_t);

AVSR_INSTANTIATE_OPS(float)
AVSR_INSTANTIATE_OPS(double)

}  // namespace avsr
