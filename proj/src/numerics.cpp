// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "sshnet/errors.hpp"

namespace sshnet {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
  const std::size_t n = u.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += u[i] * v[i];
    s1 += u[i + 1] * v[i + 1];
    s2 += u[i + 2] * v[i + 2];
    s3 += u[i + 3] * v[i + 3];
  }
  for (; i < n; ++i) s0 += u[i] * v[i];
  return (s0 + s1) + (s2 + s3);
}

Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2) throw DimensionError("linear: weight must be rank 2, got " + shape_string(w.shape()));
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1);
  const bool vec = x.rank() == 1;
  if ((vec && x.dim(0) != in_dim) || (!vec && (x.rank() != 2 || x.dim(1) != in_dim))) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(w.shape()));
  }
  const std::size_t n = vec ? 1 : x.dim(0);
  Tensor out(vec ? Shape{out_dim} : Shape{n, out_dim});
  const auto xs = x.data();
  const auto ws = w.data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = xs.subspan(i * in_dim, in_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
      out[i * out_dim + o] = dot(xi, ws.subspan(o * in_dim, in_dim));
    }
  }
  return out;
}

double l2_norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("cosine: length mismatch");
  const double nu = l2_norm(u), nv = l2_norm(v);
  if (nu < kDegenerateNorm || nv < kDegenerateNorm) return 0.0;
  return dot(u, v) / (nu * nv);
}

Tensor smoothed_softmax(std::span<const double> c, double lambda) {
  Tensor out({c.size()});
  if (c.empty()) return out;
  double mx = lambda * c[0];
  for (double v : c) mx = std::max(mx, lambda * v);
  double total = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    out[j] = std::exp(lambda * c[j] - mx);
    total += out[j];
  }
  for (auto& v : out.data()) v /= total;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double tanh(double x) { return std::tanh(x); }

Tensor avg_pool_spatial(const Tensor& t) {
  if (t.rank() != 3) throw DimensionError("avg_pool_spatial: expected HxWxC, got " + shape_string(t.shape()));
  const std::size_t hw = t.dim(0) * t.dim(1), c = t.dim(2);
  Tensor out({c});
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t k = 0; k < c; ++k) out[k] += t[p * c + k];
  }
  for (auto& v : out.data()) v /= static_cast<double>(hw);
  return out;
}

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride) {
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (k == 0 || k > in) {
    throw DimensionError("conv2d: kernel extent " + std::to_string(k) + " does not fit input extent " +
                         std::to_string(in));
  }
  return (in - k) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t stride) {
  if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(2) != input.dim(2)) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) + " incompatible with kernel " +
                         shape_string(kernel.shape()));
  }
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw DimensionError("conv2d: bias " + shape_string(bias->shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
  }
  const std::size_t oh = conv_output_extent(h, kh, stride);
  const std::size_t ow = conv_output_extent(w, kw, stride);
  Tensor out({oh, ow, cout});
  const double* pin = input.data().data();
  const double* pk = kernel.data().data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* o = out.data().data() + (oy * ow + ox) * cout;
      if (bias) std::copy(bias->data().begin(), bias->data().end(), o);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double* px = pin + ((oy * stride + ky) * w + (ox * stride + kx)) * cin;
          const double* kk = pk + (ky * kw + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double xv = px[ci];
            const double* kc = kk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += xv * kc[co];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace sshnet
