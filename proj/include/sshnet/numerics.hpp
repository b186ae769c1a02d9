// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Forward kernels for the handful of dense primitives the model uses. The
// differentiable versions in autograd.hpp call into these.

#pragma once

#include <optional>
#include <span>

#include "sshnet/tensor.hpp"

namespace sshnet {

/// Norms below this are treated as zero: cosine against such a vector is 0.
inline constexpr double kDegenerateNorm = 1e-12;

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x * w^T for x of shape [n x in] (or a single [in] vector) and w of shape
/// [out x in]. This is how every projection matrix stored as [out x in] is
/// applied to row features.
Tensor linear(const Tensor& x, const Tensor& w);

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> u);

/// dot(u, v) / (|u||v|); 0 when either norm is below kDegenerateNorm.
double cosine(std::span<const double> u, std::span<const double> v);

/// exp(lambda * c_j) / sum_k exp(lambda * c_k) with max subtraction.
Tensor smoothed_softmax(std::span<const double> c, double lambda);

double sigmoid(double x);
double tanh(double x);

/// [H x W x C] -> [C], mean over the spatial positions of every channel.
Tensor avg_pool_spatial(const Tensor& t);

/// Valid (unpadded) cross-correlation. input [H x W x Cin], kernel
/// [kh x kw x Cin x Cout], optional bias [Cout]; output [H' x W' x Cout] with
/// H' = (H - kh) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias, std::size_t stride);

/// Output spatial extent of conv2d; throws DimensionError if the kernel does
/// not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride);

}  // namespace sshnet
