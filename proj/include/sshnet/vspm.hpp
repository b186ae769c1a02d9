// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Visual-spatial modelling. Every pixel of the segmentation map gets a
// sinusoidal position code concatenated with its normalised category; a
// strided convolution refines that into a coarse [H' x W' x C_p] map that the
// projected regions attend over with a lambda-smoothed softmax.
//
//   c_ij     = cos(U v_i, refined_j)
//   beta_ij  = softmax_j(lambda * c_ij)
//   ctx_i    = sum_j beta_ij refined_j
//   out_i    = U_out (ctx_i + U v_i)

#pragma once

#include "sshnet/autograd.hpp"
#include "sshnet/rng.hpp"

namespace sshnet {

struct VspmParams {
  Parameter conv_kernel;  // [kh x kw x (d+1) x C_p]
  Parameter conv_bias;    // [C_p]
  Parameter query_proj;   // U     [C_p x D_l]
  Parameter out_proj;     // U_out [D x C_p]
  double lambda = 4.0;
  std::size_t pos_dim = 32;  // d
  std::size_t stride = 8;
  std::size_t seg_classes = 133;

  /// Throws ConfigError unless C_p <= C_s / 4.
  static VspmParams init(std::size_t embed_dim, std::size_t input_dim, std::size_t seg_classes,
                         std::size_t pos_dim, std::size_t channels, std::size_t kernel, std::size_t stride,
                         double lambda, Rng& rng);
  std::size_t channels() const { return query_proj.value.dim(0); }
  ParamList params();
};

struct VspmOutput {
  Tensor refined;  // [H' x W' x C_p]
  Tensor betas;    // [K x H'W']
  Tensor spatial;  // [K x D]
};

struct VspmVars {
  Var refined;
  Var betas;
  Var context;  // [K x C_p]
  Var spatial;
};

/// Component j in [1, d] (stored at index j-1): sin(p / 10000^(j/d)) for even
/// j, cos(p / 10000^(j/d)) for odd j.
Tensor positional_encode(double p, std::size_t d);

/// [H x W] category map -> [H x W x (d+1)]: the code of the 1-based row-major
/// pixel index followed by category / num_classes. Throws ValidationError on a
/// category outside [0, num_classes).
Tensor build_position_tensor(const Tensor& seg_map, std::size_t d, std::size_t num_classes);

// Graph builders.
Var refine_positions(Graph& g, Var position_tensor, const VspmParams& p);
/// Returns (betas [K x M], context [K x C_p]).
std::pair<Var, Var> spatial_attention(Graph& g, Var regions, Var refined, const VspmParams& p);
Var spatial_combine(Graph& g, Var context, Var regions, const VspmParams& p);
VspmVars vspm_forward(Graph& g, Var regions, Var position_tensor, const VspmParams& p);

// Value-level wrappers.
Tensor refine_positions(const Tensor& position_tensor, const VspmParams& p);
std::pair<Tensor, Tensor> spatial_attention(const Tensor& regions, const Tensor& refined, const VspmParams& p);
Tensor spatial_combine(const Tensor& context, const Tensor& regions, const VspmParams& p);
/// Builds the position tensor from `seg_map` and runs the full module.
VspmOutput vspm_forward(const Tensor& regions, const Tensor& seg_map, const VspmParams& p);

}  // namespace sshnet
