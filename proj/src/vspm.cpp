// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/vspm.hpp"

#include <cmath>
#include <tuple>

#include "sshnet/errors.hpp"
#include "sshnet/init.hpp"

namespace sshnet {

VspmParams VspmParams::init(std::size_t embed_dim, std::size_t input_dim, std::size_t seg_classes,
                            std::size_t pos_dim, std::size_t channels, std::size_t kernel, std::size_t stride,
                            double lambda, Rng& rng) {
  if (channels < 1 || channels > seg_classes / 4) {
    throw ConfigError("vspm: position channels C_p=" + std::to_string(channels) + " must satisfy 1 <= C_p <= C_s/4 = " +
                      std::to_string(seg_classes / 4));
  }
  if (!(lambda >= 0.0)) throw ConfigError("vspm: lambda must be >= 0");
  if (stride < 1 || kernel < 1) throw ConfigError("vspm: kernel and stride must be >= 1");
  VspmParams p;
  const std::size_t in_ch = pos_dim + 1;
  p.conv_kernel = Parameter("vspm.conv.kernel", xavier_uniform({kernel, kernel, in_ch, channels},
                                                               kernel * kernel * in_ch, channels, rng));
  p.conv_bias = zeros("vspm.conv.bias", {channels});
  p.query_proj = linear_weight("vspm.query_proj", channels, input_dim, rng);
  p.out_proj = linear_weight("vspm.out_proj", embed_dim, channels, rng);
  p.lambda = lambda;
  p.pos_dim = pos_dim;
  p.stride = stride;
  p.seg_classes = seg_classes;
  return p;
}

ParamList VspmParams::params() { return {&conv_kernel, &conv_bias, &query_proj, &out_proj}; }

Tensor positional_encode(double p, std::size_t d) {
  Tensor out({d});
  for (std::size_t j = 1; j <= d; ++j) {
    const double angle = p / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
    out[j - 1] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return out;
}

Tensor build_position_tensor(const Tensor& seg_map, std::size_t d, std::size_t num_classes) {
  if (seg_map.rank() != 2) {
    throw DimensionError("build_position_tensor: expected [H x W] map, got " + shape_string(seg_map.shape()));
  }
  if (num_classes < 1) throw ConfigError("build_position_tensor: need at least one category");
  const std::size_t h = seg_map.dim(0), w = seg_map.dim(1);
  Tensor out({h, w, d + 1});
  // Frequencies are shared by every pixel.
  std::vector<double> inv_freq(d);
  for (std::size_t j = 1; j <= d; ++j) {
    inv_freq[j - 1] = 1.0 / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
  }
  for (std::size_t i = 0; i < h * w; ++i) {
    const double c = seg_map[i];
    if (c < 0.0 || c >= static_cast<double>(num_classes) || c != std::floor(c)) {
      throw ValidationError("segmentation map pixel " + std::to_string(i) + " has category " + std::to_string(c) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    const double pixel = static_cast<double>(i + 1);
    double* o = out.data().data() + i * (d + 1);
    for (std::size_t j = 1; j <= d; ++j) {
      const double angle = pixel * inv_freq[j - 1];
      o[j - 1] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
    o[d] = c / static_cast<double>(num_classes);
  }
  return out;
}

Var refine_positions(Graph& g, Var position_tensor, const VspmParams& p) {
  return ops::conv2d(position_tensor, g.param(p.conv_kernel), g.param(p.conv_bias), p.stride);
}

namespace {

std::pair<Var, Var> attend(Var queries, Var refined, const VspmParams& p) {
  const Shape& rs = refined.shape();
  if (rs.size() != 3) throw DimensionError("spatial_attention: refined map must be [H x W x C_p]");
  const Var keys = ops::reshape(refined, {rs[0] * rs[1], rs[2]});
  const Var betas = ops::smoothed_softmax(ops::cosine_rows(queries, keys), p.lambda);
  return {betas, ops::matmul(betas, keys)};
}

Var combine(Graph& g, Var context, Var queries, const VspmParams& p) {
  return ops::linear(ops::add(context, queries), g.param(p.out_proj));
}

}  // namespace

std::pair<Var, Var> spatial_attention(Graph& g, Var regions, Var refined, const VspmParams& p) {
  return attend(ops::linear(regions, g.param(p.query_proj)), refined, p);
}

Var spatial_combine(Graph& g, Var context, Var regions, const VspmParams& p) {
  return combine(g, context, ops::linear(regions, g.param(p.query_proj)), p);
}

VspmVars vspm_forward(Graph& g, Var regions, Var position_tensor, const VspmParams& p) {
  VspmVars out;
  out.refined = refine_positions(g, position_tensor, p);
  const Var queries = ops::linear(regions, g.param(p.query_proj));
  std::tie(out.betas, out.context) = attend(queries, out.refined, p);
  out.spatial = combine(g, out.context, queries, p);
  return out;
}

Tensor refine_positions(const Tensor& position_tensor, const VspmParams& p) {
  Graph g(false);
  return refine_positions(g, g.constant(position_tensor), p).value();
}

std::pair<Tensor, Tensor> spatial_attention(const Tensor& regions, const Tensor& refined, const VspmParams& p) {
  Graph g(false);
  const auto [betas, context] = spatial_attention(g, g.constant(regions), g.constant(refined), p);
  return {betas.value(), context.value()};
}

Tensor spatial_combine(const Tensor& context, const Tensor& regions, const VspmParams& p) {
  Graph g(false);
  return spatial_combine(g, g.constant(context), g.constant(regions), p).value();
}

VspmOutput vspm_forward(const Tensor& regions, const Tensor& seg_map, const VspmParams& p) {
  Graph g(false);
  const Tensor pos = build_position_tensor(seg_map, p.pos_dim, p.seg_classes);
  const VspmVars v = vspm_forward(g, g.constant(regions), g.constant(pos), p);
  return {v.refined.value(), v.betas.value(), v.spatial.value()};
}

}  // namespace sshnet
