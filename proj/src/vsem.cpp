// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/vsem.hpp"

#include <cmath>

#include "sshnet/errors.hpp"
#include "sshnet/init.hpp"

namespace sshnet {

const char* to_string(SalienceMode m) { return m == SalienceMode::sigmoid ? "sigmoid" : "softmax"; }

SalienceMode salience_mode_from_string(const std::string& s) {
  if (s == "sigmoid") return SalienceMode::sigmoid;
  if (s == "softmax") return SalienceMode::softmax;
  throw ConfigError("unknown salience mode '" + s + "' (expected sigmoid or softmax)");
}

VsemParams VsemParams::init(std::size_t embed_dim, std::size_t input_dim, std::size_t seg_classes, Rng& rng) {
  VsemParams p;
  p.seg_fc_weight = linear_weight("vsem.seg_fc.weight", embed_dim, seg_classes, rng);
  p.seg_fc_bias = zeros("vsem.seg_fc.bias", {embed_dim});
  p.region_proj = linear_weight("vsem.region_proj", embed_dim, input_dim, rng);
  p.gate_proj = linear_weight("vsem.gate_proj", embed_dim, embed_dim, rng);
  p.out_proj = linear_weight("vsem.out_proj", embed_dim, embed_dim, rng);
  return p;
}

ParamList VsemParams::params() { return {&seg_fc_weight, &seg_fc_bias, &region_proj, &gate_proj, &out_proj}; }

Var pool_segmentation(Graph& g, Var seg_feat, const VsemParams& p) {
  const Var pooled = ops::avg_pool_spatial(seg_feat);
  return ops::add_bias(ops::linear(pooled, g.param(p.seg_fc_weight)), g.param(p.seg_fc_bias));
}

namespace {

// Both steps consume the projected regions W v_i; vsem_forward projects once.
Var salience_from_projected(Var seg_embed, Var projected, const VsemParams& p, const VsemOptions& opt) {
  const std::size_t k = projected.shape().at(0);
  const double dim = opt.scale_dim > 0.0 ? opt.scale_dim : static_cast<double>(p.embed_dim());
  const Var cos = ops::reshape(ops::cosine_rows(projected, seg_embed), {k});
  const Var scaled = ops::scale(cos, 1.0 / std::sqrt(dim));
  return opt.mode == SalienceMode::sigmoid ? ops::sigmoid(scaled) : ops::smoothed_softmax(scaled, 1.0);
}

Var fuse_from_projected(Graph& g, Var alphas, Var projected, Var seg_embed, const VsemParams& p) {
  const Var weighted = ops::mul_rows(projected, alphas);
  const Var gate = ops::tanh(ops::linear(weighted, g.param(p.gate_proj)));
  const Var fused = ops::add_bias(ops::mul(gate, weighted), seg_embed);
  return ops::linear(fused, g.param(p.out_proj));
}

void require_regions(Var regions) {
  if (regions.shape().size() != 2 || regions.shape()[0] < 1) {
    throw DimensionError("vsem: regions must be [K x D_l] with K >= 1, got " + shape_string(regions.shape()));
  }
}

}  // namespace

Var salience_weights(Graph& g, Var seg_embed, Var regions, const VsemParams& p, const VsemOptions& opt) {
  require_regions(regions);
  return salience_from_projected(seg_embed, ops::linear(regions, g.param(p.region_proj)), p, opt);
}

Var semantic_fuse(Graph& g, Var alphas, Var regions, Var seg_embed, const VsemParams& p) {
  require_regions(regions);
  return fuse_from_projected(g, alphas, ops::linear(regions, g.param(p.region_proj)), seg_embed, p);
}

VsemVars vsem_forward(Graph& g, Var regions, Var seg_feat, const VsemParams& p, const VsemOptions& opt) {
  require_regions(regions);
  VsemVars out;
  out.seg_embed = pool_segmentation(g, seg_feat, p);
  const Var projected = ops::linear(regions, g.param(p.region_proj));
  out.alphas = salience_from_projected(out.seg_embed, projected, p, opt);
  out.enhanced = fuse_from_projected(g, out.alphas, projected, out.seg_embed, p);
  return out;
}

Tensor pool_segmentation(const Tensor& seg_feat, const VsemParams& p) {
  Graph g(false);
  return pool_segmentation(g, g.constant(seg_feat), p).value();
}

Tensor salience_weights(const Tensor& seg_embed, const Tensor& regions, const VsemParams& p,
                        const VsemOptions& opt) {
  Graph g(false);
  return salience_weights(g, g.constant(seg_embed), g.constant(regions), p, opt).value();
}

Tensor semantic_fuse(const Tensor& alphas, const Tensor& regions, const Tensor& seg_embed, const VsemParams& p) {
  Graph g(false);
  return semantic_fuse(g, g.constant(alphas), g.constant(regions), g.constant(seg_embed), p).value();
}

VsemOutput vsem_forward(const Tensor& regions, const Tensor& seg_feat, const VsemParams& p,
                        const VsemOptions& opt) {
  Graph g(false);
  const VsemVars v = vsem_forward(g, g.constant(regions), g.constant(seg_feat), p, opt);
  return {v.seg_embed.value(), v.alphas.value(), v.enhanced.value()};
}

}  // namespace sshnet
