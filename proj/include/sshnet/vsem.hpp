// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Visual-semantic modelling: the pooled segmentation feature scores every
// region (salience), and the salience-weighted regions are gated and fused
// with the segmentation embedding.
//
//   seg_embed = FC(AvgPool(seg_feat))
//   alpha_i   = sigmoid(cos(seg_embed, W v_i) / sqrt(D))       (sigmoid mode)
//             = softmax_i(cos(seg_embed, W v_i) / sqrt(D))      (softmax mode)
//   p_i       = alpha_i * W v_i
//   out_i     = W_out(tanh(W_gate p_i) (.) p_i + seg_embed)

#pragma once

#include "sshnet/autograd.hpp"
#include "sshnet/rng.hpp"

namespace sshnet {

enum class SalienceMode { sigmoid, softmax };

const char* to_string(SalienceMode m);
SalienceMode salience_mode_from_string(const std::string& s);

struct VsemParams {
  Parameter seg_fc_weight;  // [D x C_s]
  Parameter seg_fc_bias;    // [D]
  Parameter region_proj;    // W   [D x D_l]
  Parameter gate_proj;      // W_gate [D x D]
  Parameter out_proj;       // W_out  [D x D]

  static VsemParams init(std::size_t embed_dim, std::size_t input_dim, std::size_t seg_classes, Rng& rng);
  std::size_t embed_dim() const { return region_proj.value.dim(0); }
  ParamList params();
};

struct VsemOptions {
  SalienceMode mode = SalienceMode::sigmoid;
  /// The cosine is divided by sqrt(scale_dim); 0 means the embedding size.
  double scale_dim = 0.0;
};

struct VsemOutput {
  Tensor seg_embed;  // [D]
  Tensor alphas;     // [K]
  Tensor enhanced;   // [K x D]
};

struct VsemVars {
  Var seg_embed;
  Var alphas;
  Var enhanced;
};

// Graph builders, used for training.
Var pool_segmentation(Graph& g, Var seg_feat, const VsemParams& p);
Var salience_weights(Graph& g, Var seg_embed, Var regions, const VsemParams& p, const VsemOptions& opt);
Var semantic_fuse(Graph& g, Var alphas, Var regions, Var seg_embed, const VsemParams& p);
VsemVars vsem_forward(Graph& g, Var regions, Var seg_feat, const VsemParams& p, const VsemOptions& opt);

// Value-level wrappers.
Tensor pool_segmentation(const Tensor& seg_feat, const VsemParams& p);
Tensor salience_weights(const Tensor& seg_embed, const Tensor& regions, const VsemParams& p,
                        const VsemOptions& opt = {});
Tensor semantic_fuse(const Tensor& alphas, const Tensor& regions, const Tensor& seg_embed, const VsemParams& p);
VsemOutput vsem_forward(const Tensor& regions, const Tensor& seg_feat, const VsemParams& p,
                        const VsemOptions& opt = {});

}  // namespace sshnet
