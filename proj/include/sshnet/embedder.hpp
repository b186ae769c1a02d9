// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Joint embedding model. An image becomes the row set
//
//   { P v_i }_K  u  { F [enh_i ; spa_i] + b }_K  u  { seg_embed }
//
// (original regions, semantic-spatial rows, segmentation row), pooled by a
// learned rank-weight pooling (GPO) and L2-normalised. A sentence is one FC
// per word, pooled and normalised the same way. The two sides never see each
// other's inputs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sshnet/featureio.hpp"
#include "sshnet/vsem.hpp"
#include "sshnet/vspm.hpp"

namespace sshnet {

enum class FeatureSource { region, grid };

const char* to_string(FeatureSource s);
FeatureSource feature_source_from_string(const std::string& s);

struct ModelConfig {
  FeatureSource source = FeatureSource::region;
  std::size_t embed_dim = 1024;  // D
  std::size_t input_dim = 2048;  // D_l of the chosen source
  std::size_t seg_classes = 133;
  std::size_t word_dim = 768;
  std::size_t pos_dim = 32;       // d
  std::size_t pos_channels = 16;  // C_p
  std::size_t conv_kernel = 8;
  std::size_t conv_stride = 8;
  double lambda = 4.0;
  SalienceMode salience = SalienceMode::sigmoid;
  double salience_scale_dim = 0.0;
  std::size_t gpo_table_size = 128;
  /// One GPO over all visual rows, or one per row group with the pooled
  /// vectors summed.
  bool shared_gpo = true;
  bool use_vsem = true;
  bool use_vspm = true;

  static ModelConfig paper() { return {}; }
  /// D=32, d=8, C_p=4, 4x4 stride-4 convolution.
  static ModelConfig small();
  /// "paper" or "small"; throws ConfigError otherwise.
  static ModelConfig preset(const std::string& name);

  /// Copies the input sizes of `dims` for this config's source.
  ModelConfig adapted_to(const FeatureDims& dims) const;
  /// Rows fed to the visual pooling for K inputs.
  std::size_t visual_rows(std::size_t k) const { return 2 * k + 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

struct GpoParams {
  Parameter table;  // [L]; all zeros gives mean pooling

  static GpoParams init(std::string name, std::size_t size);
};

/// Resolved weights for n rows: sum to 1, all positive.
Tensor gpo_weights(const GpoParams& g, std::size_t n);

/// Rank-weighted pooling of [n x D] rows with the table's resolved weights.
/// Throws ConfigError when n exceeds the table size.
Var gpo_pool(Graph& g, Var rows, const GpoParams& gpo);
Tensor gpo_pool(const Tensor& rows, const GpoParams& gpo);
/// Same pooling with caller-supplied weights of length n.
Tensor gpo_pool(const Tensor& rows, const Tensor& weights);

struct ModelParams {
  ModelConfig config;
  VsemParams vsem;
  VspmParams vspm;
  Parameter region_proj;  // [D x D_l]
  Parameter fuse_weight;  // [D x 2D]
  Parameter fuse_bias;    // [D]
  Parameter text_weight;  // [D x word_dim]
  Parameter text_bias;    // [D]
  GpoParams visual_gpo;
  GpoParams fused_gpo;    // only with shared_gpo off
  GpoParams seg_gpo;      // only with shared_gpo off
  GpoParams text_gpo;

  /// Validates `cfg` and draws every weight from `rng`. Biases and GPO
  /// tables start at zero.
  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  ParamList params();
  std::vector<const Parameter*> params() const;
};

/// The visual input rows of an image for the configured source: region
/// features, or the grid cells flattened to [H*W x D_grid].
Tensor visual_rows(const FeatureBundle& b, FeatureSource source);

struct ImageVars {
  VsemVars vsem;
  VspmVars vspm;
  Var embedding;  // [D], unit norm
};

/// `position_tensor` is build_position_tensor(seg_map, d, C_s).
ImageVars embed_image(Graph& g, Var visual, Var seg_feat, Var position_tensor, const ModelParams& m);
Var embed_image(Graph& g, const FeatureBundle& b, const ModelParams& m);
Var embed_text(Graph& g, Var word_feats, const ModelParams& m);

/// Pools the stacked rows and normalises.
Var fuse_visual(Graph& g, Var projected, Var enhanced, Var spatial, Var seg_embed, const ModelParams& m);

Tensor embed_image(const FeatureBundle& b, const ModelParams& m);
Tensor embed_text(const Tensor& word_feats, const ModelParams& m);

enum class Modality { image, sentence };

struct JointEmbedding {
  Tensor vector;  // [D]
  Modality modality = Modality::image;
  std::size_t source_id = 0;
};

struct EmbeddingTable {
  FeatureSource source = FeatureSource::region;
  Tensor images;     // [N x D]
  Tensor sentences;  // [S x D]
  std::vector<std::size_t> sentence_images;

  JointEmbedding image(std::size_t i) const;
  JointEmbedding sentence(std::size_t j) const;
};

/// Embeds every image and sentence; items are spread over `threads` workers
/// and the result does not depend on the split.
EmbeddingTable embed_dataset(const Dataset& ds, const ModelParams& m, unsigned threads = 1);

/// images.3sht, sentences.3sht (f64) and embeddings.json under `dir`.
void save_embeddings(const std::filesystem::path& dir, const EmbeddingTable& t);
EmbeddingTable load_embeddings(const std::filesystem::path& dir);

}  // namespace sshnet
