// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic feature generator with a planted image <-> sentence
// correspondence. Every image i draws a latent code z_i; its region, grid and
// segmentation features and the word features of all its captions are noisy
// linear images of z_i under fixed per-modality mixing matrices.

#pragma once

#include <cstdint>
#include <filesystem>

#include "sshnet/featureio.hpp"

namespace sshnet {

struct SynthConfig {
  std::size_t images = 16;
  std::size_t captions_per_image = 5;
  std::uint64_t seed = 0;
  FeatureDims dims = FeatureDims::small();
  std::size_t latent_dim = 16;
  /// Regions [0, salient_regions) carry the latent signal, the rest are
  /// clutter. 0 selects ceil(K / 2).
  std::size_t salient_regions = 0;
  double noise = 0.3;
  double clutter_scale = 0.8;
  std::size_t min_words = 4;
  std::size_t max_words = 8;
  /// Upper bound on the cosine between any two latent codes.
  double max_latent_cosine = 0.7;
};

/// The generated dataset together with the generating quantities, so tests can
/// verify the planted structure independently of any model.
struct SyntheticData {
  Dataset dataset;
  Tensor latents;         // [images x latent_dim]
  Tensor region_mixing;   // [region_dim x latent_dim]
  Tensor grid_mixing;     // [grid_dim x latent_dim]
  Tensor seg_mixing;      // [seg_classes x latent_dim]
  Tensor word_mixing;     // [word_dim x latent_dim]
  std::size_t salient_regions = 0;
};

/// Deterministic in (config). Values are rounded to f32 so the in-memory
/// dataset equals what write_dataset + load_dataset produces.
SyntheticData generate_synthetic(const SynthConfig& cfg);

/// generate_synthetic + write_dataset.
Manifest synth_dataset(const std::filesystem::path& dir, const SynthConfig& cfg);

}  // namespace sshnet
