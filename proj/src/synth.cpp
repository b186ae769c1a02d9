// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/synth.hpp"

#include <cmath>

#include "sshnet/errors.hpp"
#include "sshnet/numerics.hpp"
#include "sshnet/rng.hpp"

namespace sshnet {
namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor gaussian(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = stddev * rng.normal();
  return t;
}

// out[i] = gain * (M z)[i] + noise * n_i, rounded to f32.
void mix_into(std::span<double> out, const Tensor& mixing, std::span<const double> z, double gain, double noise,
              Rng& rng) {
  const std::size_t zd = z.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = dot(mixing.data().subspan(i * zd, zd), z);
    out[i] = round_f32(gain * s + noise * rng.normal());
  }
}

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  if (cfg.images < 2) throw ConfigError("synth: need at least 2 images");
  if (cfg.captions_per_image < 1) throw ConfigError("synth: need at least 1 caption per image");
  if (cfg.min_words < 1 || cfg.max_words < cfg.min_words) throw ConfigError("synth: bad word count range");
  const FeatureDims& d = cfg.dims;
  if (d.regions < 1 || d.seg_classes < 1 || d.seg_classes > 65536) throw ConfigError("synth: bad dims");
  const std::size_t zd = cfg.latent_dim;

  Rng rng(cfg.seed);
  SyntheticData out;
  const double mix_std = 1.0 / std::sqrt(static_cast<double>(zd));
  out.region_mixing = gaussian(rng, {d.region_dim, zd}, mix_std);
  out.grid_mixing = gaussian(rng, {d.grid_dim, zd}, mix_std);
  out.seg_mixing = gaussian(rng, {d.seg_classes, zd}, mix_std);
  out.word_mixing = gaussian(rng, {d.word_dim, zd}, mix_std);
  out.salient_regions = cfg.salient_regions ? std::min(cfg.salient_regions, d.regions) : (d.regions + 1) / 2;

  // Latent codes of norm sqrt(zd), rejection-sampled to keep pairwise cosines
  // below the configured bound.
  out.latents = Tensor({cfg.images, zd});
  for (std::size_t i = 0; i < cfg.images; ++i) {
    std::vector<double> z(zd);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      for (auto& v : z) v = rng.normal();
      bool ok = true;
      for (std::size_t j = 0; j < i && ok; ++j) {
        ok = cosine(z, out.latents.row(j)) <= cfg.max_latent_cosine;
      }
      if (ok) break;
    }
    const double scale = std::sqrt(static_cast<double>(zd)) / l2_norm(z);
    for (std::size_t k = 0; k < zd; ++k) out.latents.at(i, k) = z[k] * scale;
  }

  Dataset& ds = out.dataset;
  ds.name = "synthetic";
  ds.dims = d;
  ds.seed = cfg.seed;
  ds.text.sentences_per_image = cfg.captions_per_image;
  ds.images.reserve(cfg.images);
  for (std::size_t i = 0; i < cfg.images; ++i) {
    const auto z = out.latents.row(i);
    FeatureBundle b;
    b.region_feats = Tensor({d.regions, d.region_dim});
    for (std::size_t k = 0; k < d.regions; ++k) {
      auto row = b.region_feats.row(k);
      if (k < out.salient_regions) {
        mix_into(row, out.region_mixing, z, rng.uniform(0.7, 1.3), cfg.noise, rng);
      } else {
        for (auto& v : row) v = round_f32(cfg.clutter_scale * rng.normal());
      }
    }

    b.grid_feats = Tensor({d.grid_h, d.grid_w, d.grid_dim});
    for (std::size_t c = 0; c < d.grid_h * d.grid_w; ++c) {
      mix_into(b.grid_feats.data().subspan(c * d.grid_dim, d.grid_dim), out.grid_mixing, z, rng.uniform(0.5, 1.5),
               cfg.noise, rng);
    }

    b.seg_feat = Tensor({d.seg_h, d.seg_w, d.seg_classes});
    for (std::size_t c = 0; c < d.seg_h * d.seg_w; ++c) {
      mix_into(b.seg_feat.data().subspan(c * d.seg_classes, d.seg_classes), out.seg_mixing, z, 1.0,
               cfg.noise, rng);
    }

    // Each map pixel takes the dominant channel of the segmentation cell that
    // covers it, giving a blockwise layout.
    b.seg_map = Tensor({d.map_h, d.map_w});
    for (std::size_t y = 0; y < d.map_h; ++y) {
      for (std::size_t x = 0; x < d.map_w; ++x) {
        const std::size_t cy = y * d.seg_h / d.map_h, cx = x * d.seg_w / d.map_w;
        const auto logits = b.seg_feat.data().subspan((cy * d.seg_w + cx) * d.seg_classes, d.seg_classes);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
          if (logits[c] > logits[best]) best = c;
        }
        b.seg_map.at(y, x) = static_cast<double>(best);
      }
    }
    ds.images.push_back(std::move(b));
  }

  ds.text.sentences.reserve(cfg.images * cfg.captions_per_image);
  for (std::size_t i = 0; i < cfg.images; ++i) {
    const auto z = out.latents.row(i);
    for (std::size_t c = 0; c < cfg.captions_per_image; ++c) {
      const std::size_t n = cfg.min_words + rng.index(cfg.max_words - cfg.min_words + 1);
      Sentence s;
      s.image_index = i;
      s.word_feats = Tensor({n, d.word_dim});
      for (std::size_t w = 0; w < n; ++w) {
        mix_into(s.word_feats.row(w), out.word_mixing, z, rng.uniform(0.7, 1.3), cfg.noise, rng);
      }
      ds.text.sentences.push_back(std::move(s));
    }
  }
  return out;
}

Manifest synth_dataset(const std::filesystem::path& dir, const SynthConfig& cfg) {
  return write_dataset(dir, generate_synthetic(cfg).dataset);
}

}  // namespace sshnet
