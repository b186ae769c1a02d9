// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk format for pre-extracted features.
//
// Tensor file, little-endian:
//   offset 0  "3SHT"            magic
//   offset 4  u8                format version (1)
//   offset 5  u8                dtype: 0 = f32, 1 = f64, 2 = u16 category map
//   offset 6  u8                ndim
//   offset 7  5 bytes           reserved, zero
//   offset 12 ndim x u64        dims
//   then the payload, row-major.
//
// A dataset is a directory holding manifest.json plus one tensor file per
// feature; manifest paths are relative to the manifest's directory.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sshnet/tensor.hpp"

namespace sshnet {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u16 = 2 };

inline constexpr std::uint8_t kTensorFormatVersion = 1;
inline constexpr std::uint32_t kManifestFormatVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, DType* dtype_out = nullptr);

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(const std::filesystem::path& path, DType* dtype_out = nullptr);

/// Global feature dimensions of a dataset.
struct FeatureDims {
  std::size_t regions = 36;  // K
  std::size_t region_dim = 2048;
  std::size_t grid_h = 7;
  std::size_t grid_w = 7;
  std::size_t grid_dim = 2048;
  std::size_t seg_h = 7;
  std::size_t seg_w = 7;
  std::size_t seg_classes = 133;
  std::size_t map_h = 64;
  std::size_t map_w = 64;
  std::size_t word_dim = 768;

  static FeatureDims paper() { return {}; }
  /// Shrunk dimensions for fast desk-scale runs.
  static FeatureDims small();

  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

/// Pre-extracted inputs for one image.
struct FeatureBundle {
  Tensor region_feats;  // [K x region_dim]
  Tensor grid_feats;    // [grid_h x grid_w x grid_dim]
  Tensor seg_feat;      // [seg_h x seg_w x seg_classes]
  Tensor seg_map;       // [map_h x map_w], category indices
};

struct Sentence {
  Tensor word_feats;  // [N x word_dim]
  std::size_t image_index = 0;
};

struct TextFeatureSet {
  std::vector<Sentence> sentences;
  std::size_t sentences_per_image = 5;
};

struct Dataset {
  std::string name;
  FeatureDims dims;
  std::optional<std::uint64_t> seed;
  std::vector<FeatureBundle> images;
  TextFeatureSet text;

  /// Ground truth: image index of every sentence.
  std::vector<std::size_t> sentence_images() const;
};

struct ManifestImage {
  std::size_t id = 0;
  std::string region_feats;
  std::string grid_feats;
  std::string seg_feat;
  std::string seg_map;
};

struct ManifestSentence {
  std::size_t id = 0;
  std::size_t image = 0;
  std::string word_feats;
};

struct Manifest {
  std::uint32_t format_version = kManifestFormatVersion;
  std::string dataset;
  std::size_t image_count = 0;
  std::size_t sentence_count = 0;
  std::size_t sentences_per_image = 5;
  std::optional<std::uint64_t> seed;
  FeatureDims dims;
  std::vector<ManifestImage> images;
  std::vector<ManifestSentence> sentences;
};

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);

/// Throws ValidationError naming `item` when a bundle breaks an invariant:
/// shapes agree with `dims`, K >= 1, values finite, seg_map entries are
/// integers in [0, seg_classes).
void validate_bundle(const FeatureBundle& b, const FeatureDims& dims, std::size_t item);
void validate_sentence(const Sentence& s, const FeatureDims& dims, std::size_t image_count, std::size_t item);

/// Writes every tensor plus manifest.json under `dir`. Features go to disk as
/// f32, segmentation maps as u16.
Manifest write_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// Accepts the manifest file or the directory containing manifest.json.
Dataset load_dataset(const std::filesystem::path& manifest_or_dir);

}  // namespace sshnet
