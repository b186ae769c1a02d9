// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Training: bidirectional hardest-negative hinge loss over in-batch cosine
// similarities, AdamW with decoupled weight decay, and a seeded sampler that
// pairs every image of a batch with one of its captions.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "sshnet/embedder.hpp"
#include "sshnet/gradcheck.hpp"

namespace sshnet {

struct TrainConfig {
  double margin = 0.2;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 25;
  std::uint64_t seed = 0;

  /// Throws ConfigError on margin <= 0, batch_size < 2, lr <= 0 or a
  /// negative weight decay.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct OptimizerState {
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
  std::uint64_t step = 0;

  static OptimizerState init(const ParamList& params);
};

/// One bias-corrected AdamW update from the accumulated Parameter::grad:
///   w -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
/// Throws TrainingError naming the parameter on a non-finite gradient, before
/// anything is modified.
void adamw_step(const ParamList& params, OptimizerState& state, double lr, double weight_decay);

/// Value of the hinge loss for a [B x B] similarity matrix (diagonal =
/// matching pairs).
double triplet_loss(const Tensor& sim, double margin);

/// Loss of one batch of aligned (image, sentence) embeddings.
Var batch_loss(std::span<const Var> images, std::span<const Var> sentences, double margin);

/// Image order of every batch of one epoch: a seeded shuffle cut into
/// batch_size chunks; a trailing chunk of one image is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t images, std::size_t batch_size, Rng& rng);

struct TrainResult {
  ModelParams model;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Deterministic in (dataset, model config, train config).
TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct LossGradCheck {
  GradReport report;
  double loss = 0.0;
  /// Smallest distance of the batch from a loss kink: over all anchors, the
  /// minimum of |hinge argument| and the gap between the hardest and the
  /// second-hardest negative. Finite differences are only meaningful when
  /// this is well above the step size.
  double kink_slack = 0.0;
};

/// Finite-difference check of every model parameter through the full batch
/// loss: the first `images` images of `ds`, each paired with its first
/// caption, at a freshly initialised model drawn from `seed`.
LossGradCheck full_loss_gradcheck(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed, double margin,
                                  double eps, double tol, std::size_t images = 4);

std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

struct Checkpoint {
  ModelParams model;
  TrainConfig train;
  std::vector<double> loss_history;
};

/// `<parameter name>.3sht` (f64) per parameter plus checkpoint.json.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// A hybrid checkpoint holds region/ and grid/ sub-checkpoints and a
/// hybrid.json marker.
void save_hybrid_checkpoint(const std::filesystem::path& dir, const Checkpoint& region, const Checkpoint& grid);
bool is_hybrid_checkpoint(const std::filesystem::path& dir);

}  // namespace sshnet
