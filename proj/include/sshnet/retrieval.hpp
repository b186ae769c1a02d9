// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Retrieval metrics over an image x sentence similarity matrix, rank-level
// fusion of two models, and the query throughput benchmark.
//
// Rankings are by descending score; equal scores rank the lower candidate
// index first.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sshnet/embedder.hpp"

namespace sshnet {

enum class Direction { i2s, s2i };

struct SimilarityMatrix {
  Tensor scores;  // [N images x S sentences]
  std::vector<std::size_t> sentence_images;  // ground-truth image of each sentence

  std::size_t images() const { return scores.dim(0); }
  std::size_t sentences() const { return scores.dim(1); }
};

/// Pairwise dot products of unit rows. Rows are split over `threads`
/// workers; every entry is an independent dot product, so the output does not
/// depend on the split.
SimilarityMatrix similarity_matrix(const Tensor& image_embs, const Tensor& sentence_embs,
                                   std::vector<std::size_t> sentence_images, unsigned threads = 1);
SimilarityMatrix similarity_matrix(const EmbeddingTable& t, unsigned threads = 1);

/// Candidate indices sorted best first.
std::vector<std::size_t> rank_candidates(std::span<const double> scores);

/// Percentage of queries with a ground-truth candidate among the top k. For
/// i2s an image counts when any of its sentences is in its top k. Throws
/// ConfigError if k is 0 or exceeds the candidate count.
double recall_at_k(const SimilarityMatrix& sim, std::size_t k, Direction dir);

struct RetrievalReport {
  std::string mode = "region";
  double i2s[3] = {0, 0, 0};  // R@1, R@5, R@10
  double s2i[3] = {0, 0, 0};
  double rsum = 0.0;
  std::optional<double> kpps;
};

inline constexpr std::size_t kRecallLevels[3] = {1, 5, 10};

/// Sum of the six recalls.
double rsum(const RetrievalReport& r);

/// R@{1,5,10} both ways. Levels above the candidate count are clamped to it.
RetrievalReport evaluate(const SimilarityMatrix& sim, const std::string& mode = "region");

/// Splits images into `folds` contiguous blocks, each with the sentences of
/// its images, evaluates every block and averages the recalls. Throws
/// ConfigError when the image or sentence count is not divisible.
RetrievalReport fivefold_eval(const SimilarityMatrix& sim, std::size_t folds = 5, const std::string& mode = "region");

/// Per query (a row for i2s, a column for s2i), the candidates ordered by the
/// mean of their 1-based ranks under `a` and `b`; ties go to the higher
/// summed score, then the lower index.
std::vector<std::vector<std::size_t>> ensemble_ranks(const SimilarityMatrix& a, const SimilarityMatrix& b,
                                                     Direction dir);

/// Recall from explicit per-query rankings.
double recall_from_rankings(const std::vector<std::vector<std::size_t>>& rankings,
                            const std::vector<std::size_t>& sentence_images, std::size_t k, Direction dir);

/// evaluate() on the fused rankings of two models over the same items.
RetrievalReport ensemble_eval(const SimilarityMatrix& a, const SimilarityMatrix& b, const std::string& mode = "hybrid");

std::string report_to_json(const RetrievalReport& r);
/// Aligned plain-text table, one row per report.
std::string report_table(std::span<const RetrievalReport> reports);

struct BenchConfig {
  std::size_t queries = 1000;
  std::size_t warmup = 3;  // untimed queries before the trials
  std::size_t trials = 5;
  std::size_t top_k = 10;
};

struct BenchResult {
  std::string mode;
  double kpps = 0.0;  // median over trials
  std::vector<double> trial_kpps;
  std::size_t queries = 0;
  /// Set when the run is too short to be trusted.
  std::optional<std::string> warning;
};

/// Thousands of queries per second from a query count and elapsed time.
double kpps(std::size_t queries, double seconds);

/// Image queries scored against a cached sentence table: each query takes an
/// image embedding (row q mod N of `query_embs`), scores every gallery row and
/// keeps the top_k.
BenchResult bench_precomputed(const Tensor& query_embs, const Tensor& gallery, const BenchConfig& cfg);

/// Same queries, but every query first runs the full visual forward pass of
/// its image (bundle q mod n) before scoring.
BenchResult bench_recompute(const std::vector<FeatureBundle>& query_images, const ModelParams& model,
                            const Tensor& gallery, const BenchConfig& cfg);

std::string bench_to_json(const BenchResult& r);

}  // namespace sshnet
