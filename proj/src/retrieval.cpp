// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "sshnet/errors.hpp"
#include "sshnet/numerics.hpp"
#include "sshnet/parallel.hpp"

namespace sshnet {

using json = nlohmann::ordered_json;

SimilarityMatrix similarity_matrix(const Tensor& image_embs, const Tensor& sentence_embs,
                                   std::vector<std::size_t> sentence_images, unsigned threads) {
  if (image_embs.rank() != 2 || sentence_embs.rank() != 2 || image_embs.dim(1) != sentence_embs.dim(1)) {
    throw DimensionError("similarity_matrix: " + shape_string(image_embs.shape()) + " vs " +
                         shape_string(sentence_embs.shape()));
  }
  if (sentence_images.size() != sentence_embs.dim(0)) {
    throw DimensionError("similarity_matrix: ground truth covers " + std::to_string(sentence_images.size()) +
                         " sentences, table has " + std::to_string(sentence_embs.dim(0)));
  }
  const std::size_t n = image_embs.dim(0), s = sentence_embs.dim(0);
  for (std::size_t g : sentence_images) {
    if (g >= n) throw ValidationError("similarity_matrix: sentence refers to image " + std::to_string(g));
  }
  SimilarityMatrix out{Tensor({n, s}), std::move(sentence_images)};
  parallel_for(n, threads, [&](std::size_t i) {
    const auto u = image_embs.row(i);
    for (std::size_t j = 0; j < s; ++j) out.scores.at(i, j) = dot(u, sentence_embs.row(j));
  });
  return out;
}

SimilarityMatrix similarity_matrix(const EmbeddingTable& t, unsigned threads) {
  return similarity_matrix(t.images, t.sentences, t.sentence_images, threads);
}

std::vector<std::size_t> rank_candidates(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

// 0-based rank of candidate c among `scores` under the tie rule.
std::size_t rank_of(std::span<const double> scores, std::size_t c) {
  const double sc = scores[c];
  std::size_t r = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > sc || (scores[j] == sc && j < c)) ++r;
  }
  return r;
}

std::vector<double> column(const Tensor& t, std::size_t j) {
  std::vector<double> c(t.dim(0));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = t.at(i, j);
  return c;
}

std::size_t candidate_count(const SimilarityMatrix& sim, Direction dir) {
  return dir == Direction::i2s ? sim.sentences() : sim.images();
}

void require_k(std::size_t k, std::size_t candidates) {
  if (k == 0 || k > candidates) {
    throw ConfigError("recall@" + std::to_string(k) + " needs 1 <= k <= " + std::to_string(candidates) +
                      " candidates");
  }
}

double percent(std::size_t hits, std::size_t queries) {
  return queries == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
}

}  // namespace

double recall_at_k(const SimilarityMatrix& sim, std::size_t k, Direction dir) {
  require_k(k, candidate_count(sim, dir));
  std::size_t hits = 0;
  if (dir == Direction::s2i) {
    for (std::size_t j = 0; j < sim.sentences(); ++j) {
      const std::vector<double> col = column(sim.scores, j);
      if (rank_of(col, sim.sentence_images[j]) < k) ++hits;
    }
    return percent(hits, sim.sentences());
  }
  std::vector<std::vector<std::size_t>> captions(sim.images());
  for (std::size_t j = 0; j < sim.sentences(); ++j) captions[sim.sentence_images[j]].push_back(j);
  for (std::size_t i = 0; i < sim.images(); ++i) {
    if (captions[i].empty()) continue;
    const auto row = sim.scores.row(i);
    // The best-ranked caption is the highest scoring one, lowest index first.
    std::size_t best = captions[i].front();
    for (std::size_t c : captions[i]) {
      if (row[c] > row[best]) best = c;
    }
    if (rank_of(row, best) < k) ++hits;
  }
  return percent(hits, sim.images());
}

double rsum(const RetrievalReport& r) {
  return r.i2s[0] + r.i2s[1] + r.i2s[2] + r.s2i[0] + r.s2i[1] + r.s2i[2];
}

RetrievalReport evaluate(const SimilarityMatrix& sim, const std::string& mode) {
  RetrievalReport r;
  r.mode = mode;
  for (int l = 0; l < 3; ++l) {
    r.i2s[l] = recall_at_k(sim, std::min(kRecallLevels[l], sim.sentences()), Direction::i2s);
    r.s2i[l] = recall_at_k(sim, std::min(kRecallLevels[l], sim.images()), Direction::s2i);
  }
  r.rsum = rsum(r);
  return r;
}

namespace {

SimilarityMatrix fold_slice(const SimilarityMatrix& sim, std::size_t f, std::size_t per_fold) {
  const std::size_t lo = f * per_fold, hi = lo + per_fold;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < sim.sentences(); ++j) {
    if (sim.sentence_images[j] >= lo && sim.sentence_images[j] < hi) cols.push_back(j);
  }
  SimilarityMatrix out{Tensor({per_fold, cols.size()}), {}};
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.sentence_images.push_back(sim.sentence_images[cols[c]] - lo);
    for (std::size_t i = 0; i < per_fold; ++i) out.scores.at(i, c) = sim.scores.at(lo + i, cols[c]);
  }
  return out;
}

}  // namespace

RetrievalReport fivefold_eval(const SimilarityMatrix& sim, std::size_t folds, const std::string& mode) {
  if (folds == 0 || sim.images() % folds != 0 || sim.sentences() % folds != 0) {
    throw ConfigError("fold evaluation: " + std::to_string(sim.images()) + " images and " +
                      std::to_string(sim.sentences()) + " sentences are not divisible into " + std::to_string(folds) +
                      " folds");
  }
  const std::size_t per_fold = sim.images() / folds;
  RetrievalReport avg;
  avg.mode = mode;
  for (std::size_t f = 0; f < folds; ++f) {
    const SimilarityMatrix part = fold_slice(sim, f, per_fold);
    if (part.sentences() * folds != sim.sentences()) {
      throw ConfigError("fold evaluation: fold " + std::to_string(f) + " does not hold an equal share of sentences");
    }
    const RetrievalReport r = evaluate(part, mode);
    for (int l = 0; l < 3; ++l) {
      avg.i2s[l] += r.i2s[l];
      avg.s2i[l] += r.s2i[l];
    }
  }
  for (int l = 0; l < 3; ++l) {
    avg.i2s[l] /= static_cast<double>(folds);
    avg.s2i[l] /= static_cast<double>(folds);
  }
  avg.rsum = rsum(avg);
  return avg;
}

std::vector<std::vector<std::size_t>> ensemble_ranks(const SimilarityMatrix& a, const SimilarityMatrix& b,
                                                     Direction dir) {
  if (a.scores.shape() != b.scores.shape() || a.sentence_images != b.sentence_images) {
    throw DimensionError("ensemble_ranks: the two similarity matrices cover different items");
  }
  const std::size_t queries = dir == Direction::i2s ? a.images() : a.sentences();
  std::vector<std::vector<std::size_t>> out(queries);
  for (std::size_t q = 0; q < queries; ++q) {
    std::vector<double> sa, sb;
    if (dir == Direction::i2s) {
      sa.assign(a.scores.row(q).begin(), a.scores.row(q).end());
      sb.assign(b.scores.row(q).begin(), b.scores.row(q).end());
    } else {
      sa = column(a.scores, q);
      sb = column(b.scores, q);
    }
    const std::size_t n = sa.size();
    // Sum of 1-based ranks orders the same as their mean.
    std::vector<std::size_t> rank_sum(n, 2);
    const auto oa = rank_candidates(sa), ob = rank_candidates(sb);
    for (std::size_t r = 0; r < n; ++r) {
      rank_sum[oa[r]] += r;
      rank_sum[ob[r]] += r;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (rank_sum[x] != rank_sum[y]) return rank_sum[x] < rank_sum[y];
      const double tx = sa[x] + sb[x], ty = sa[y] + sb[y];
      if (tx != ty) return tx > ty;
      return x < y;
    });
    out[q] = std::move(order);
  }
  return out;
}

double recall_from_rankings(const std::vector<std::vector<std::size_t>>& rankings,
                            const std::vector<std::size_t>& sentence_images, std::size_t k, Direction dir) {
  if (rankings.empty()) return 0.0;
  require_k(k, rankings.front().size());
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t c = rankings[q][r];
      const bool hit = dir == Direction::i2s ? sentence_images[c] == q : c == sentence_images[q];
      if (hit) {
        ++hits;
        break;
      }
    }
  }
  return percent(hits, rankings.size());
}

RetrievalReport ensemble_eval(const SimilarityMatrix& a, const SimilarityMatrix& b, const std::string& mode) {
  const auto ri = ensemble_ranks(a, b, Direction::i2s);
  const auto rs = ensemble_ranks(a, b, Direction::s2i);
  RetrievalReport r;
  r.mode = mode;
  for (int l = 0; l < 3; ++l) {
    r.i2s[l] = recall_from_rankings(ri, a.sentence_images, std::min(kRecallLevels[l], a.sentences()), Direction::i2s);
    r.s2i[l] = recall_from_rankings(rs, a.sentence_images, std::min(kRecallLevels[l], a.images()), Direction::s2i);
  }
  r.rsum = rsum(r);
  return r;
}

std::string report_to_json(const RetrievalReport& r) {
  json j = {{"mode", r.mode},
            {"i2s", {{"r1", r.i2s[0]}, {"r5", r.i2s[1]}, {"r10", r.i2s[2]}}},
            {"s2i", {{"r1", r.s2i[0]}, {"r5", r.s2i[1]}, {"r10", r.s2i[2]}}},
            {"rsum", r.rsum}};
  if (r.kpps) j["kpps"] = *r.kpps;
  return j.dump(2);
}

std::string report_table(std::span<const RetrievalReport> reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s | %-22s | %-22s | %7s\n", "", "Image-to-Sentence", "Sentence-to-Image", "");
  out += line;
  std::snprintf(line, sizeof line, "%-10s | %6s %6s %6s   | %6s %6s %6s   | %7s\n", "mode", "R@1", "R@5", "R@10", "R@1",
                "R@5", "R@10", "rSum");
  out += line;
  out += std::string(10, '-') + "-+-" + std::string(22, '-') + "-+-" + std::string(22, '-') + "-+-" +
         std::string(7, '-') + "\n";
  for (const RetrievalReport& r : reports) {
    std::snprintf(line, sizeof line, "%-10s | %6.1f %6.1f %6.1f   | %6.1f %6.1f %6.1f   | %7.1f\n", r.mode.c_str(),
                  r.i2s[0], r.i2s[1], r.i2s[2], r.s2i[0], r.s2i[1], r.s2i[2], r.rsum);
    out += line;
  }
  return out;
}

double kpps(std::size_t queries, double seconds) {
  if (!(seconds > 0.0)) throw ConfigError("kpps: elapsed time must be positive");
  return static_cast<double>(queries) / seconds / 1000.0;
}

namespace {

using Clock = std::chrono::steady_clock;

// Scores one query against the gallery and returns a checksum of its top k so
// the work cannot be optimised away.
std::size_t score_query(std::span<const double> query, const Tensor& gallery, std::size_t top_k,
                        std::vector<double>& scores, std::vector<std::size_t>& idx) {
  const std::size_t s = gallery.dim(0);
  for (std::size_t j = 0; j < s; ++j) scores[j] = dot(query, gallery.row(j));
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t k = std::min(top_k, s);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  std::size_t sum = 0;
  for (std::size_t r = 0; r < k; ++r) sum += idx[r] * (r + 1);
  return sum;
}

template <typename QueryFn>
BenchResult run_bench(const std::string& mode, const BenchConfig& cfg, QueryFn&& query) {
  if (cfg.queries == 0 || cfg.trials == 0) throw ConfigError("bench: queries and trials must be >= 1");
  BenchResult r;
  r.mode = mode;
  r.queries = cfg.queries;
  if (cfg.queries < 100) {
    r.warning = "only " + std::to_string(cfg.queries) + " queries per trial; throughput will be noisy";
  }
  volatile std::size_t sink = 0;
  for (std::size_t q = 0; q < cfg.warmup; ++q) sink = sink + query(q);
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const auto start = Clock::now();
    std::size_t acc = 0;
    for (std::size_t q = 0; q < cfg.queries; ++q) acc += query(q);
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    sink = sink + acc;
    r.trial_kpps.push_back(kpps(cfg.queries, std::max(secs, 1e-9)));
  }
  std::vector<double> sorted = r.trial_kpps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  r.kpps = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  return r;
}

}  // namespace

BenchResult bench_precomputed(const Tensor& query_embs, const Tensor& gallery, const BenchConfig& cfg) {
  if (query_embs.rank() != 2 || gallery.rank() != 2 || query_embs.dim(1) != gallery.dim(1) || query_embs.dim(0) == 0) {
    throw DimensionError("bench: query " + shape_string(query_embs.shape()) + " vs gallery " +
                         shape_string(gallery.shape()));
  }
  std::vector<double> scores(gallery.dim(0));
  std::vector<std::size_t> idx(gallery.dim(0));
  return run_bench("precomputed", cfg, [&](std::size_t q) {
    return score_query(query_embs.row(q % query_embs.dim(0)), gallery, cfg.top_k, scores, idx);
  });
}

BenchResult bench_recompute(const std::vector<FeatureBundle>& query_images, const ModelParams& model,
                            const Tensor& gallery, const BenchConfig& cfg) {
  if (query_images.empty()) throw ConfigError("bench: no query images");
  if (gallery.rank() != 2 || gallery.dim(1) != model.config.embed_dim) {
    throw DimensionError("bench: gallery " + shape_string(gallery.shape()) + " does not match embedding size " +
                         std::to_string(model.config.embed_dim));
  }
  std::vector<double> scores(gallery.dim(0));
  std::vector<std::size_t> idx(gallery.dim(0));
  return run_bench("recompute", cfg, [&](std::size_t q) {
    const Tensor e = embed_image(query_images[q % query_images.size()], model);
    return score_query(e.data(), gallery, cfg.top_k, scores, idx);
  });
}

std::string bench_to_json(const BenchResult& r) {
  json j = {{"mode", r.mode}, {"kpps", r.kpps}, {"queries", r.queries}, {"trial_kpps", r.trial_kpps}};
  if (r.warning) j["warning"] = *r.warning;
  return j.dump(2);
}

}  // namespace sshnet
