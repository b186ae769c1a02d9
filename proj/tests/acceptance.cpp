// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Tolerances and budgets are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sshnet/cli.hpp"
#include "sshnet/embedder.hpp"
#include "sshnet/featureio.hpp"
#include "sshnet/objective.hpp"
#include "sshnet/retrieval.hpp"
#include "sshnet/rng.hpp"
#include "sshnet/synth.hpp"
#include "sshnet/vsem.hpp"
#include "sshnet/vspm.hpp"

namespace {

using namespace sshnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Pinned tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kGradBudgetSec = 60.0;
constexpr std::size_t kSalienceDraws = 1000;
constexpr double kSumTol = 1e-9;
constexpr double kContextTol = 1e-12;
constexpr std::size_t kMetricInstances = 100;
constexpr std::size_t kMaxMetricImages = 50;
constexpr std::size_t kMaxCaptions = 5;  // 50 x 250 at most
constexpr std::size_t kOverfitImages = 64;
constexpr std::size_t kOverfitEpochs = 100;  // budget allows up to 300
constexpr double kOverfitBudgetSec = 600.0;
constexpr std::size_t kAblationSeeds = 5;
constexpr std::size_t kAblationEpochs = 20;
constexpr double kSpeedupTarget = 10.0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

// --- brute-force metric oracles ---------------------------------------------

// Full ordering of a score list: higher score first, lower index on ties.
std::vector<std::size_t> full_order(const std::vector<double>& s) {
  std::vector<std::size_t> o(s.size());
  std::iota(o.begin(), o.end(), 0);
  std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return o;
}

std::vector<double> row_of(const Tensor& t, std::size_t i) {
  return {t.row(i).begin(), t.row(i).end()};
}

std::vector<double> col_of(const Tensor& t, std::size_t j) {
  std::vector<double> c;
  for (std::size_t i = 0; i < t.dim(0); ++i) c.push_back(t.at(i, j));
  return c;
}

double oracle_recall_from(const std::vector<std::vector<std::size_t>>& orders, const std::vector<std::size_t>& gt_img,
                          std::size_t k, Direction dir) {
  std::size_t hits = 0;
  for (std::size_t q = 0; q < orders.size(); ++q) {
    for (std::size_t pos = 0; pos < k; ++pos) {
      const std::size_t c = orders[q][pos];
      if (dir == Direction::i2s ? gt_img[c] == q : gt_img[q] == c) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(orders.size());
}

std::vector<std::vector<std::size_t>> oracle_orders(const SimilarityMatrix& s, Direction dir) {
  std::vector<std::vector<std::size_t>> o;
  const std::size_t n = dir == Direction::i2s ? s.images() : s.sentences();
  for (std::size_t q = 0; q < n; ++q) {
    o.push_back(full_order(dir == Direction::i2s ? row_of(s.scores, q) : col_of(s.scores, q)));
  }
  return o;
}

double oracle_recall(const SimilarityMatrix& s, std::size_t k, Direction dir) {
  return oracle_recall_from(oracle_orders(s, dir), s.sentence_images, k, dir);
}

RetrievalReport oracle_report(const SimilarityMatrix& s) {
  RetrievalReport r;
  const std::size_t levels[3] = {1, 5, 10};
  for (int l = 0; l < 3; ++l) {
    r.i2s[l] = oracle_recall(s, std::min(levels[l], s.sentences()), Direction::i2s);
    r.s2i[l] = oracle_recall(s, std::min(levels[l], s.images()), Direction::s2i);
  }
  r.rsum = r.i2s[0] + r.i2s[1] + r.i2s[2] + r.s2i[0] + r.s2i[1] + r.s2i[2];
  return r;
}

RetrievalReport oracle_folds(const SimilarityMatrix& s, std::size_t folds) {
  const std::size_t per = s.images() / folds;
  RetrievalReport avg;
  for (std::size_t f = 0; f < folds; ++f) {
    SimilarityMatrix part;
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < s.sentences(); ++j) {
      if (s.sentence_images[j] / per == f) cols.push_back(j);
    }
    part.scores = Tensor({per, cols.size()});
    for (std::size_t c = 0; c < cols.size(); ++c) {
      part.sentence_images.push_back(s.sentence_images[cols[c]] - f * per);
      for (std::size_t i = 0; i < per; ++i) part.scores.at(i, c) = s.scores.at(f * per + i, cols[c]);
    }
    const RetrievalReport r = oracle_report(part);
    for (int l = 0; l < 3; ++l) {
      avg.i2s[l] += r.i2s[l];
      avg.s2i[l] += r.s2i[l];
    }
  }
  for (int l = 0; l < 3; ++l) {
    avg.i2s[l] /= static_cast<double>(folds);
    avg.s2i[l] /= static_cast<double>(folds);
  }
  avg.rsum = avg.i2s[0] + avg.i2s[1] + avg.i2s[2] + avg.s2i[0] + avg.s2i[1] + avg.s2i[2];
  return avg;
}

std::vector<std::size_t> oracle_ensemble_order(const std::vector<double>& a, const std::vector<double>& b) {
  const auto oa = full_order(a), ob = full_order(b);
  std::vector<std::size_t> ra(a.size()), rb(b.size());
  for (std::size_t p = 0; p < oa.size(); ++p) {
    ra[oa[p]] = p;
    rb[ob[p]] = p;
  }
  std::vector<std::size_t> o(a.size());
  std::iota(o.begin(), o.end(), 0);
  std::stable_sort(o.begin(), o.end(), [&](std::size_t x, std::size_t y) {
    const double mx = 0.5 * static_cast<double>(ra[x] + rb[x]), my = 0.5 * static_cast<double>(ra[y] + rb[y]);
    if (mx != my) return mx < my;
    return a[x] + b[x] > a[y] + b[y];
  });
  return o;
}

bool same_report(const RetrievalReport& x, const RetrievalReport& y) {
  for (int l = 0; l < 3; ++l) {
    if (x.i2s[l] != y.i2s[l] || x.s2i[l] != y.s2i[l]) return false;
  }
  return x.rsum == y.rsum;
}

SimilarityMatrix random_instance(Rng& rng, std::size_t n, std::size_t caps, bool coarse) {
  SimilarityMatrix s;
  s.scores = Tensor({n, n * caps});
  // Coarse scores force plenty of ties.
  for (double& v : s.scores.data()) v = coarse ? std::floor(rng.uniform(-3.0, 3.0)) : rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < caps; ++c) s.sentence_images.push_back(i);
  }
  return s;
}

// --- criteria ---------------------------------------------------------------

Outcome gradient_fidelity() {
  SynthConfig sc;
  sc.images = 4;
  sc.captions_per_image = 1;
  sc.seed = 7;
  const Dataset ds = generate_synthetic(sc).dataset;
  const ModelConfig mc = ModelConfig::small().adapted_to(ds.dims);
  const auto t0 = Clock::now();
  const LossGradCheck r = full_loss_gradcheck(ds, mc, 7, 0.2, kGradEps, kGradRelTol, 4);
  const double secs = seconds_since(t0);
  return {r.report.passed && r.report.max_rel_err < kGradRelTol && secs < kGradBudgetSec,
          fmt("K=%zu D=%zu d=%zu Cp=%zu, %zu coords, max_rel_err %.2e (worst %s), kink_slack %.2e, %.1fs", ds.dims.regions,
              mc.embed_dim, mc.pos_dim, mc.pos_channels, r.report.coordinates, r.report.max_rel_err,
              r.report.worst_param_path.c_str(), r.kink_slack, secs)};
}

Outcome salience_bounds() {
  Rng rng(2024);
  std::size_t violations = 0;
  double worst_sum = 0.0;
  const std::size_t dims[] = {4, 16, 32, 64};
  for (std::size_t t = 0; t < kSalienceDraws; ++t) {
    const std::size_t d = dims[t % 4], in = 3 + rng.index(12), cs = 2 + rng.index(10), k = 1 + rng.index(12);
    const VsemParams p = VsemParams::init(d, in, cs, rng);
    Tensor regions({k, in}), seg({2, 2, cs});
    for (double& v : regions.data()) v = rng.normal() * rng.uniform(0.1, 10.0);
    for (double& v : seg.data()) v = rng.normal();
    const Tensor seg_embed = pool_segmentation(seg, p);
    const double b = 1.0 / std::sqrt(static_cast<double>(d));
    const double lo = 1.0 / (1.0 + std::exp(b)), hi = 1.0 / (1.0 + std::exp(-b));
    const Tensor a = salience_weights(seg_embed, regions, p, {SalienceMode::sigmoid, 0.0});
    for (double x : a.data()) violations += !(x > lo && x < hi);
    const Tensor s = salience_weights(seg_embed, regions, p, {SalienceMode::softmax, 0.0});
    double sum = 0.0;
    for (double x : s.data()) sum += x;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  return {violations == 0 && worst_sum <= kSumTol,
          fmt("%zu draws, %zu sigmoid values outside bounds, softmax max |sum-1| %.1e", kSalienceDraws, violations,
              worst_sum)};
}

Outcome spatial_attention_rows() {
  Rng rng(99);
  double worst_sum = 0.0, worst_uniform = 0.0, worst_ctx = 0.0;
  for (std::size_t t = 0; t < 200; ++t) {
    const std::size_t d = 8, cs = 16, cp = 1 + rng.index(4), in = 4 + rng.index(8), k = 1 + rng.index(10);
    const double lambda = rng.uniform(0.5, 10.0);
    VspmParams p = VspmParams::init(8, in, cs, d, cp, 4, 4, lambda, rng);
    const std::size_t h = 1 + rng.index(5), w = 1 + rng.index(5), m = h * w;
    Tensor regions({k, in}), refined({h, w, cp});
    for (double& v : regions.data()) v = rng.normal();
    for (double& v : refined.data()) v = rng.normal();
    const auto [betas, context] = spatial_attention(regions, refined, p);
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (double x : betas.row(i)) s += x;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    p.lambda = 0.0;
    const Tensor uniform = spatial_attention(regions, refined, p).first;
    for (double x : uniform.data()) worst_uniform = std::max(worst_uniform, std::abs(x - 1.0 / static_cast<double>(m)));
    p.lambda = lambda;
    Tensor same({h, w, cp});
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < cp; ++c) same[r * cp + c] = refined[c];
    }
    const Tensor ctx = spatial_attention(regions, same, p).second;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t c = 0; c < cp; ++c) worst_ctx = std::max(worst_ctx, std::abs(ctx.at(i, c) - refined[c]));
    }
  }
  // Uniform rows are required exactly.
  return {worst_sum <= kSumTol && worst_uniform == 0.0 && worst_ctx <= kContextTol,
          fmt("200 draws, max |row sum-1| %.1e, lambda=0 max deviation %.1e, identical-rows context err %.1e", worst_sum,
              worst_uniform, worst_ctx)};
}

Outcome metric_oracles() {
  Rng rng(31337);
  std::size_t mismatches = 0, largest = 0;
  std::string first;
  auto miss = [&](std::size_t inst, const char* what) {
    if (mismatches++ == 0) first = fmt("instance %zu: %s", inst, what);
  };
  for (std::size_t inst = 0; inst < kMetricInstances; ++inst) {
    // The last instance is always the full 50 x 250.
    const std::size_t n = inst + 1 == kMetricInstances ? kMaxMetricImages : 2 + rng.index(kMaxMetricImages - 1);
    const std::size_t caps = inst + 1 == kMetricInstances ? kMaxCaptions : 1 + rng.index(kMaxCaptions);
    const bool coarse = inst % 3 == 0;
    const SimilarityMatrix a = random_instance(rng, n, caps, coarse), b = random_instance(rng, n, caps, coarse);
    largest = std::max(largest, n * n * caps);
    for (std::size_t k = 1; k <= a.sentences(); k += 1 + k / 4) {
      if (recall_at_k(a, k, Direction::i2s) != oracle_recall(a, k, Direction::i2s)) miss(inst, "recall i2s");
    }
    for (std::size_t k = 1; k <= a.images(); ++k) {
      if (recall_at_k(a, k, Direction::s2i) != oracle_recall(a, k, Direction::s2i)) miss(inst, "recall s2i");
    }
    const RetrievalReport ev = evaluate(a);
    if (!same_report(ev, oracle_report(a))) miss(inst, "evaluate");
    if (rsum(ev) != ev.rsum) miss(inst, "rsum");
    for (std::size_t folds : {1, 2, 5}) {
      if (n % folds != 0) continue;
      if (!same_report(fivefold_eval(a, folds), oracle_folds(a, folds))) miss(inst, "fivefold_eval");
    }
    for (Direction dir : {Direction::i2s, Direction::s2i}) {
      const auto got = ensemble_ranks(a, b, dir);
      const std::size_t queries = dir == Direction::i2s ? n : n * caps;
      std::vector<std::vector<std::size_t>> want;
      for (std::size_t q = 0; q < queries; ++q) {
        want.push_back(dir == Direction::i2s ? oracle_ensemble_order(row_of(a.scores, q), row_of(b.scores, q))
                                             : oracle_ensemble_order(col_of(a.scores, q), col_of(b.scores, q)));
      }
      if (got != want) miss(inst, "ensemble_ranks");
    }
    const RetrievalReport en = ensemble_eval(a, b);
    std::vector<std::vector<std::size_t>> wi, ws;
    for (std::size_t q = 0; q < n; ++q) wi.push_back(oracle_ensemble_order(row_of(a.scores, q), row_of(b.scores, q)));
    for (std::size_t q = 0; q < n * caps; ++q) {
      ws.push_back(oracle_ensemble_order(col_of(a.scores, q), col_of(b.scores, q)));
    }
    const std::size_t levels[3] = {1, 5, 10};
    for (int l = 0; l < 3; ++l) {
      if (en.i2s[l] != oracle_recall_from(wi, a.sentence_images, std::min(levels[l], n * caps), Direction::i2s) ||
          en.s2i[l] != oracle_recall_from(ws, a.sentence_images, std::min(levels[l], n), Direction::s2i)) {
        miss(inst, "ensemble_eval");
      }
    }
  }
  return {mismatches == 0, fmt("%zu instances (largest %zu scores), %zu mismatches%s%s", kMetricInstances, largest,
                               mismatches, mismatches ? ", first " : "", first.c_str())};
}

Outcome overfit() {
  SynthConfig sc;
  sc.images = kOverfitImages;
  sc.captions_per_image = 5;
  sc.seed = 11;
  const Dataset ds = generate_synthetic(sc).dataset;
  const ModelConfig mc = ModelConfig::small().adapted_to(ds.dims);
  TrainConfig tc;
  tc.epochs = kOverfitEpochs;
  tc.batch_size = 32;
  tc.seed = 1;
  const auto t0 = Clock::now();
  const TrainResult res = train(ds, mc, tc);
  const RetrievalReport r = evaluate(similarity_matrix(embed_dataset(ds, res.model)));
  const double secs = seconds_since(t0);
  const double l1 = res.epoch_loss.at(0), l20 = res.epoch_loss.at(19);
  return {r.i2s[0] == 100.0 && r.s2i[0] == 100.0 && r.rsum == 600.0 && l20 < l1 && secs < kOverfitBudgetSec,
          fmt("%zu epochs: R@1 i2s %.1f s2i %.1f, rSum %.1f, loss epoch1 %.4f epoch20 %.4f, %.1fs", kOverfitEpochs,
              r.i2s[0], r.s2i[0], r.rsum, l1, l20, secs)};
}

Outcome ablation() {
  double sums[3] = {0, 0, 0};
  for (std::size_t s = 0; s < kAblationSeeds; ++s) {
    SynthConfig sc;
    sc.images = 64;
    sc.seed = 100 + s;
    const Dataset ds = generate_synthetic(sc).dataset;
    for (int v = 0; v < 3; ++v) {
      ModelConfig mc = ModelConfig::small().adapted_to(ds.dims);
      mc.use_vsem = v != 1;
      mc.use_vspm = v != 2;
      TrainConfig tc;
      tc.epochs = kAblationEpochs;
      tc.seed = s;
      const TrainResult res = train(ds, mc, tc);
      sums[v] += evaluate(similarity_matrix(embed_dataset(ds, res.model))).rsum;
    }
  }
  const double n = static_cast<double>(kAblationSeeds);
  const double full = sums[0] / n, no_sem = sums[1] / n, no_spm = sums[2] / n;
  return {full >= no_sem && full >= no_spm,
          fmt("mean rSum over %zu seeds at %zu epochs: full %.1f, no-VSeM %.1f, no-VSpM %.1f", kAblationSeeds,
              kAblationEpochs, full, no_sem, no_spm)};
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "sshnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (code != kExitOk) std::cerr << e.str();
  return code;
}

Outcome throughput() {
  // Paper dims: K=36, D=1024; gallery of 1000 images x 5 sentences.
  std::string out;
  const int code = cli({"bench", "--dims", "paper", "--gallery-images", "1000", "--captions", "5", "--queries", "1000",
                        "--recompute-queries", "20", "--trials", "5", "--mode", "both", "--seed", "3"},
                       &out);
  if (code != kExitOk) return {false, fmt("bench exited with %d", code)};
  const nlohmann::json j = nlohmann::json::parse(out);
  const double speedup = j.at("speedup").get<double>();
  return {speedup >= kSpeedupTarget,
          fmt("precomputed %.2f Kpps, recompute %.4f Kpps (median of 5), ratio %.1fx (target %.0fx)",
              j["precomputed"]["kpps"].get<double>(), j["recompute"]["kpps"].get<double>(), speedup, kSpeedupTarget)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Every regular file under `a` has a byte-identical twin under `b`.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    if (slurp(e.path()) != slurp(b / fs::relative(e.path(), a))) return false;
  }
  return true;
}

Outcome format_determinism() {
  Rng rng(5);
  std::size_t bad = 0;
  const fs::path root = fs::temp_directory_path() / "sshnet_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  for (std::size_t t = 0; t < 60; ++t) {
    Shape shape;
    for (std::size_t r = 0, rank = rng.index(4); r < rank; ++r) shape.push_back(1 + rng.index(6));
    Tensor x(shape);
    const DType dt = static_cast<DType>(t % 3);
    for (double& v : x.data()) {
      v = dt == DType::u16 ? std::floor(rng.uniform(0.0, 65536.0))
                           : (dt == DType::f32 ? static_cast<double>(static_cast<float>(rng.normal())) : rng.normal());
    }
    const auto bytes = encode_tensor(x, dt);
    const fs::path p = root / ("t" + std::to_string(t) + ".3sht");
    write_tensor(p, x, dt);
    const std::string on_disk = slurp(p);
    DType back{};
    const Tensor y = read_tensor(p, &back);
    bad += !(std::string(bytes.begin(), bytes.end()) == on_disk && back == dt &&
             y.shape() == x.shape() && encode_tensor(y, dt) == bytes);
  }
  std::string eval[2];
  int codes = 0;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path d = root / ("run" + std::to_string(rep));
    codes |= cli({"synth", "--images", "12", "--captions", "5", "--seed", "8", "--out", (d / "data").string()});
    codes |= cli({"train", "--data", (d / "data").string(), "--out", (d / "ck").string(), "--epochs", "3",
                  "--batch-size", "6", "--seed", "8", "--quiet"});
    codes |= cli({"eval", "--data", (d / "data").string(), "--ckpt", (d / "ck").string()}, &eval[rep]);
  }
  std::size_t files = 0;
  const bool same = codes == 0 && eval[0] == eval[1] && same_tree(root / "run0", root / "run1", files);
  fs::remove_all(root);
  return {bad == 0 && same, fmt("60 tensor files, %zu round-trip failures; pipeline rerun %s (%zu files + eval output)",
                                bad, same ? "byte-identical" : "DIFFERS", files)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient-fidelity", gradient_fidelity},   {"salience-bounds", salience_bounds},
      {"spatial-attention", spatial_attention_rows}, {"metric-oracles", metric_oracles},
      {"overfit-retrievability", overfit},        {"ablation-direction", ablation},
      {"throughput-ratio", throughput},           {"format-determinism", format_determinism},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.passed;
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << (8 - failed) << "/8" << std::endl;
  return failed ? 1 : 0;
}
