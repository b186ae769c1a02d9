// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "sshnet/errors.hpp"
#include "sshnet/numerics.hpp"
#include "sshnet/objective.hpp"
#include "sshnet/retrieval.hpp"
#include "sshnet/synth.hpp"

namespace sshnet {

namespace {

using nlohmann::ordered_json;

struct ModelFlags {
  std::string dims = "auto";
  std::size_t embed_dim = 0;
  std::size_t pos_dim = 0;
  std::size_t pos_channels = 0;
  double lambda = 4.0;
  std::string salience = "sigmoid";
  double salience_scale_dim = 0.0;
  std::size_t gpo_table = 128;
  bool separate_gpo = false;
  bool no_vsem = false;
  bool no_vspm = false;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--dims", f.dims, "Model size preset: small, paper, or auto (small for small-dim data)")
      ->check(CLI::IsMember({"auto", "small", "paper"}));
  cmd->add_option("--embed-dim", f.embed_dim, "Joint embedding size D (0 = preset)");
  cmd->add_option("--pos-dim", f.pos_dim, "Positional code length d (0 = preset)");
  cmd->add_option("--pos-channels", f.pos_channels, "Refined position channels C_p (0 = preset)");
  cmd->add_option("--lambda", f.lambda, "Spatial attention smoothing");
  cmd->add_option("--salience", f.salience, "Salience activation")->check(CLI::IsMember({"sigmoid", "softmax"}));
  cmd->add_option("--salience-scale-dim", f.salience_scale_dim, "Cosine scale dimension (0 = D)");
  cmd->add_option("--gpo-table", f.gpo_table, "GPO weight table length");
  cmd->add_flag("--separate-gpo", f.separate_gpo, "One GPO per visual row group instead of a shared one");
  cmd->add_flag("--no-vsem", f.no_vsem, "Ablate the semantic branch");
  cmd->add_flag("--no-vspm", f.no_vspm, "Ablate the spatial branch");
}

ModelConfig model_config(const ModelFlags& f, const FeatureDims& dims, FeatureSource source) {
  std::string preset = f.dims;
  if (preset == "auto") preset = dims == FeatureDims::small() ? "small" : "paper";
  ModelConfig c = ModelConfig::preset(preset);
  c.source = source;
  c = c.adapted_to(dims);
  if (f.embed_dim) c.embed_dim = f.embed_dim;
  if (f.pos_dim) c.pos_dim = f.pos_dim;
  if (f.pos_channels) c.pos_channels = f.pos_channels;
  c.lambda = f.lambda;
  c.salience = salience_mode_from_string(f.salience);
  c.salience_scale_dim = f.salience_scale_dim;
  c.gpo_table_size = f.gpo_table;
  c.shared_gpo = !f.separate_gpo;
  c.use_vsem = !f.no_vsem;
  c.use_vspm = !f.no_vspm;
  return c;
}

unsigned resolve_threads(unsigned flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("SSHNET_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SSHNET_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

ordered_json parse_ordered(const std::string& s) { return ordered_json::parse(s); }

void print_report(std::ostream& out, const RetrievalReport& r, bool pretty) {
  if (pretty) {
    out << report_table(std::span<const RetrievalReport>(&r, 1));
  } else {
    out << report_to_json(r) << "\n";
  }
}

// --- subcommands ------------------------------------------------------------

struct SynthArgs {
  std::size_t images = 16;
  std::size_t captions = 5;
  std::uint64_t seed = 0;
  std::string dims = "small";
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  cfg.images = a.images;
  cfg.captions_per_image = a.captions;
  cfg.seed = a.seed;
  cfg.dims = a.dims == "paper" ? FeatureDims::paper() : FeatureDims::small();
  const Manifest m = synth_dataset(a.out, cfg);
  ordered_json j = {{"dataset", m.dataset},
                    {"images", m.image_count},
                    {"sentences", m.sentence_count},
                    {"seed", a.seed},
                    {"manifest", (std::filesystem::path(a.out) / "manifest.json").string()}};
  out << j.dump(2) << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string mode = "region";
  std::string out;
  TrainConfig cfg;
  ModelFlags model;
  bool quiet = false;
};

int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  a.cfg.validate();
  const Dataset ds = load_dataset(a.data);
  std::vector<FeatureSource> sources;
  if (a.mode == "hybrid") {
    sources = {FeatureSource::region, FeatureSource::grid};
  } else {
    sources = {feature_source_from_string(a.mode)};
  }
  ordered_json summary = {{"mode", a.mode}, {"epochs", a.cfg.epochs}, {"seed", a.cfg.seed}};
  std::vector<Checkpoint> cks;
  for (FeatureSource src : sources) {
    const ModelConfig mc = model_config(a.model, ds.dims, src);
    TrainResult r = train(ds, mc, a.cfg, [&](std::size_t epoch, double loss) {
      if (!a.quiet) err << to_string(src) << " epoch " << epoch << " loss " << loss << "\n";
    });
    summary["loss_history"][to_string(src)] = r.epoch_loss;
    cks.push_back({std::move(r.model), a.cfg, std::move(r.epoch_loss)});
  }
  if (cks.size() == 2) {
    save_hybrid_checkpoint(a.out, cks[0], cks[1]);
  } else {
    save_checkpoint(a.out, cks[0]);
  }
  summary["checkpoint"] = a.out;
  out << summary.dump(2) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string mode = "region";
  std::uint64_t seed = 0;
  std::size_t folds = 1;
  std::string embeddings_out;
  ModelFlags model;
  bool pretty = false;
  unsigned threads = 0;
};

RetrievalReport evaluate_sim(const SimilarityMatrix& sim, std::size_t folds, const std::string& mode) {
  return folds > 1 ? fivefold_eval(sim, folds, mode) : evaluate(sim, mode);
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const unsigned threads = resolve_threads(a.threads);
  const Dataset ds = load_dataset(a.data);
  std::vector<ModelParams> models;
  std::string mode;
  if (a.ckpt.empty()) {
    // Untrained model drawn from the seed.
    const std::vector<FeatureSource> sources =
        a.mode == "hybrid" ? std::vector{FeatureSource::region, FeatureSource::grid}
                           : std::vector{feature_source_from_string(a.mode)};
    for (FeatureSource src : sources) {
      Rng rng(a.seed);
      models.push_back(ModelParams::init(model_config(a.model, ds.dims, src), rng));
    }
    mode = a.mode;
  } else if (is_hybrid_checkpoint(a.ckpt)) {
    models.push_back(load_checkpoint(std::filesystem::path(a.ckpt) / "region").model);
    models.push_back(load_checkpoint(std::filesystem::path(a.ckpt) / "grid").model);
    mode = "hybrid";
  } else {
    models.push_back(load_checkpoint(a.ckpt).model);
    mode = to_string(models.front().config.source);
  }
  std::vector<SimilarityMatrix> sims;
  for (const ModelParams& m : models) {
    const EmbeddingTable t = embed_dataset(ds, m, threads);
    if (!a.embeddings_out.empty()) {
      save_embeddings(models.size() == 1 ? std::filesystem::path(a.embeddings_out)
                                         : std::filesystem::path(a.embeddings_out) / to_string(t.source),
                      t);
    }
    sims.push_back(similarity_matrix(t, threads));
  }
  if (sims.size() == 1) {
    print_report(out, evaluate_sim(sims[0], a.folds, mode), a.pretty);
    return kExitOk;
  }
  if (a.folds > 1) throw ConfigError("eval: --folds is not supported for hybrid rank fusion");
  if (a.pretty) {
    const RetrievalReport rows[] = {evaluate(sims[0], "region"), evaluate(sims[1], "grid"),
                                    ensemble_eval(sims[0], sims[1], mode)};
    out << report_table(rows);
  } else {
    print_report(out, ensemble_eval(sims[0], sims[1], mode), false);
  }
  return kExitOk;
}

struct EnsembleArgs {
  std::string data;
  std::string ckpt_a;
  std::string ckpt_b;
  bool pretty = false;
  unsigned threads = 0;
};

int cmd_ensemble(const EnsembleArgs& a, std::ostream& out) {
  const unsigned threads = resolve_threads(a.threads);
  const Dataset ds = load_dataset(a.data);
  const ModelParams ma = load_checkpoint(a.ckpt_a).model;
  const ModelParams mb = load_checkpoint(a.ckpt_b).model;
  const SimilarityMatrix sa = similarity_matrix(embed_dataset(ds, ma, threads), threads);
  const SimilarityMatrix sb = similarity_matrix(embed_dataset(ds, mb, threads), threads);
  if (a.pretty) {
    const RetrievalReport rows[] = {evaluate(sa, to_string(ma.config.source)), evaluate(sb, to_string(mb.config.source)),
                                    ensemble_eval(sa, sb, "ensemble")};
    out << report_table(rows);
  } else {
    out << report_to_json(ensemble_eval(sa, sb, "ensemble")) << "\n";
  }
  return kExitOk;
}

struct BenchArgs {
  std::string mode = "both";
  std::size_t gallery_images = 1000;
  std::size_t captions = 5;
  std::size_t query_images = 8;
  BenchConfig precomputed{1000, 3, 5, 10};
  BenchConfig recompute{100, 3, 5, 10};
  std::uint64_t seed = 0;
  std::string ckpt;
  ModelFlags model;
};

Tensor random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    auto r = t.row(i);
    double norm = 0.0;
    for (double& v : r) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : r) v /= norm;
  }
  return t;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  ModelParams model;
  FeatureDims dims = a.model.dims == "small" ? FeatureDims::small() : FeatureDims::paper();
  if (!a.ckpt.empty()) {
    // Query features must match the checkpoint; --dims selects them.
    model = load_checkpoint(a.ckpt).model;
  } else {
    Rng rng(a.seed);
    model = ModelParams::init(model_config(a.model, dims, FeatureSource::region), rng);
  }
  SynthConfig sc;
  sc.images = std::max<std::size_t>(2, a.query_images);
  sc.captions_per_image = 1;
  sc.seed = a.seed;
  sc.dims = dims;
  std::vector<FeatureBundle> queries = generate_synthetic(sc).dataset.images;
  queries.resize(a.query_images);
  // The gallery's content does not change the per-query cost.
  Rng rng(a.seed ^ 0xB5ULL);
  const Tensor gallery = random_unit_rows(a.gallery_images * a.captions, model.config.embed_dim, rng);

  ordered_json j = {{"gallery_sentences", gallery.dim(0)}, {"embed_dim", model.config.embed_dim}};
  std::optional<double> pre, rec;
  if (a.mode == "precomputed" || a.mode == "both") {
    Tensor q({queries.size(), model.config.embed_dim});
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const Tensor e = embed_image(queries[i], model);
      std::copy(e.data().begin(), e.data().end(), q.row(i).begin());
    }
    const BenchResult r = bench_precomputed(q, gallery, a.precomputed);
    if (r.warning) err << "warning: precomputed: " << *r.warning << "\n";
    j["precomputed"] = parse_ordered(bench_to_json(r));
    pre = r.kpps;
  }
  if (a.mode == "recompute" || a.mode == "both") {
    const BenchResult r = bench_recompute(queries, model, gallery, a.recompute);
    if (r.warning) err << "warning: recompute: " << *r.warning << "\n";
    j["recompute"] = parse_ordered(bench_to_json(r));
    rec = r.kpps;
  }
  if (pre && rec) j["speedup"] = *pre / *rec;
  out << j.dump(2) << "\n";
  return kExitOk;
}

struct GradArgs {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tol = 1e-4;
  double margin = 0.2;
  std::size_t images = 4;
  ModelFlags model;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  const std::string preset = a.model.dims == "auto" ? "small" : a.model.dims;
  const FeatureDims dims = preset == "paper" ? FeatureDims::paper() : FeatureDims::small();
  SynthConfig sc;
  sc.images = std::max<std::size_t>(2, a.images);
  sc.captions_per_image = 1;
  sc.seed = a.seed;
  sc.dims = dims;
  const Dataset ds = generate_synthetic(sc).dataset;
  ModelFlags mf = a.model;
  mf.dims = preset;
  const LossGradCheck r = full_loss_gradcheck(ds, model_config(mf, dims, FeatureSource::region), a.seed, a.margin,
                                              a.eps, a.tol, a.images);
  ordered_json j = {{"passed", r.report.passed},
                    {"max_rel_err", r.report.max_rel_err},
                    {"max_abs_err", r.report.max_abs_err},
                    {"worst", r.report.worst_param_path},
                    {"coordinates", r.report.coordinates},
                    {"tolerance", r.report.tolerance},
                    {"eps", a.eps},
                    {"loss", r.loss},
                    {"kink_slack", r.kink_slack}};
  out << j.dump(2) << "\n";
  return r.report.passed ? kExitOk : kExitRuntime;
}

struct SelfCheck {
  std::string name;
  bool passed;
  std::string detail;
};

std::vector<SelfCheck> run_selfchecks(std::uint64_t seed) {
  std::vector<SelfCheck> out;
  Rng rng(seed);
  auto record = [&](std::string name, bool ok, std::string detail = {}) {
    out.push_back({std::move(name), ok, std::move(detail)});
  };

  {
    Tensor t({3, 5});
    for (auto& v : t.data()) v = rng.normal();
    const auto bytes = encode_tensor(t, DType::f64);
    record("tensor-roundtrip", encode_tensor(decode_tensor(bytes), DType::f64) == bytes);
  }

  SynthConfig sc;
  sc.images = 4;
  sc.seed = seed;
  const Dataset ds = generate_synthetic(sc).dataset;
  const ModelConfig mc = ModelConfig::small().adapted_to(ds.dims);
  const ModelParams m = ModelParams::init(mc, rng);
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(mc.embed_dim));
    const double lo = 1.0 / (1.0 + std::exp(bound)), hi = 1.0 / (1.0 + std::exp(-bound));
    bool ok = true;
    for (const FeatureBundle& b : ds.images) {
      const VsemOutput v = vsem_forward(b.region_feats, b.seg_feat, m.vsem);
      for (double a : v.alphas.data()) ok = ok && a > lo && a < hi;
    }
    record("salience-bounds", ok);
  }
  {
    double worst = 0.0;
    for (const FeatureBundle& b : ds.images) {
      const VspmOutput v = vspm_forward(b.region_feats, b.seg_map, m.vspm);
      for (std::size_t i = 0; i < v.betas.dim(0); ++i) {
        double s = 0.0;
        for (double x : v.betas.row(i)) s += x;
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    record("attention-rows", worst <= 1e-9, "max |sum - 1| = " + std::to_string(worst));
  }
  {
    bool ok = true;
    for (std::size_t n = 1; n <= mc.gpo_table_size; ++n) {
      const Tensor w = gpo_weights(m.visual_gpo, n);
      double s = 0.0;
      for (double x : w.data()) s += x;
      ok = ok && std::abs(s - 1.0) <= 1e-9;
    }
    record("gpo-weights", ok);
  }
  {
    const EmbeddingTable t = embed_dataset(ds, m);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.images.dim(0); ++i) worst = std::max(worst, std::abs(l2_norm(t.images.row(i)) - 1));
    for (std::size_t j = 0; j < t.sentences.dim(0); ++j)
      worst = std::max(worst, std::abs(l2_norm(t.sentences.row(j)) - 1));
    record("unit-embeddings", worst <= 1e-9);
    const SimilarityMatrix sim = similarity_matrix(t);
    double prev = -1.0;
    bool monotone = true;
    for (std::size_t k = 1; k <= sim.sentences(); ++k) {
      const double r = recall_at_k(sim, k, Direction::i2s);
      monotone = monotone && r >= prev;
      prev = r;
    }
    record("recall-monotone", monotone && prev == 100.0);
    const RetrievalReport r = evaluate(sim);
    record("rsum", std::abs(r.rsum - rsum(r)) <= 1e-9);
  }
  return out;
}

int cmd_selfcheck(std::uint64_t seed, std::ostream& out) {
  bool all = true;
  for (const SelfCheck& c : run_selfchecks(seed)) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) out << " (" << c.detail << ")";
    out << "\n";
    all = all && c.passed;
  }
  return all ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image-sentence retrieval with semantic-spatial self-highlighting", "sshnet"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* c_synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  c_synth->add_option("--images", synth.images, "Number of images")->check(CLI::PositiveNumber);
  c_synth->add_option("--captions", synth.captions, "Captions per image")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--dims", synth.dims, "Feature dimensions")->check(CLI::IsMember({"small", "paper"}));
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "Train a model and write a checkpoint");
  c_train->add_option("--data", tr.data, "Dataset directory or manifest")->required();
  c_train->add_option("--mode", tr.mode, "Visual source")->check(CLI::IsMember({"region", "grid", "hybrid"}));
  c_train->add_option("--out", tr.out, "Checkpoint directory")->required();
  c_train->add_option("--epochs", tr.cfg.epochs, "Epochs");
  c_train->add_option("--seed", tr.cfg.seed, "Random seed");
  c_train->add_option("--margin", tr.cfg.margin, "Triplet margin");
  c_train->add_option("--lr", tr.cfg.lr, "Learning rate");
  c_train->add_option("--weight-decay", tr.cfg.weight_decay, "Decoupled weight decay");
  c_train->add_option("--batch-size", tr.cfg.batch_size, "Images per batch");
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");
  add_model_flags(c_train, tr.model);

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint (or a seed-initialised model)");
  c_eval->add_option("--data", ev.data, "Dataset directory or manifest")->required();
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint directory; omit to evaluate an untrained model");
  c_eval->add_option("--mode", ev.mode, "Visual source without --ckpt")
      ->check(CLI::IsMember({"region", "grid", "hybrid"}));
  c_eval->add_option("--seed", ev.seed, "Initialisation seed without --ckpt");
  c_eval->add_option("--folds", ev.folds, "Average over this many contiguous folds")->check(CLI::PositiveNumber);
  c_eval->add_option("--embeddings-out", ev.embeddings_out, "Also write the embedding table here");
  c_eval->add_flag("--pretty", ev.pretty, "Print a table instead of JSON");
  c_eval->add_option("--threads", ev.threads, "Worker threads (default: SSHNET_THREADS or 1)");
  add_model_flags(c_eval, ev.model);

  EnsembleArgs en;
  CLI::App* c_ens = app.add_subcommand("ensemble-eval", "Rank-average two checkpoints");
  c_ens->add_option("--data", en.data, "Dataset directory or manifest")->required();
  c_ens->add_option("--ckpt-a", en.ckpt_a, "First checkpoint")->required();
  c_ens->add_option("--ckpt-b", en.ckpt_b, "Second checkpoint")->required();
  c_ens->add_flag("--pretty", en.pretty, "Print a table instead of JSON");
  c_ens->add_option("--threads", en.threads, "Worker threads (default: SSHNET_THREADS or 1)");

  BenchArgs be;
  be.model.dims = "paper";
  CLI::App* c_bench = app.add_subcommand("bench", "Query throughput with cached vs recomputed image embeddings");
  c_bench->add_option("--mode", be.mode, "Which benchmark")->check(CLI::IsMember({"precomputed", "recompute", "both"}));
  c_bench->add_option("--gallery-images", be.gallery_images, "Images behind the cached sentence table")
      ->check(CLI::PositiveNumber);
  c_bench->add_option("--captions", be.captions, "Sentences per gallery image")->check(CLI::PositiveNumber);
  c_bench->add_option("--query-images", be.query_images, "Distinct raw query images")->check(CLI::PositiveNumber);
  c_bench->add_option("--queries", be.precomputed.queries, "Queries per precomputed trial")->check(CLI::PositiveNumber);
  c_bench->add_option("--recompute-queries", be.recompute.queries, "Queries per recompute trial")
      ->check(CLI::PositiveNumber);
  c_bench->add_option("--trials", be.precomputed.trials, "Timed trials")->check(CLI::PositiveNumber);
  c_bench->add_option("--warmup", be.precomputed.warmup, "Untimed warmup queries");
  c_bench->add_option("--seed", be.seed, "Random seed");
  c_bench->add_option("--ckpt", be.ckpt, "Benchmark a trained checkpoint instead of a fresh model");
  add_model_flags(c_bench, be.model);

  GradArgs gc;
  CLI::App* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
  c_grad->add_option("--seed", gc.seed, "Random seed");
  c_grad->add_option("--eps", gc.eps, "Central difference step");
  c_grad->add_option("--tol", gc.tol, "Relative error tolerance");
  c_grad->add_option("--images", gc.images, "Batch size")->check(CLI::Range(2, 64));
  c_grad->add_option("--margin", gc.margin, "Triplet margin");
  add_model_flags(c_grad, gc.model);

  std::uint64_t self_seed = 0;
  CLI::App* c_self = app.add_subcommand("selfcheck", "Quick invariant checks");
  c_self->add_option("--seed", self_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*c_synth) return cmd_synth(synth, out);
    if (*c_train) return cmd_train(tr, out, err);
    if (*c_eval) return cmd_eval(ev, out);
    if (*c_ens) return cmd_ensemble(en, out);
    if (*c_bench) {
      be.recompute.trials = be.precomputed.trials;
      be.recompute.warmup = be.precomputed.warmup;
      return cmd_bench(be, out, err);
    }
    if (*c_grad) return cmd_gradcheck(gc, out);
    if (*c_self) return cmd_selfcheck(self_seed, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace sshnet
