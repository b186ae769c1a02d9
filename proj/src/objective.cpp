// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/objective.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "sshnet/errors.hpp"

namespace sshnet {

using nlohmann::json;

namespace {

// The sampler must not share a stream with weight initialisation.
constexpr std::uint64_t kSamplerSalt = 0x5DEECE66DULL;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError("could not write " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("train: margin must be > 0");
  if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
}

OptimizerState OptimizerState::init(const ParamList& params) {
  OptimizerState s;
  for (const Parameter* p : params) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

void adamw_step(const ParamList& params, OptimizerState& state, double lr, double weight_decay) {
  if (state.m.size() != params.size()) throw ConfigError("adamw: optimizer state does not match parameters");
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) throw TrainingError("non-finite gradient in parameter " + p->name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (m.shape() != p.value.shape()) throw DimensionError("adamw: moment shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * p.value[i]);
    }
  }
}

double triplet_loss(const Tensor& sim, double margin) {
  Graph g(false);
  return ops::triplet_loss(g.constant(sim), margin).value()[0];
}

Var batch_loss(std::span<const Var> images, std::span<const Var> sentences, double margin) {
  if (images.size() != sentences.size()) throw DimensionError("batch_loss: image and sentence counts differ");
  // Embeddings are unit vectors, so cosine is a plain dot product.
  const Var sim = ops::linear(ops::concat_rows(images), ops::concat_rows(sentences));
  return ops::triplet_loss(sim, margin);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t images, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(images);
  for (std::size_t i = 0; i < images; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < images; start += batch_size) {
    const std::size_t end = std::min(images, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.images.size() < 2) throw ConfigError("train: need at least two images");
  Rng init_rng(cfg.seed);
  TrainResult result{ModelParams::init(model_cfg, init_rng), {}};
  ModelParams& model = result.model;
  const ModelConfig& mc = model.config;
  const ParamList params = model.params();
  OptimizerState opt = OptimizerState::init(params);

  std::vector<std::vector<std::size_t>> captions(ds.images.size());
  for (std::size_t j = 0; j < ds.text.sentences.size(); ++j) {
    captions.at(ds.text.sentences[j].image_index).push_back(j);
  }
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (captions[i].empty()) throw ValidationError("train: image " + std::to_string(i) + " has no caption");
  }

  // Inputs that do not change across epochs.
  std::vector<Tensor> visual(ds.images.size()), positions(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    visual[i] = visual_rows(ds.images[i], mc.source);
    if (mc.use_vspm) positions[i] = build_position_tensor(ds.images[i].seg_map, mc.pos_dim, mc.seg_classes);
  }

  Rng sampler(cfg.seed ^ kSamplerSalt);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(ds.images.size(), cfg.batch_size, sampler);
    double total = 0.0;
    for (const auto& batch : batches) {
      for (Parameter* p : params) p->zero_grad();
      Graph g;
      std::vector<Var> imgs, txts;
      for (std::size_t i : batch) {
        const std::size_t j = captions[i][sampler.index(captions[i].size())];
        imgs.push_back(
            embed_image(g, g.constant(visual[i]), g.constant(ds.images[i].seg_feat), g.constant(positions[i]), model)
                .embedding);
        txts.push_back(embed_text(g, g.constant(ds.text.sentences[j].word_feats), model));
      }
      const Var loss = batch_loss(imgs, txts, cfg.margin);
      g.backward(loss);
      adamw_step(params, opt, cfg.lr, cfg.weight_decay);
      total += loss.value()[0];
    }
    const double mean = batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

namespace {

double kink_slack(const Tensor& sim, double margin) {
  const std::size_t b = sim.dim(0);
  double slack = std::numeric_limits<double>::infinity();
  for (int dir = 0; dir < 2; ++dir) {
    for (std::size_t i = 0; i < b; ++i) {
      double top = -std::numeric_limits<double>::infinity(), second = top;
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        const double s = dir == 0 ? sim.at(i, j) : sim.at(j, i);
        if (s > top) {
          second = top;
          top = s;
        } else if (s > second) {
          second = s;
        }
      }
      slack = std::min(slack, std::abs(margin - sim.at(i, i) + top));
      if (b > 2) slack = std::min(slack, top - second);
    }
  }
  return slack;
}

}  // namespace

LossGradCheck full_loss_gradcheck(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed, double margin,
                                  double eps, double tol, std::size_t images) {
  if (images < 2 || images > ds.images.size()) {
    throw ConfigError("gradcheck: need between 2 and " + std::to_string(ds.images.size()) + " images");
  }
  std::vector<std::size_t> caption(images, ds.text.sentences.size());
  for (std::size_t j = ds.text.sentences.size(); j-- > 0;) {
    const std::size_t i = ds.text.sentences[j].image_index;
    if (i < images) caption[i] = j;
  }
  for (std::size_t i = 0; i < images; ++i) {
    if (caption[i] == ds.text.sentences.size()) throw ValidationError("gradcheck: image " + std::to_string(i) + " has no caption");
  }
  Rng rng(seed);
  ModelParams model = ModelParams::init(cfg, rng);
  Tensor sim;
  const LossFn loss = [&](Graph& g) {
    std::vector<Var> imgs, txts;
    for (std::size_t i = 0; i < images; ++i) {
      imgs.push_back(embed_image(g, ds.images[i], model));
      txts.push_back(embed_text(g, g.constant(ds.text.sentences[caption[i]].word_feats), model));
    }
    const Var s = ops::linear(ops::concat_rows(imgs), ops::concat_rows(txts));
    sim = s.value();
    return ops::triplet_loss(s, margin);
  };
  LossGradCheck out;
  {
    Graph g(false);
    out.loss = loss(g).value()[0];
  }
  out.kink_slack = kink_slack(sim, margin);
  out.report = grad_check(loss, model.params(), eps, tol);
  return out;
}

std::string train_config_to_json(const TrainConfig& c) {
  const json j = {{"margin", c.margin},         {"lr", c.lr},         {"weight_decay", c.weight_decay},
                  {"batch_size", c.batch_size}, {"epochs", c.epochs}, {"seed", c.seed}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.margin = j.at("margin").get<double>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (const Parameter* p : ck.model.params()) {
    const std::string file = p->name + ".3sht";
    write_tensor(dir / file, p->value, DType::f64);
    files.push_back({{"name", p->name}, {"file", file}});
  }
  const json j = {{"format_version", 1},
                  {"model", json::parse(model_config_to_json(ck.model.config))},
                  {"train", json::parse(train_config_to_json(ck.train))},
                  {"epochs", ck.loss_history.size()},
                  {"loss_history", ck.loss_history},
                  {"parameters", files}};
  write_text(dir / "checkpoint.json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (is_hybrid_checkpoint(dir)) {
    throw ConfigError("checkpoint " + dir.string() + " is a hybrid checkpoint; load region/ or grid/");
  }
  const std::string text = read_text(dir / "checkpoint.json");
  Checkpoint ck;
  ModelConfig mc;
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw FormatError("checkpoint.json: unsupported format_version");
    ck.train = train_config_from_json(j.at("train").dump());
    ck.loss_history = j.at("loss_history").get<std::vector<double>>();
    mc = model_config_from_json(j.at("model").dump());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint.json: ") + e.what());
  }
  // Shapes come from a fresh init; values from the files.
  Rng rng(0);
  ck.model = ModelParams::init(mc, rng);
  for (Parameter* p : ck.model.params()) {
    Tensor t = read_tensor(dir / (p->name + ".3sht"));
    if (t.shape() != p->value.shape()) {
      throw ValidationError("checkpoint parameter " + p->name + " has shape " + shape_string(t.shape()) +
                            ", expected " + shape_string(p->value.shape()));
    }
    p->value = std::move(t);
  }
  return ck;
}

void save_hybrid_checkpoint(const std::filesystem::path& dir, const Checkpoint& region, const Checkpoint& grid) {
  if (region.model.config.source != FeatureSource::region || grid.model.config.source != FeatureSource::grid) {
    throw ConfigError("hybrid checkpoint needs one region and one grid model");
  }
  save_checkpoint(dir / "region", region);
  save_checkpoint(dir / "grid", grid);
  const json j = {{"format_version", 1}, {"members", {"region", "grid"}}};
  write_text(dir / "hybrid.json", j.dump(2) + "\n");
}

bool is_hybrid_checkpoint(const std::filesystem::path& dir) { return std::filesystem::exists(dir / "hybrid.json"); }

}  // namespace sshnet
