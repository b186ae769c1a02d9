// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/embedder.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "sshnet/errors.hpp"
#include "sshnet/init.hpp"
#include "sshnet/numerics.hpp"
#include "sshnet/parallel.hpp"

namespace sshnet {

using nlohmann::json;

const char* to_string(FeatureSource s) { return s == FeatureSource::region ? "region" : "grid"; }

FeatureSource feature_source_from_string(const std::string& s) {
  if (s == "region") return FeatureSource::region;
  if (s == "grid") return FeatureSource::grid;
  throw ConfigError("unknown feature source '" + s + "' (expected region or grid)");
}

ModelConfig ModelConfig::small() {
  ModelConfig c;
  c.embed_dim = 32;
  c.input_dim = 64;
  c.seg_classes = 16;
  c.word_dim = 48;
  c.pos_dim = 8;
  c.pos_channels = 4;
  c.conv_kernel = 4;
  c.conv_stride = 4;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "small") return small();
  throw ConfigError("unknown dims preset '" + name + "' (expected small or paper)");
}

ModelConfig ModelConfig::adapted_to(const FeatureDims& dims) const {
  ModelConfig c = *this;
  c.input_dim = source == FeatureSource::region ? dims.region_dim : dims.grid_dim;
  c.seg_classes = dims.seg_classes;
  c.word_dim = dims.word_dim;
  return c;
}

std::string model_config_to_json(const ModelConfig& c) {
  const json j = {
      {"source", to_string(c.source)},
      {"embed_dim", c.embed_dim},
      {"input_dim", c.input_dim},
      {"seg_classes", c.seg_classes},
      {"word_dim", c.word_dim},
      {"pos_dim", c.pos_dim},
      {"pos_channels", c.pos_channels},
      {"conv_kernel", c.conv_kernel},
      {"conv_stride", c.conv_stride},
      {"lambda", c.lambda},
      {"salience", to_string(c.salience)},
      {"salience_scale_dim", c.salience_scale_dim},
      {"gpo_table_size", c.gpo_table_size},
      {"shared_gpo", c.shared_gpo},
      {"use_vsem", c.use_vsem},
      {"use_vspm", c.use_vspm},
  };
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.source = feature_source_from_string(j.at("source").get<std::string>());
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.seg_classes = j.at("seg_classes").get<std::size_t>();
    c.word_dim = j.at("word_dim").get<std::size_t>();
    c.pos_dim = j.at("pos_dim").get<std::size_t>();
    c.pos_channels = j.at("pos_channels").get<std::size_t>();
    c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
    c.conv_stride = j.at("conv_stride").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.salience = salience_mode_from_string(j.at("salience").get<std::string>());
    c.salience_scale_dim = j.at("salience_scale_dim").get<double>();
    c.gpo_table_size = j.at("gpo_table_size").get<std::size_t>();
    c.shared_gpo = j.at("shared_gpo").get<bool>();
    c.use_vsem = j.at("use_vsem").get<bool>();
    c.use_vspm = j.at("use_vspm").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

GpoParams GpoParams::init(std::string name, std::size_t size) {
  if (size < 1) throw ConfigError("gpo: table size must be >= 1");
  return {zeros(std::move(name), {size})};
}

Tensor gpo_weights(const GpoParams& gpo, std::size_t n) {
  Graph g(false);
  return ops::interpolate_weights(g.param(gpo.table), n).value();
}

Var gpo_pool(Graph& g, Var rows, const GpoParams& gpo) {
  if (rows.shape().size() != 2) throw DimensionError("gpo_pool: rows must be [n x D]");
  return ops::rank_weighted_pool(rows, ops::interpolate_weights(g.param(gpo.table), rows.shape()[0]));
}

Tensor gpo_pool(const Tensor& rows, const GpoParams& gpo) {
  Graph g(false);
  return gpo_pool(g, g.constant(rows), gpo).value();
}

Tensor gpo_pool(const Tensor& rows, const Tensor& weights) {
  Graph g(false);
  return ops::rank_weighted_pool(g.constant(rows), g.constant(weights)).value();
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  if (cfg.embed_dim < 1 || cfg.input_dim < 1 || cfg.word_dim < 1 || cfg.seg_classes < 1) {
    throw ConfigError("model: all dimensions must be >= 1");
  }
  if (cfg.salience_scale_dim < 0.0) throw ConfigError("model: salience scale dimension must be >= 0");
  ModelParams m;
  m.config = cfg;
  const std::size_t d = cfg.embed_dim;
  m.vsem = VsemParams::init(d, cfg.input_dim, cfg.seg_classes, rng);
  m.vspm = VspmParams::init(d, cfg.input_dim, cfg.seg_classes, cfg.pos_dim, cfg.pos_channels, cfg.conv_kernel,
                            cfg.conv_stride, cfg.lambda, rng);
  m.region_proj = linear_weight("embed.region_proj", d, cfg.input_dim, rng);
  m.fuse_weight = linear_weight("embed.fuse.weight", d, 2 * d, rng);
  m.fuse_bias = zeros("embed.fuse.bias", {d});
  m.text_weight = linear_weight("text.fc.weight", d, cfg.word_dim, rng);
  m.text_bias = zeros("text.fc.bias", {d});
  m.visual_gpo = GpoParams::init("gpo.visual", cfg.gpo_table_size);
  m.fused_gpo = GpoParams::init("gpo.fused", cfg.gpo_table_size);
  m.seg_gpo = GpoParams::init("gpo.seg", cfg.gpo_table_size);
  m.text_gpo = GpoParams::init("gpo.text", cfg.gpo_table_size);
  return m;
}

ParamList ModelParams::params() {
  ParamList out = vsem.params();
  const ParamList sp = vspm.params();
  out.insert(out.end(), sp.begin(), sp.end());
  for (Parameter* p : {&region_proj, &fuse_weight, &fuse_bias, &text_weight, &text_bias, &visual_gpo.table}) {
    out.push_back(p);
  }
  if (!config.shared_gpo) {
    out.push_back(&fused_gpo.table);
    out.push_back(&seg_gpo.table);
  }
  out.push_back(&text_gpo.table);
  return out;
}

std::vector<const Parameter*> ModelParams::params() const {
  const ParamList ps = const_cast<ModelParams*>(this)->params();
  return {ps.begin(), ps.end()};
}

Tensor visual_rows(const FeatureBundle& b, FeatureSource source) {
  if (source == FeatureSource::region) return b.region_feats;
  const Tensor& g = b.grid_feats;
  if (g.rank() != 3) throw DimensionError("grid features must be [H x W x C], got " + shape_string(g.shape()));
  return g.reshaped({g.dim(0) * g.dim(1), g.dim(2)});
}

Var fuse_visual(Graph& g, Var projected, Var enhanced, Var spatial, Var seg_embed, const ModelParams& m) {
  const Var semantic = ops::add_bias(ops::linear(ops::concat_cols(enhanced, spatial), g.param(m.fuse_weight)),
                                     g.param(m.fuse_bias));
  if (m.config.shared_gpo) {
    const Var parts[] = {projected, semantic, seg_embed};
    return ops::l2_normalize(gpo_pool(g, ops::concat_rows(parts), m.visual_gpo));
  }
  const std::size_t d = seg_embed.shape().at(0);
  const Var pooled = ops::add(ops::add(gpo_pool(g, projected, m.visual_gpo), gpo_pool(g, semantic, m.fused_gpo)),
                              gpo_pool(g, ops::reshape(seg_embed, {1, d}), m.seg_gpo));
  return ops::l2_normalize(pooled);
}

ImageVars embed_image(Graph& g, Var visual, Var seg_feat, Var position_tensor, const ModelParams& m) {
  const ModelConfig& c = m.config;
  if (visual.shape().size() != 2 || visual.shape()[1] != c.input_dim) {
    throw DimensionError("embed_image: visual rows " + shape_string(visual.shape()) + " do not match input dim " +
                         std::to_string(c.input_dim));
  }
  const std::size_t k = visual.shape()[0];
  if (c.visual_rows(k) > c.gpo_table_size && c.shared_gpo) {
    throw ConfigError("embed_image: " + std::to_string(c.visual_rows(k)) + " visual rows exceed the GPO table size " +
                      std::to_string(c.gpo_table_size));
  }
  ImageVars out;
  const Var zeros_kd = g.constant(Tensor({k, c.embed_dim}));
  if (c.use_vsem) {
    out.vsem = vsem_forward(g, visual, seg_feat, m.vsem, {c.salience, c.salience_scale_dim});
  } else {
    out.vsem.seg_embed = pool_segmentation(g, seg_feat, m.vsem);
    out.vsem.enhanced = zeros_kd;
  }
  if (c.use_vspm) {
    out.vspm = vspm_forward(g, visual, position_tensor, m.vspm);
  } else {
    out.vspm.spatial = zeros_kd;
  }
  const Var projected = ops::linear(visual, g.param(m.region_proj));
  out.embedding = fuse_visual(g, projected, out.vsem.enhanced, out.vspm.spatial, out.vsem.seg_embed, m);
  return out;
}

Var embed_image(Graph& g, const FeatureBundle& b, const ModelParams& m) {
  const ModelConfig& c = m.config;
  const Var pos = c.use_vspm ? g.constant(build_position_tensor(b.seg_map, c.pos_dim, c.seg_classes))
                             : g.constant(Tensor());
  return embed_image(g, g.constant(visual_rows(b, c.source)), g.constant(b.seg_feat), pos, m).embedding;
}

Var embed_text(Graph& g, Var word_feats, const ModelParams& m) {
  const Shape& s = word_feats.shape();
  if (s.size() != 2 || s[0] < 1 || s[1] != m.config.word_dim) {
    throw DimensionError("embed_text: words must be [N x " + std::to_string(m.config.word_dim) + "] with N >= 1, got " +
                         shape_string(s));
  }
  const Var words = ops::add_bias(ops::linear(word_feats, g.param(m.text_weight)), g.param(m.text_bias));
  return ops::l2_normalize(gpo_pool(g, words, m.text_gpo));
}

Tensor embed_image(const FeatureBundle& b, const ModelParams& m) {
  Graph g(false);
  return embed_image(g, b, m).value();
}

Tensor embed_text(const Tensor& word_feats, const ModelParams& m) {
  Graph g(false);
  return embed_text(g, g.constant(word_feats), m).value();
}

JointEmbedding EmbeddingTable::image(std::size_t i) const {
  const auto r = images.row(i);
  return {Tensor({r.size()}, std::vector<double>(r.begin(), r.end())), Modality::image, i};
}

JointEmbedding EmbeddingTable::sentence(std::size_t j) const {
  const auto r = sentences.row(j);
  return {Tensor({r.size()}, std::vector<double>(r.begin(), r.end())), Modality::sentence, j};
}

EmbeddingTable embed_dataset(const Dataset& ds, const ModelParams& m, unsigned threads) {
  const std::size_t d = m.config.embed_dim;
  EmbeddingTable t;
  t.source = m.config.source;
  t.images = Tensor({ds.images.size(), d});
  t.sentences = Tensor({ds.text.sentences.size(), d});
  t.sentence_images = ds.sentence_images();
  parallel_for(ds.images.size(), threads, [&](std::size_t i) {
    const Tensor e = embed_image(ds.images[i], m);
    std::copy(e.data().begin(), e.data().end(), t.images.row(i).begin());
  });
  parallel_for(ds.text.sentences.size(), threads, [&](std::size_t j) {
    const Tensor e = embed_text(ds.text.sentences[j].word_feats, m);
    std::copy(e.data().begin(), e.data().end(), t.sentences.row(j).begin());
  });
  return t;
}

void save_embeddings(const std::filesystem::path& dir, const EmbeddingTable& t) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "images.3sht", t.images, DType::f64);
  write_tensor(dir / "sentences.3sht", t.sentences, DType::f64);
  json j = {{"source", to_string(t.source)},
            {"images", {{"file", "images.3sht"}, {"modality", "image"}, {"count", t.images.dim(0)}}},
            {"sentences", {{"file", "sentences.3sht"}, {"modality", "sentence"}, {"count", t.sentences.dim(0)}}},
            {"sentence_images", t.sentence_images}};
  std::ofstream out(dir / "embeddings.json", std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("could not write " + (dir / "embeddings.json").string());
}

EmbeddingTable load_embeddings(const std::filesystem::path& dir) {
  std::ifstream in(dir / "embeddings.json", std::ios::binary);
  if (!in) throw ValidationError("missing file: " + (dir / "embeddings.json").string());
  EmbeddingTable t;
  try {
    const json j = json::parse(in);
    t.source = feature_source_from_string(j.at("source").get<std::string>());
    t.images = read_tensor(dir / j.at("images").at("file").get<std::string>());
    t.sentences = read_tensor(dir / j.at("sentences").at("file").get<std::string>());
    t.sentence_images = j.at("sentence_images").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("embeddings.json: ") + e.what());
  }
  if (t.images.rank() != 2 || t.sentences.rank() != 2 || t.sentence_images.size() != t.sentences.dim(0)) {
    throw FormatError("embeddings.json: table shapes do not match the sidecar");
  }
  return t;
}

}  // namespace sshnet
