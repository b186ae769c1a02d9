// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "sshnet/featureio.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "sshnet/errors.hpp"

namespace sshnet {
namespace {

constexpr std::uint8_t kMagic[4] = {'3', 'S', 'H', 'T'};
constexpr std::size_t kHeaderBytes = 12;

std::size_t dtype_bytes(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u16: return 2;
  }
  return 0;
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  if (t.rank() > 255) throw FormatError("ndim: rank " + std::to_string(t.rank()) + " exceeds 255");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 * t.rank() + dtype_bytes(dtype) * t.size());
  for (std::uint8_t c : kMagic) out.push_back(c);
  out.push_back(kTensorFormatVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  out.insert(out.end(), 5, 0);
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) {
    switch (dtype) {
      case DType::f32: put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case DType::f64: put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); break;
      case DType::u16:
        if (!(v >= 0.0 && v <= 65535.0) || v != std::floor(v)) {
          throw FormatError("payload: value " + std::to_string(v) + " is not representable as u16");
        }
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(v));
        break;
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, DType* dtype_out) {
  if (bytes.size() < kHeaderBytes) throw FormatError("header: file shorter than 12-byte header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("magic: expected \"3SHT\"");
  if (bytes[4] != kTensorFormatVersion) {
    throw FormatError("version: unsupported format version " + std::to_string(bytes[4]));
  }
  if (bytes[5] > 2) throw FormatError("dtype: unknown dtype code " + std::to_string(bytes[5]));
  const auto dtype = static_cast<DType>(bytes[5]);
  const std::size_t ndim = bytes[6];
  for (std::size_t i = 7; i < kHeaderBytes; ++i) {
    if (bytes[i] != 0) throw FormatError("reserved: header bytes 7..11 must be zero");
  }
  if (bytes.size() < kHeaderBytes + 8 * ndim) throw FormatError("dims: file truncated inside dims");
  Shape shape(ndim);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const auto d = get_le<std::uint64_t>(bytes.data() + kHeaderBytes + 8 * i);
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) {
      throw FormatError("dims: element count overflows 64 bits");
    }
    count *= d;
    shape[i] = static_cast<std::size_t>(d);
  }
  const std::size_t elem = dtype_bytes(dtype);
  if (count > std::numeric_limits<std::uint64_t>::max() / elem) {
    throw FormatError("dims: payload size overflows 64 bits");
  }
  const std::size_t offset = kHeaderBytes + 8 * ndim;
  const std::uint64_t need = count * elem;
  const std::size_t have = bytes.size() - offset;
  if (have < need) {
    throw FormatError("payload short: expected " + std::to_string(need) + " bytes, found " + std::to_string(have));
  }
  if (have > need) throw FormatError("payload long: " + std::to_string(have - need) + " trailing bytes");

  std::vector<double> data(static_cast<std::size_t>(count));
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < data.size(); ++i, p += elem) {
    switch (dtype) {
      case DType::f32: data[i] = std::bit_cast<float>(get_le<std::uint32_t>(p)); break;
      case DType::f64: data[i] = std::bit_cast<double>(get_le<std::uint64_t>(p)); break;
      case DType::u16: data[i] = get_le<std::uint16_t>(p); break;
    }
  }
  if (dtype_out) *dtype_out = dtype;
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path, DType* dtype_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open tensor file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes, dtype_out);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

FeatureDims FeatureDims::small() {
  FeatureDims d;
  d.regions = 6;
  d.region_dim = 64;
  d.grid_h = 4;
  d.grid_w = 4;
  d.grid_dim = 64;
  d.seg_h = 4;
  d.seg_w = 4;
  d.seg_classes = 16;
  d.map_h = 16;
  d.map_w = 16;
  d.word_dim = 48;
  return d;
}

std::vector<std::size_t> Dataset::sentence_images() const {
  std::vector<std::size_t> out;
  out.reserve(text.sentences.size());
  for (const auto& s : text.sentences) out.push_back(s.image_index);
  return out;
}

namespace {

using nlohmann::json;

json dims_to_json(const FeatureDims& d) {
  return json{{"K", d.regions},           {"D_l", d.region_dim},   {"grid_h", d.grid_h},
              {"grid_w", d.grid_w},        {"grid_dim", d.grid_dim}, {"seg_h", d.seg_h},
              {"seg_w", d.seg_w},          {"C_s", d.seg_classes},  {"H_I", d.map_h},
              {"W_I", d.map_w},            {"word_dim", d.word_dim}};
}

FeatureDims dims_from_json(const json& j) {
  FeatureDims d;
  d.regions = j.at("K").get<std::size_t>();
  d.region_dim = j.at("D_l").get<std::size_t>();
  d.grid_h = j.at("grid_h").get<std::size_t>();
  d.grid_w = j.at("grid_w").get<std::size_t>();
  d.grid_dim = j.at("grid_dim").get<std::size_t>();
  d.seg_h = j.at("seg_h").get<std::size_t>();
  d.seg_w = j.at("seg_w").get<std::size_t>();
  d.seg_classes = j.at("C_s").get<std::size_t>();
  d.map_h = j.at("H_I").get<std::size_t>();
  d.map_w = j.at("W_I").get<std::size_t>();
  d.word_dim = j.at("word_dim").get<std::size_t>();
  return d;
}

}  // namespace

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["dataset"] = m.dataset;
  j["image_count"] = m.image_count;
  j["sentence_count"] = m.sentence_count;
  j["sentences_per_image"] = m.sentences_per_image;
  j["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  j["dims"] = dims_to_json(m.dims);
  json images = json::array();
  for (const auto& im : m.images) {
    images.push_back({{"id", im.id},
                      {"region_feats", im.region_feats},
                      {"grid_feats", im.grid_feats},
                      {"seg_feat", im.seg_feat},
                      {"seg_map", im.seg_map}});
  }
  j["images"] = std::move(images);
  json sentences = json::array();
  for (const auto& s : m.sentences) {
    sentences.push_back({{"id", s.id}, {"image", s.image}, {"word_feats", s.word_feats}});
  }
  j["sentences"] = std::move(sentences);
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<std::uint32_t>();
    if (m.format_version != kManifestFormatVersion) {
      throw FormatError("manifest: unsupported format_version " + std::to_string(m.format_version));
    }
    m.dataset = j.at("dataset").get<std::string>();
    m.image_count = j.at("image_count").get<std::size_t>();
    m.sentence_count = j.at("sentence_count").get<std::size_t>();
    m.sentences_per_image = j.value("sentences_per_image", std::size_t{5});
    if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
    m.dims = dims_from_json(j.at("dims"));
    for (const auto& im : j.at("images")) {
      m.images.push_back({im.at("id").get<std::size_t>(), im.at("region_feats").get<std::string>(),
                          im.at("grid_feats").get<std::string>(), im.at("seg_feat").get<std::string>(),
                          im.at("seg_map").get<std::string>()});
    }
    for (const auto& s : j.at("sentences")) {
      m.sentences.push_back(
          {s.at("id").get<std::size_t>(), s.at("image").get<std::size_t>(), s.at("word_feats").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (m.images.size() != m.image_count) {
    throw ValidationError("manifest: image_count " + std::to_string(m.image_count) + " but " +
                          std::to_string(m.images.size()) + " images listed");
  }
  if (m.sentences.size() != m.sentence_count) {
    throw ValidationError("manifest: sentence_count " + std::to_string(m.sentence_count) + " but " +
                          std::to_string(m.sentences.size()) + " sentences listed");
  }
  return m;
}

namespace {

void expect_shape(const Tensor& t, const Shape& want, const char* field, const std::string& who) {
  if (t.shape() != want) {
    throw ValidationError(who + ": " + field + " has shape " + shape_string(t.shape()) + ", expected " +
                          shape_string(want));
  }
  if (!t.all_finite()) throw ValidationError(who + ": " + field + " contains non-finite values");
}

}  // namespace

void validate_bundle(const FeatureBundle& b, const FeatureDims& d, std::size_t item) {
  const std::string who = "image " + std::to_string(item);
  if (d.regions < 1) throw ValidationError(who + ": K must be >= 1");
  expect_shape(b.region_feats, {d.regions, d.region_dim}, "region_feats", who);
  expect_shape(b.grid_feats, {d.grid_h, d.grid_w, d.grid_dim}, "grid_feats", who);
  expect_shape(b.seg_feat, {d.seg_h, d.seg_w, d.seg_classes}, "seg_feat", who);
  expect_shape(b.seg_map, {d.map_h, d.map_w}, "seg_map", who);
  for (std::size_t i = 0; i < b.seg_map.size(); ++i) {
    const double c = b.seg_map[i];
    if (c < 0.0 || c >= static_cast<double>(d.seg_classes) || c != std::floor(c)) {
      throw ValidationError(who + ": seg_map pixel " + std::to_string(i) + " has category " + std::to_string(c) +
                            " outside [0, " + std::to_string(d.seg_classes) + ")");
    }
  }
}

void validate_sentence(const Sentence& s, const FeatureDims& d, std::size_t image_count, std::size_t item) {
  const std::string who = "sentence " + std::to_string(item);
  if (s.word_feats.rank() != 2 || s.word_feats.dim(0) < 1 || s.word_feats.dim(1) != d.word_dim) {
    throw ValidationError(who + ": word_feats has shape " + shape_string(s.word_feats.shape()) +
                          ", expected [N x " + std::to_string(d.word_dim) + "] with N >= 1");
  }
  if (!s.word_feats.all_finite()) throw ValidationError(who + ": word_feats contains non-finite values");
  if (s.image_index >= image_count) {
    throw ValidationError(who + ": maps to image " + std::to_string(s.image_index) + " but only " +
                          std::to_string(image_count) + " images exist");
  }
}

Manifest write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "sentences");
  Manifest m;
  m.dataset = ds.name;
  m.image_count = ds.images.size();
  m.sentence_count = ds.text.sentences.size();
  m.sentences_per_image = ds.text.sentences_per_image;
  m.seed = ds.seed;
  m.dims = ds.dims;
  char buf[64];
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& b = ds.images[i];
    std::snprintf(buf, sizeof buf, "images/%06zu", i);
    const std::string stem = buf;
    ManifestImage mi{i, stem + "_regions.3sht", stem + "_grid.3sht", stem + "_segfeat.3sht", stem + "_segmap.3sht"};
    write_tensor(dir / mi.region_feats, b.region_feats, DType::f32);
    write_tensor(dir / mi.grid_feats, b.grid_feats, DType::f32);
    write_tensor(dir / mi.seg_feat, b.seg_feat, DType::f32);
    write_tensor(dir / mi.seg_map, b.seg_map, DType::u16);
    m.images.push_back(std::move(mi));
  }
  for (std::size_t i = 0; i < ds.text.sentences.size(); ++i) {
    const auto& s = ds.text.sentences[i];
    std::snprintf(buf, sizeof buf, "sentences/%07zu_words.3sht", i);
    ManifestSentence ms{i, s.image_index, buf};
    write_tensor(dir / ms.word_feats, s.word_feats, DType::f32);
    m.sentences.push_back(std::move(ms));
  }
  std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  f << manifest_to_json(m);
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_or_dir) {
  namespace fs = std::filesystem;
  fs::path manifest_path = manifest_or_dir;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw FormatError("cannot open manifest " + manifest_path.string());
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const Manifest m = manifest_from_json(text);
  const fs::path root = manifest_path.parent_path();

  auto load = [&](const std::string& rel) {
    const fs::path p = root / rel;
    if (!fs::exists(p)) throw ValidationError("missing file: " + p.string());
    return read_tensor(p);
  };

  Dataset ds;
  ds.name = m.dataset;
  ds.dims = m.dims;
  ds.seed = m.seed;
  ds.text.sentences_per_image = m.sentences_per_image;
  ds.images.reserve(m.images.size());
  for (std::size_t i = 0; i < m.images.size(); ++i) {
    const auto& mi = m.images[i];
    FeatureBundle b{load(mi.region_feats), load(mi.grid_feats), load(mi.seg_feat), load(mi.seg_map)};
    validate_bundle(b, ds.dims, i);
    ds.images.push_back(std::move(b));
  }
  ds.text.sentences.reserve(m.sentences.size());
  for (std::size_t i = 0; i < m.sentences.size(); ++i) {
    const auto& ms = m.sentences[i];
    Sentence s{load(ms.word_feats), ms.image};
    validate_sentence(s, ds.dims, ds.images.size(), i);
    ds.text.sentences.push_back(std::move(s));
  }
  return ds;
}

}  // namespace sshnet
